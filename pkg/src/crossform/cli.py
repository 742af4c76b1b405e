"""Command-line entry point: run, sweep, analyze, limiters, verify.

Exit codes: 0 ok, 2 configuration error, 3 divergence, 4 no feasible
operating point, 5 property failure.
"""

import argparse
import cmath
import json
import math
import os
import sys
import time

import yaml

from . import properties, stability
from .forming import DvocParams
from .output import atomic_write, write_run, write_table
from .scenario import ScenarioError, build_world, echo, load_scenario_with_defaults
from .sim import ConfigurationError, simulate
from .sweep import bisect_parameter, bundled_names, parse_values, resolve_scenario, sweep, write_sweep

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_NO_OP, EXIT_PROPERTY = 0, 2, 3, 4, 5
STATUS_EXIT = {"ok": EXIT_OK, "diverged": EXIT_DIVERGED, "no_operating_point": EXIT_NO_OP}


def _config_exit(exc) -> int:
    # a missing pre-fault equilibrium is an infeasible operating point, not a bad file
    return EXIT_NO_OP if "equilibrium" in str(exc) else EXIT_CONFIG


def _err(msg):
    print(f"error: {msg}", file=sys.stderr)


# --- run ----------------------------------------------------------------------


def cmd_run(args) -> int:
    worst = EXIT_OK
    for item in args.scenarios:
        try:
            sc, defaulted = load_scenario_with_defaults(resolve_scenario(item))
            world = build_world(sc, dt=args.dt, t_end=args.t_end)
        except ConfigurationError as exc:
            _err(exc)
            worst = max(worst, _config_exit(exc))
            continue
        result = simulate(world)
        out_dir = os.path.join(args.out, sc.name)
        summary = write_run(out_dir, sc.name, result, echo(sc, defaulted))
        peaks = ", ".join(f"{v['name']} max|i| {v['max_current']:.4f}" for v in summary["inverters"])
        print(f"{sc.name}: {summary['verdict']} in {summary['runtime_s']:.2f} s ({peaks}) -> {out_dir}")
        if result.status != "ok":
            print(f"  {result.message}", file=sys.stderr)
        worst = max(worst, STATUS_EXIT[result.status])
    return worst


# --- sweep --------------------------------------------------------------------


def _axes(args) -> dict:
    axes = {}
    if args.grid:
        with open(args.grid, encoding="utf-8") as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, dict) or not all(isinstance(v, list) for v in data.values()):
            raise ScenarioError(f"{args.grid}: a grid file maps parameter paths to lists of values")
        axes.update(data)
    for spec in args.param or ():
        path, sep, values = spec.partition("=")
        if not sep:
            raise ScenarioError(f"--param {spec!r}: expected PATH=v1,v2,...")
        axes[path.strip()] = parse_values(values)
    return axes


def cmd_sweep(args) -> int:
    try:
        if args.bisect:
            return _bisect(args)
        axes = _axes(args)
        rows = sweep(args.scenarios, axes, jobs=args.jobs, dt=args.dt, t_end=args.t_end)
    except ConfigurationError as exc:
        _err(exc)
        return EXIT_CONFIG
    path = os.path.join(args.out, "sweep.csv")
    write_sweep(path, rows, axes)
    for r in rows:
        point = ", ".join(f"{a}={r[a]}" for a in axes)
        print(f"{r['scenario']} [{point}]: {r['verdict']}")
    print(f"{len(rows)} points -> {path}")
    return EXIT_OK


def _bisect(args) -> int:
    path, _, rng = args.bisect.partition("=")
    lo, _, hi = rng.partition(":")
    if len(args.scenarios) != 1 or not hi:
        raise ScenarioError("--bisect needs one scenario and PATH=LO:HI")
    boundary, seen = bisect_parameter(args.scenarios[0], path, float(lo), float(hi), args.tol, dt=args.dt, t_end=args.t_end)
    write_table(os.path.join(args.out, "bisect.csv"), [path, "settled"], [[v, "true" if ok else "false"] for v, ok in seen])
    print(f"{path}: verdict changes at {boundary:.6g} (+- {args.tol / 2:.2g})")
    return EXIT_OK


# --- analyze ------------------------------------------------------------------


def cmd_power_angle(args) -> int:
    curve = stability.power_angle_curve(args.v_hat, args.v_g, args.x_v, args.x_g, p_star=args.p_star)
    n = args.points
    rows = [[d, curve.p(d)] for d in (-math.pi + 2 * math.pi * k / (n - 1) for k in range(n))]
    path = os.path.join(args.out, "power_angle.csv")
    write_table(path, ["delta [rad]", "p [pu]"], rows)
    eq = stability.equilibria(curve, args.p_star)
    print(f"p_max = {curve.p_max:.6g} pu")
    if eq is None:
        print(f"no equilibrium for p* = {args.p_star:g}")
    else:
        print(f"SEP {eq.stable:.6g} rad, UEP {eq.unstable:.6g} rad")
    print(f"table -> {path}")
    return EXIT_OK


def cmd_equal_area(args) -> int:
    pre, fault, post = (stability.PowerAngleCurve(p) for p in (args.pre, args.fault, args.post))
    report = {"p_star": args.p_star, "p_max": {"pre": args.pre, "fault": args.fault, "post": args.post}}
    sep = stability.equilibria(pre, args.p_star)
    if sep is None:
        _err("the pre-fault curve has no equilibrium for this setpoint")
        return EXIT_NO_OP
    report["sep"] = sep.stable
    report["critical_angle"] = stability.critical_clearing_angle(pre, fault, post, args.p_star)
    report["critical_time"] = stability.critical_clearing_time(pre, fault, post, args.p_star, args.t_j, 2 * math.pi * args.f0)
    if args.delta_c is not None:
        r = stability.equal_area(pre, fault, post, args.p_star, args.delta_c)
        report.update(delta_c=args.delta_c, s_plus=r.s_plus, s_minus=r.s_minus, verdict="stable" if r.stable else "unstable")
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    atomic_write(os.path.join(args.out, "equal_area.json"), text)
    print(text, end="")
    return EXIT_OK


def cmd_dvoc(args) -> int:
    prm = DvocParams(eta=args.eta, alpha=args.alpha, phi=args.phi, p_star=args.p_star, q_star=args.q_star, v_star=args.v_star)
    z_total, v_g = complex(args.z_total), complex(args.v_g)
    eqs = stability.dvoc_equilibria(prm, z_total, v_g, args.i_lim)
    out = []
    for e in eqs:
        lam = abs(e.v_lambda) / abs(e.v_hat)
        c = stability.dvoc_stability_condition(stability.DvocStabilityInputs(
            prm.eta, prm.alpha, prm.phi, prm.p_star, prm.q_star, prm.v_star, abs(e.v_lambda), 1 / z_total, lam * prm.v_star))
        out.append({
            "v_hat": [e.v_hat.real, e.v_hat.imag], "v_lambda_mag": abs(e.v_lambda), "angle": cmath.phase(e.v_hat),
            "saturated": e.saturated, "stable": e.stable, "lhs": c.lhs, "rhs": c.rhs, "condition_satisfied": c.satisfied,
        })
    text = json.dumps({"equilibria": out}, indent=2) + "\n"
    atomic_write(os.path.join(args.out, "dvoc_condition.json"), text)
    print(text, end="")
    if not eqs:
        _err("no fault-on equilibrium")
        return EXIT_NO_OP
    return EXIT_OK


# --- verify / limiters -------------------------------------------------------


def _run_suite(props, args, label) -> int:
    started = time.perf_counter()

    def show(c, secs):
        flag = "PASS" if c.passed else "FAIL"
        print(f"{flag} {c.module:<20} {c.name:<45} measured {c.measured:.3e} tol {c.tolerance:.1e}  {c.detail}")

    results = properties.run_properties(props, seed=args.seed, progress=None if args.quiet else show)
    rows = properties.report_rows(results)
    n_fail = sum(not r["passed"] for r in rows)
    report = {"suite": label, "seed": args.seed, "checks": len(rows), "failures": n_fail, "results": rows}
    atomic_write(os.path.join(args.out, f"{label}.json"), json.dumps(report, indent=2) + "\n")
    write_table(os.path.join(args.out, f"{label}.csv"), list(rows[0]) if rows else ["module"], [list(r.values()) for r in rows])
    print(f"{len(rows) - n_fail}/{len(rows)} checks passed in {time.perf_counter() - started:.1f} s")
    return EXIT_PROPERTY if n_fail else EXIT_OK


def cmd_verify(args) -> int:
    props = properties.select(args.filters, include_slow=not args.fast)
    if not props:
        _err(f"no property matches {args.filters}")
        return EXIT_CONFIG
    return _run_suite(props, args, "verify")


def cmd_limiters(args) -> int:
    return _run_suite(properties.select(["current_limiting"], include_slow=not args.fast), args, "limiters")


# --- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="crossform", description="Cross-forming inverter fault ride-through simulator")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, sim=True):
        sp.add_argument("--out", default="out", help="output directory")
        if sim:
            sp.add_argument("--dt", type=float, help="override the step size [s]")
            sp.add_argument("--t-end", type=float, help="override the end time [s]")

    run = sub.add_parser("run", help="simulate scenarios and write records")
    run.add_argument("scenarios", nargs="+", help=f"scenario files or bundled names ({', '.join(bundled_names())})")
    common(run)
    run.set_defaults(func=cmd_run)

    sw = sub.add_parser("sweep", help="run a parameter grid over scenario templates")
    sw.add_argument("scenarios", nargs="+")
    sw.add_argument("--param", action="append", metavar="PATH=V1,V2", help="grid axis; repeatable")
    sw.add_argument("--grid", help="YAML file mapping parameter paths to value lists")
    sw.add_argument("--jobs", type=int, default=1, help="worker processes")
    sw.add_argument("--bisect", metavar="PATH=LO:HI", help="locate the settled/unsettled boundary instead of a grid")
    sw.add_argument("--tol", type=float, default=1e-3, help="bisection tolerance")
    common(sw)
    sw.set_defaults(func=cmd_sweep)

    an = sub.add_parser("analyze", help="analytical stability tools")
    asub = an.add_subparsers(dest="analysis", required=True)
    pa = asub.add_parser("power-angle", help="sinusoidal power-angle table")
    pa.add_argument("--v-hat", type=float, default=1.0)
    pa.add_argument("--v-g", type=float, default=1.0)
    pa.add_argument("--x-v", type=float, default=0.2)
    pa.add_argument("--x-g", type=float, default=0.13)
    pa.add_argument("--p-star", type=float, default=0.0)
    pa.add_argument("--points", type=int, default=361)
    common(pa, sim=False)
    pa.set_defaults(func=cmd_power_angle)
    ea = asub.add_parser("equal-area", help="equal-area verdict and critical clearing")
    ea.add_argument("--pre", type=float, required=True, help="pre-fault p_max [pu]")
    ea.add_argument("--fault", type=float, required=True, help="fault-on p_max [pu]")
    ea.add_argument("--post", type=float, required=True, help="post-fault p_max [pu]")
    ea.add_argument("--p-star", type=float, required=True)
    ea.add_argument("--t-j", type=float, default=5.0, help="inertia time constant [s]")
    ea.add_argument("--f0", type=float, default=50.0, help="nominal frequency [Hz]")
    ea.add_argument("--delta-c", type=float, help="clearing angle to assess [rad]")
    common(ea, sim=False)
    ea.set_defaults(func=cmd_equal_area)
    dv = asub.add_parser("dvoc", help="fault-on equilibria and the dVOC synchronization condition")
    dv.add_argument("--eta", type=float, default=20.0)
    dv.add_argument("--alpha", type=float, default=1.0)
    dv.add_argument("--phi", type=float, default=math.pi / 2)
    dv.add_argument("--p-star", type=float, default=0.0)
    dv.add_argument("--q-star", type=float, default=0.0)
    dv.add_argument("--v-star", type=float, default=1.0)
    dv.add_argument("--z-total", default="0.33j", help="virtual plus grid impedance, e.g. 0.01+0.33j")
    dv.add_argument("--v-g", default="1.0", help="grid voltage phasor, e.g. 0.3")
    dv.add_argument("--i-lim", type=float, default=1.1)
    common(dv, sim=False)
    dv.set_defaults(func=cmd_dvoc)

    for name, func, helptext in (("verify", cmd_verify, "run the property suite"), ("limiters", cmd_limiters, "run the current-limiter properties")):
        sp = sub.add_parser(name, help=helptext)
        if name == "verify":
            sp.add_argument("filters", nargs="*", help="substrings of module or property names")
        sp.add_argument("--seed", type=int, default=0, help="seed for random draws")
        sp.add_argument("--fast", action="store_true", help="skip simulation-backed properties")
        sp.add_argument("--quiet", action="store_true")
        common(sp, sim=False)
        sp.set_defaults(func=func)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        _err(exc)
        return _config_exit(exc)
    except (OSError, ValueError) as exc:
        _err(exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
