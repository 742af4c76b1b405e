"""Parameter sweeps over scenario templates.

A grid is the Cartesian product of axes, each a dotted path into the
scenario mapping (``events[0].p_star_fault``, ``inverters[0].regulator.kind``)
with a list of values. Points run in separate processes; rows come back in
grid order regardless of completion order.
"""

import copy
import itertools
import math
import os
import re
from concurrent.futures import ProcessPoolExecutor
from importlib import resources

import yaml

from .output import summarize, write_table
from .scenario import ScenarioError, build_world, from_dict, load_scenario, to_dict
from .sim import ConfigurationError, simulate

_TOKEN = re.compile(r"([^.\[\]]+)|\[(\d+)\]")


def bundled_names() -> list:
    return sorted(p.name[:-5] for p in resources.files("crossform").joinpath("scenarios").iterdir() if p.name.endswith(".yaml"))


def resolve_scenario(name_or_path: str) -> str:
    """A file path as given, or the bundled scenario of that name."""
    if os.path.exists(name_or_path):
        return name_or_path
    path = resources.files("crossform").joinpath("scenarios", f"{name_or_path}.yaml")
    if path.is_file():
        return str(path)
    raise ScenarioError(f"{name_or_path}: no such file or bundled scenario (bundled: {', '.join(bundled_names())})")


def parse_path(path: str) -> list:
    keys, pos = [], 0
    for m in _TOKEN.finditer(path):
        if m.start() != pos and path[pos:m.start()] != ".":
            raise ScenarioError(f"malformed parameter path {path!r}")
        keys.append(m.group(1) if m.group(1) is not None else int(m.group(2)))
        pos = m.end()
    if not keys or pos != len(path):
        raise ScenarioError(f"malformed parameter path {path!r}")
    return keys


def set_path(data, path: str, value):
    """Set ``value`` at a dotted path of a nested mapping, in place."""
    keys = parse_path(path)
    node = data
    for k in keys[:-1]:
        try:
            node = node[k]
        except (KeyError, IndexError, TypeError):
            raise ScenarioError(f"{path}: {k!r} does not exist in the scenario") from None
    last = keys[-1]
    if isinstance(node, list):
        if not isinstance(last, int) or last >= len(node):
            raise ScenarioError(f"{path}: index out of range")
    elif not isinstance(node, dict):
        raise ScenarioError(f"{path}: cannot set a key on a {type(node).__name__}")
    node[last] = value
    return data


def parse_values(text: str) -> list:
    """``"0.1,0.35"`` -> [0.1, 0.35]; each item is read as a YAML scalar."""
    if text.strip() == "":
        return []
    return [yaml.safe_load(v) for v in text.split(",")]


def grid_points(axes: dict) -> list:
    """All assignments of the grid, last axis varying fastest."""
    names = list(axes)
    return [dict(zip(names, combo)) for combo in itertools.product(*(axes[n] for n in names))]


def _clearing_time(sc):
    clears = [ev.t_clear for ev in sc.events if ev.kind != "setpoint" and math.isfinite(ev.t_clear)]
    return clears[0] if clears else None


def run_point(job):
    """Run one grid point; failures become rows instead of exceptions."""
    label, base, assignment, dt, t_end = job
    row = {"scenario": label, **{k: v for k, v in assignment.items()}}
    try:
        data = copy.deepcopy(base)
        for path, value in assignment.items():
            set_path(data, path, value)
        sc = from_dict(data, f"{label}{assignment}")
        world = build_world(sc, dt=dt, t_end=t_end)
        result = simulate(world)
        s = summarize(result)
    except (ConfigurationError, ValueError) as exc:
        code = "no_operating_point" if "equilibrium" in str(exc) else "config_error"
        row.update(status=code, verdict=code, settled=False, message=str(exc))
        return row
    invs = s["inverters"]
    faults = [v["max_current_fault"] for v in invs if v["max_current_fault"] is not None]
    row.update(
        status=s["status"],
        verdict=s["verdict"],
        settled=s["settled"],
        max_current=max(v["max_current"] for v in invs) if invs else None,
        max_current_fault=max(faults) if faults else None,
        final_angle=invs[0]["final_angle"] if invs else None,
        final_omega_dev=max((abs(v["final_omega_dev"]) for v in invs), default=None),
        clearing_verdict=("stable" if s["settled"] else "unstable") if _clearing_time(sc) is not None else "n/a",
        message=s["message"],
    )
    return row


METRICS = ("status", "verdict", "settled", "max_current", "max_current_fault", "final_angle", "final_omega_dev", "clearing_verdict", "message")


def sweep(templates, axes: dict, jobs: int = 1, dt=None, t_end=None) -> list:
    """Run every (template, grid point) pair; returns rows in grid order.

    ``templates`` is a list of scenario names or paths. A grid with an
    empty axis has no points and yields no rows.
    """
    bases = []
    for t in templates:
        path = resolve_scenario(t)
        bases.append((load_scenario(path).name, to_dict(load_scenario(path))))
    points = grid_points(axes)
    jobs_list = [(label, base, pt, dt, t_end) for label, base in bases for pt in points]
    if not jobs_list:
        return []
    if jobs <= 1 or len(jobs_list) == 1:
        return [run_point(j) for j in jobs_list]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(run_point, jobs_list))


def write_sweep(path, rows, axes: dict):
    header = ["point", "scenario", *axes, *METRICS]
    table = []
    for k, r in enumerate(rows):
        table.append([k, r["scenario"], *(_cell(r.get(a)) for a in axes), *(_cell(r.get(m)) for m in METRICS)])
    write_table(path, header, table)


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    return v


def bisect_parameter(template: str, path: str, lo: float, hi: float, tol: float, dt=None, t_end=None):
    """Boundary of the settled verdict along one scalar parameter.

    ``lo`` must settle and ``hi`` must not (or the reverse); returns
    (boundary, evaluated points as (value, settled)).
    """
    base_path = resolve_scenario(template)
    label, base = load_scenario(base_path).name, to_dict(load_scenario(base_path))
    probe = lambda v: run_point((label, base, {path: v}, dt, t_end))["settled"]
    seen = [(lo, probe(lo)), (hi, probe(hi))]
    if seen[0][1] == seen[1][1]:
        raise ValueError(f"{path}: both ends give settled={seen[0][1]}; no boundary in [{lo}, {hi}]")
    lo_state = seen[0][1]
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        ok = probe(mid)
        seen.append((mid, ok))
        if ok == lo_state:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi), sorted(seen)
