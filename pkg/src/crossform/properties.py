"""Executable invariants of every module, run by ``crossform verify``.

Each property returns one or more ``Check`` records with the measured
value and the tolerance it was held to. Random draws come from a seeded
numpy generator so a report can be reproduced exactly.
"""

import cmath
import math
import time
from dataclasses import dataclass, replace
from typing import Callable, NamedTuple, Optional

import numpy as np

from . import cross_forming, forming, limiting, negseq, network, phasor, stability
from .output import records_csv
from .scenario import build_world, echo, from_dict, load_scenario_with_defaults, load_text, to_dict
from .sim import PARAMS_FOR, InverterSpec, SimConfig, World, initialize_equilibrium, simulate
from .sweep import bundled_names, resolve_scenario

W0 = forming.OMEGA0


class Check(NamedTuple):
    module: str
    name: str
    passed: bool
    measured: float
    tolerance: float
    detail: str = ""


@dataclass
class Property:
    module: str
    name: str
    fn: Callable
    slow: bool = False


REGISTRY: list = []


def prop(module, slow=False):
    def deco(fn):
        REGISTRY.append(Property(module, fn.__name__, fn, slow))
        return fn

    return deco


def _check(module, name, measured, tolerance, *, below=True, detail=""):
    measured = float(measured)
    ok = measured <= tolerance if below else measured > tolerance
    return Check(module, name, bool(ok and math.isfinite(measured)), measured, float(tolerance), detail)


def _cx(rng, scale=1.0, size=None):
    return scale * (rng.normal(size=size) + 1j * rng.normal(size=size))


class _VaParams(NamedTuple):
    z_v: complex = 0.2j
    I_lim: float = 1.1


_VA = _VaParams()


# --- experiment helpers ---------------------------------------------------


def single_inverter_world(regulator="implicit", forming_kind="vsm", *, p_star=0.2, q_star=0.0, faults=(), setpoints=(),
                          z_g1=0.01 + 0.1j, z_g2=0.003 + 0.03j, v_g=1.0 + 0j, dt=1e-4, t_end=1.0, freeze=False,
                          params=None, tau_c=1e-3, **spec_kw) -> World:
    """One inverter on the two-section Thevenin grid, initialised at equilibrium."""
    params = params or PARAMS_FOR[forming_kind](p_star=p_star, q_star=q_star)
    spec = InverterSpec(forming_kind, params, regulator, **spec_kw)
    cfg = SimConfig(dt=dt, t_end=t_end, tau_c=tau_c, freeze_forming=freeze)
    world = World([spec], network.TheveninGrid(z_g1, z_g2, v_g), faults, setpoints, cfg)
    return initialize_equilibrium(world)


class SaturatedPoint(NamedTuple):
    v_hat: complex
    v_lambda: complex
    v: complex
    i: complex
    i_hat: complex
    i_feedback: float
    mode: str
    status: str


def saturated_point(regulator, retained, *, delta=None, settle=1.0, **kw) -> SaturatedPoint:
    """Settled state after the source steps to ``retained`` pu with the forming angle frozen.

    ``delta`` overrides the frozen reference angle; by default it stays at
    the pre-dip equilibrium.
    """
    dip = network.FaultEvent("voltage_dip", 0.0, magnitude=retained)
    world = single_inverter_world(regulator, faults=[dip], t_end=settle, freeze=True, **kw)
    if delta is not None:
        world.x[0][0] = delta
    res = simulate(world, record=False)
    ((_, o),) = world.derivatives(world.x, want=True)
    x = world.x[0]
    v_lam = cmath.rect(o.v_lambda_mag, cmath.phase(o.v_hat))
    return SaturatedPoint(o.v_hat, v_lam, o.v_pos, x[8], o.i_hat, x[7], world.models[0].mode.value, res.status)


def held_fault_world(name: str, hold: float = 5.0) -> World:
    """Bundled scenario with every fault made permanent, run ``hold`` s past onset."""
    sc, _ = load_scenario_with_defaults(resolve_scenario(name))
    data = to_dict(sc)
    t_on = None
    for ev in data["events"]:
        if ev["kind"] != "setpoint":
            ev["t_clear"] = math.inf
            t_on = ev["t_on"] if t_on is None else t_on
    data["sim"]["t_end"] = t_on + hold
    return build_world(from_dict(data, name))


def swing_rk4(curve_of_t, p_star, T_J, D, delta0, t_end, dt, w_init=0.0, stop=None):
    """Hand-rolled RK4 of the VSM reference law driven by a sinusoidal power curve.

    ``curve_of_t(t)`` returns the PowerAngleCurve active at time t (held
    over a step). Returns arrays (t, delta, w) with w the pu frequency
    deviation. ``stop(delta, w)`` ends the run early.
    """
    prm = forming.VsmParams(T_J=T_J, D=D, p_star=p_star)

    def f(c, y):
        omega = W0 * (1 + y[1])
        d_theta, d_omega = forming.vsm_rates(omega, c.p(y[0]), prm)
        return np.array([d_theta - W0, d_omega / W0])

    n = int(round(t_end / dt))
    ts, ys = [0.0], [np.array([delta0, w_init])]
    y = ys[0]
    for k in range(n):
        c = curve_of_t(k * dt)
        k1 = f(c, y)
        k2 = f(c, y + 0.5 * dt * k1)
        k3 = f(c, y + 0.5 * dt * k2)
        k4 = f(c, y + dt * k3)
        y = y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        ts.append((k + 1) * dt)
        ys.append(y)
        if stop is not None and stop(y[0], y[1]):
            break
    ys = np.array(ys)
    return np.array(ts), ys[:, 0], ys[:, 1]


def clearing_time_bisection(pre, fault, post, p_star, T_J, dt=1e-4, horizon=5.0):
    """Critical clearing time by time-domain bisection over whole steps."""
    sep = stability.equilibria(pre, p_star).stable
    uep = stability.equilibria(post, p_star).unstable

    def stable(k_clear):
        t_c = k_clear * dt
        curve = lambda t: fault if t < t_c - 1e-12 else post
        # undamped first swing: stable once the rotor turns back before the unstable point
        _, d, w = swing_rk4(curve, p_star, T_J, 0.0, sep, horizon, dt, stop=lambda dd, ww: dd > uep or ww < 0)
        return d[-1] <= uep

    lo, hi = 0, 1
    while stable(hi):
        lo, hi = hi, hi * 2
        if hi * dt > horizon:
            return math.inf
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if stable(mid):
            lo = mid
        else:
            hi = mid
    return lo * dt


# --- phasor_core -----------------------------------------------------------


@prop("phasor_core")
def phase_magnitude_vs_samples(rng):
    worst = 0.0
    t = np.linspace(0, 0.02, 10_000, endpoint=False)
    for _ in range(20):
        i = phasor.SequencePhasor(complex(_cx(rng)), complex(_cx(rng, 0.5)))
        wave = phasor.reconstruct_instantaneous(i, t, W0)
        mags = phasor.phase_magnitudes(i)
        worst = max(worst, *(abs(np.max(np.abs(w)) - m) for w, m in zip(wave, mags)))
    return [_check("phasor_core", "phase_magnitude_vs_samples", worst, 1e-6)]


@prop("phasor_core")
def rotation_invariance(rng):
    worst = 0.0
    for _ in range(200):
        i = phasor.SequencePhasor(complex(_cx(rng)), complex(_cx(rng)))
        phi = rng.uniform(-math.pi, math.pi)
        r = phasor.SequencePhasor(i.pos * cmath.exp(1j * phi), i.neg * cmath.exp(-1j * phi))
        a, b = phasor.phase_magnitudes(i), phasor.phase_magnitudes(r)
        # a time shift permutes nothing: each phase keeps its magnitude
        worst = max(worst, max(abs(x - y) for x, y in zip(a, b)))
    return [_check("phasor_core", "rotation_invariance", worst, 1e-12)]


@prop("phasor_core")
def power_decomposition_vs_instantaneous(rng):
    worst = 0.0
    t = np.linspace(0, 0.02, 257)
    for _ in range(50):
        v = phasor.SequencePhasor(complex(_cx(rng)), complex(_cx(rng, 0.3)))
        i = phasor.SequencePhasor(complex(_cx(rng)), complex(_cx(rng, 0.3)))
        va, vb, vc = phasor.reconstruct_instantaneous(v, t, W0)
        ia, ib, ic = phasor.reconstruct_instantaneous(i, t, W0)
        # amplitude-invariant Clarke transform
        v_ab = (2 / 3) * (va - 0.5 * vb - 0.5 * vc) + 1j * (vb - vc) / math.sqrt(3)
        i_ab = (2 / 3) * (ia - 0.5 * ib - 0.5 * ic) + 1j * (ib - ic) / math.sqrt(3)
        s_direct = v_ab * np.conj(i_ab)
        s = phasor.power_decompose(v, i)
        worst = max(worst, np.max(np.abs(s.p(t, W0) - s_direct.real)), np.max(np.abs(s.q(t, W0) - s_direct.imag)))
    return [_check("phasor_core", "power_decomposition_vs_instantaneous", worst, 1e-9)]


# --- forming_refs ----------------------------------------------------------


@prop("forming_refs")
def equilibrium_fixed_points(rng):
    dt = 1e-4
    worst = 0.0
    theta = rng.uniform(-math.pi, math.pi)
    p, q = rng.uniform(-0.5, 0.5), rng.uniform(-0.3, 0.3)
    dp = forming.DroopParams(p_star=p, q_star=q)
    vp = forming.VsmParams(p_star=p, q_star=q)
    dual = forming.DualPortParams(p_star=p, q_star=q, m_dc=0.1)
    cd = forming.DvocParams(p_star=p, q_star=q)
    cases = [
        (forming.droop_step(forming.FormingRefState(theta), p, q, dp, dt), forming.FormingRefState(theta)),
        (forming.vsm_step(forming.FormingRefState(theta), p, q, vp, dt), forming.FormingRefState(theta)),
        (forming.dual_port_step(forming.FormingRefState(theta), p, q, 1.0, dual, dt), forming.FormingRefState(theta)),
        (forming.complex_droop_step(forming.FormingRefState(theta), p, q, cd, dt), forming.FormingRefState(theta)),
    ]
    for new, old in cases:
        worst = max(worst, abs(new.theta - old.theta - W0 * dt), abs(new.v_mag - old.v_mag), abs(new.omega - W0))
    # dVOC: equilibrium current is the one that makes the oscillator term vanish
    v0 = cmath.rect(1.0, theta)
    i_eq = complex(p, -q) * v0
    st = forming.dvoc_step(forming.FormingRefState(theta, v_vec=v0), i_eq, cd, dt)
    worst = max(worst, abs(st.v_vec - v0 * cmath.exp(1j * W0 * dt)), abs(st.omega - W0) * dt)
    return [_check("forming_refs", "equilibrium_fixed_points", worst, 1e-12)]


def _rk4_vec(f, y, dt):
    k1 = f(y)
    k2 = f(y + 0.5 * dt * k1)
    k3 = f(y + 0.5 * dt * k2)
    k4 = f(y + dt * k3)
    return y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def polar_rect_gap(params, z, v_g, v0, t_end=0.1, dt=1e-4):
    """Largest gap between complex-droop (polar) and dVOC (rectangular) trajectories.

    Both integrate the same infinite-bus circuit in the frame rotating at
    the nominal frequency, with the current computed from the state at
    every RK4 stage.
    """
    cur = lambda v: (v - v_g) / z

    def rect(y, t):
        return np.array([forming.dvoc_rates(complex(y[0]), cur(complex(y[0])), params, frame_omega=W0)])

    def polar(y, t):
        v = cmath.rect(y[1], y[0])
        s = v * cur(v).conjugate()
        d_theta, d_mag = forming.complex_droop_rates(y[1], s.real, s.imag, params)
        return np.array([d_theta - W0, d_mag])

    yr = np.array([v0], dtype=complex)
    yp = np.array([cmath.phase(v0), abs(v0)])
    worst = 0.0
    for k in range(int(round(t_end / dt))):
        t = k * dt
        yr = _rk4_t(rect, yr, t, dt)
        yp = _rk4_t(polar, yp, t, dt)
        worst = max(worst, abs(yr[0] - cmath.rect(yp[1], yp[0])))
    return worst


def _rk4_t(f, y, t, dt):
    k1 = f(y, t)
    k2 = f(y + 0.5 * dt * k1, t + 0.5 * dt)
    k3 = f(y + 0.5 * dt * k2, t + 0.5 * dt)
    k4 = f(y + dt * k3, t + dt)
    return y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


@prop("forming_refs")
def polar_rectangular_dvoc(rng):
    params = forming.DvocParams(eta=rng.uniform(5, 30), alpha=rng.uniform(0.5, 3), p_star=rng.uniform(-0.5, 0.5), q_star=rng.uniform(-0.3, 0.3))
    gap = polar_rect_gap(params, 0.02 + 0.3j, 1.0, cmath.rect(rng.uniform(0.8, 1.2), rng.uniform(-1, 1)))
    return [_check("forming_refs", "polar_rectangular_dvoc", gap, 1e-9)]


def energy_drift(D, p_star=0.5, p_max=1.2, T_J=5.0, offset=0.6, t_end=2.0, dt=1e-4):
    """(energy change, trapezoidal dissipation integral) along a swing trajectory."""
    curve = stability.PowerAngleCurve(p_max)
    d0 = stability.equilibria(curve, p_star).stable
    t, d, w = swing_rk4(lambda _: curve, p_star, T_J, D, d0 + offset, t_end, dt)
    ep = stability.EnergyParams(T_J * W0, p_max, p_star, d0)
    V = np.array([stability.energy_function(wk, dk, ep) for wk, dk in zip(w, d)])
    diss = np.sum(0.5 * dt * D * W0 * (w[1:] ** 2 + w[:-1] ** 2))
    return V[-1] - V[0], -diss, V


@prop("forming_refs")
def vsm_energy_conservation(rng):
    change, _, V = energy_drift(0.0, t_end=2.0)
    drift = float(np.max(np.abs(V - V[0]))) / 2.0
    return [_check("forming_refs", "vsm_energy_conservation", drift, 1e-6, detail="max |V(t) - V(0)| per second, D = 0")]


def enhanced_dvoc_gap(params, lam, z, v_g, v0, t_end=1.0, dt=1e-4):
    """Enhanced dVOC with frozen lambda versus its normal form written for lambda * v_hat."""
    vs = params.v_star
    eq = replace(params, p_star=params.p_star * lam * lam, q_star=params.q_star * lam * lam, v_star=vs * lam)
    cur = lambda v_lam: (v_lam - v_g) / z
    enh = lambda y, t: np.array([forming.dvoc_rates(complex(y[0]), cur(lam * complex(y[0])), params, lam, frame_omega=W0)])
    nf = lambda y, t: np.array([forming.dvoc_rates(complex(y[0]), cur(complex(y[0])), eq, 1.0, frame_omega=W0)])
    ya = np.array([v0], dtype=complex)
    yb = np.array([lam * v0], dtype=complex)
    worst = 0.0
    for k in range(int(round(t_end / dt))):
        ya = _rk4_t(enh, ya, k * dt, dt)
        yb = _rk4_t(nf, yb, k * dt, dt)
        worst = max(worst, abs(lam * ya[0] - yb[0]))
    return worst


@prop("forming_refs")
def enhanced_dvoc_normal_form(rng):
    params = forming.DvocParams(eta=rng.uniform(5, 30), alpha=rng.uniform(0.5, 3), p_star=rng.uniform(-0.5, 0.5), q_star=rng.uniform(-0.3, 0.3))
    gap = enhanced_dvoc_gap(params, rng.uniform(0.3, 0.9), 0.2j + 0.13j, 0.3, cmath.rect(1.0, rng.uniform(-1, 1)))
    return [_check("forming_refs", "enhanced_dvoc_normal_form", gap, 1e-8)]


# --- cross_forming ---------------------------------------------------------

FAULT_SCENARIOS = ("case1_explicit", "case1_implicit", "case2_cross_forming", "case3_balanced", "case3_p_osc", "case3_q_osc", "case3_v_mitigation", "case4a")


@prop("cross_forming", slow=True)
def saturated_steady_state(rng):
    out = []
    for name in FAULT_SCENARIOS:
        world = held_fault_world(name)
        res = simulate(world)
        worst = 0.0
        for n in range(len(world.models)):
            worst = max(worst, abs(res.series("i_maxphase", n)[-1] - world.models[n].spec.I_lim))
        out.append(_check("cross_forming", f"saturated_steady_state[{name}]", worst, 1e-3, detail=f"status {res.status}"))
    return out


@prop("cross_forming")
def angle_preservation(rng):
    worst = 0.0
    for _ in range(100):
        z = complex(rng.uniform(0, 0.1), rng.uniform(0.05, 0.5))
        ang = rng.uniform(-math.pi, math.pi)
        vp = complex(_cx(rng, 0.5))
        prev = phasor.SequencePhasor(complex(_cx(rng)), 0j)
        st = cross_forming.ExplicitRegState(rng.uniform(0.2, 1.5))
        st2, i = cross_forming.explicit_step(st, ang, vp, prev, 1.1, z, 1e-4)
        worst = max(worst, abs(cmath.phase((z * i + vp) * cmath.exp(-1j * ang))))
        v_hat = cmath.rect(1.0, ang)
        ist = cross_forming.ImplicitRegState(rng.uniform(0.2, 1.0), complex(_cx(rng, 0.5)))
        ist2, i = cross_forming.implicit_step(ist, v_hat, vp, prev, 1.1, z, 1e-4)
        lam_v = ist2.mu_filtered * z * i + ist2.v_fb_filtered
        worst = max(worst, abs(cmath.phase(lam_v * cmath.exp(-1j * ang))))
    return [_check("cross_forming", "angle_preservation", worst, 1e-12)]


@prop("cross_forming")
def implicit_identity(rng):
    mism = 0
    for _ in range(200):
        z = complex(rng.uniform(0, 0.1), rng.uniform(0.05, 0.5))
        v_hat, vp = complex(_cx(rng)), complex(_cx(rng))
        prev = phasor.SequencePhasor(0.5 + 0j)
        st = cross_forming.ImplicitRegState(1.0, vp, kappa=1.0, tau_v=0.0)
        _, i = cross_forming.implicit_step(st, v_hat, vp, prev, 1.1, z, 1e-4)
        mism += i != cross_forming.virtual_admittance(v_hat, vp, z)
    return [_check("cross_forming", "implicit_identity", mism, 0, detail="count of non bit-equal outputs")]


@prop("cross_forming", slow=True)
def regulator_equivalence(rng):
    worst_v = worst_i = 0.0
    for retained in (0.1, 0.3, 0.5):
        a = saturated_point("explicit", retained)
        b = saturated_point("implicit", retained)
        worst_v = max(worst_v, abs(abs(a.v_lambda) - abs(b.v_lambda)))
        worst_i = max(worst_i, abs(a.i - b.i))
    return [
        _check("cross_forming", "regulator_equivalence_v_lambda", worst_v, 1e-4),
        _check("cross_forming", "regulator_equivalence_current", worst_i, 1e-4),
    ]


@prop("cross_forming", slow=True)
def kappa_independence(rng):
    pts = [saturated_point("implicit", 0.3, kappa=k) for k in (1.0, 1.2, 2.0)]
    worst = max(max(abs(p.v - pts[0].v), abs(p.i - pts[0].i)) for p in pts)
    return [_check("cross_forming", "kappa_independence", worst, 1e-6)]


@prop("cross_forming", slow=True)
def constant_impedance(rng):
    worst = 0.0
    for reg in ("explicit", "implicit"):
        for retained in (0.1, 0.3, 0.5):
            p = saturated_point(reg, retained)
            worst = max(worst, abs((p.v_lambda - p.v) / p.i - 0.2j))
    return [_check("cross_forming", "constant_impedance", worst, 1e-9)]


# --- current_limiting ------------------------------------------------------


def _random_ref(rng):
    scale = rng.choice([0.3, 1.0, 3.0])
    return phasor.SequencePhasor(complex(_cx(rng, scale)), complex(_cx(rng, scale * rng.uniform(0, 0.7))))


@prop("current_limiting")
def limit_peak(rng):
    worst = 0.0
    for _ in range(500):
        i = _random_ref(rng)
        I_lim = rng.uniform(0.5, 2.0)
        pre = phasor.max_phase_magnitude(i.pos, i.neg)
        lim, _ = limiting.elliptical_limit(i, I_lim)
        worst = max(worst, abs(phasor.max_phase_magnitude(lim.pos, lim.neg) - min(pre, I_lim)))
        c = limiting.circular_limit(i.pos, I_lim)
        worst = max(worst, abs(abs(c) - min(abs(i.pos), I_lim)))
        th = rng.uniform(-math.pi, math.pi)
        dp, dn, _ = limiting.dq_limit(i.pos * cmath.exp(-1j * th), i.neg * cmath.exp(1j * th), th, I_lim)
        worst = max(worst, abs(phasor.max_phase_magnitude(dp, dn) - min(pre, I_lim)))
    return [_check("current_limiting", "limit_peak", worst, 1e-12)]


@prop("current_limiting")
def limit_idempotent(rng):
    worst = 0.0
    for _ in range(500):
        i = _random_ref(rng)
        once, _ = limiting.elliptical_limit(i, 1.1)
        twice, _ = limiting.elliptical_limit(once, 1.1)
        worst = max(worst, abs(once.pos - twice.pos), abs(once.neg - twice.neg))
        c = limiting.circular_limit(i.pos, 1.1)
        worst = max(worst, abs(limiting.circular_limit(c, 1.1) - c))
    return [_check("current_limiting", "limit_idempotent", worst, 1e-15)]


@prop("current_limiting")
def sequence_ratio_preserved(rng):
    worst = 0.0
    for _ in range(500):
        i = _random_ref(rng)
        if i.pos == 0:
            continue
        lim, _ = limiting.elliptical_limit(i, 1.1)
        worst = max(worst, abs(lim.neg / lim.pos - i.neg / i.pos) / max(1.0, abs(i.neg / i.pos)))
    return [_check("current_limiting", "sequence_ratio_preserved", worst, 1e-15)]


@prop("current_limiting")
def frame_equivalence(rng):
    worst = 0.0
    for _ in range(500):
        i = _random_ref(rng)
        th = rng.uniform(-math.pi, math.pi)
        lim, mu = limiting.elliptical_limit(i, 1.1)
        dp, dn, mu2 = limiting.dq_limit(i.pos * cmath.exp(-1j * th), i.neg * cmath.exp(1j * th), th, 1.1)
        worst = max(worst, abs(dp * cmath.exp(1j * th) - lim.pos), abs(dn * cmath.exp(-1j * th) - lim.neg), abs(mu - mu2))
    return [_check("current_limiting", "frame_equivalence", worst, 1e-12)]


@prop("current_limiting", slow=True)
def virtual_admittance_unified_circuit(rng):
    worst = 0.0
    for retained in (0.1, 0.3, 0.5):
        p = saturated_point("virtual_admittance", retained)
        z_eq = (p.v_hat - p.v) / p.i
        formula = stability.equivalent_impedance("virtual_admittance", abs(p.i_hat), _VA)
        worst = max(worst, abs(z_eq - formula))
    return [_check("current_limiting", "virtual_admittance_unified_circuit", worst, 1e-6)]


# --- neg_sequence ----------------------------------------------------------


def _unbalanced(rng):
    v = phasor.SequencePhasor(complex(_cx(rng)), complex(_cx(rng, 0.4)))
    return v, complex(_cx(rng))


@prop("neg_sequence")
def mode_ii_iii_cancellation(rng):
    worst_p = worst_q = 0.0
    min_other = math.inf
    for _ in range(100):
        v, ip = _unbalanced(rng)
        for mode, which in ((negseq.NegSeqMode("flexible", chi=-1.0), "p"), (negseq.NegSeqMode("flexible", chi=1.0), "q")):
            ineg = negseq.neg_seq_reference(mode, v, ip)
            r = negseq.verify_non_oscillation(v, phasor.SequencePhasor(ip, ineg))
            if which == "p":
                worst_p = max(worst_p, r.p_ripple)
                min_other = min(min_other, r.q_ripple)
            else:
                worst_q = max(worst_q, r.q_ripple)
                min_other = min(min_other, r.p_ripple)
    return [
        _check("neg_sequence", "mode_ii_p_ripple", worst_p, 1e-12),
        _check("neg_sequence", "mode_iii_q_ripple", worst_q, 1e-12),
        _check("neg_sequence", "other_ripple_remains", min_other, 0.0, below=False),
    ]


@prop("neg_sequence")
def perturbation_reintroduces_ripple(rng):
    least = math.inf
    for _ in range(100):
        v, ip = _unbalanced(rng)
        for chi, k in ((-1.0, 0), (1.0, 1)):
            ineg = negseq.neg_seq_reference(negseq.NegSeqMode("flexible", chi=chi), v, ip)
            d = 1e-3 * cmath.exp(1j * rng.uniform(-math.pi, math.pi))
            r = negseq.verify_non_oscillation(v, phasor.SequencePhasor(ip, ineg + d))
            # the perturbation adds v+ conj(d) to the forward ripple term: ripple = 2 |v+| 1e-3
            least = min(least, r[k] / (2e-3 * abs(v.pos)))
    return [_check("neg_sequence", "perturbation_reintroduces_ripple", least, 0.5, below=False, detail="ripple / (2 |v+| |d|)")]


@prop("neg_sequence")
def exclusivity(rng):
    """max(p_ripple, q_ripple) >= 2 |v-| |i+| for every i-, so both cannot vanish."""
    worst = math.inf
    for _ in range(100):
        v, ip = _unbalanced(rng)
        bound = 2 * abs(v.neg) * abs(ip)
        cands = [negseq.neg_seq_reference(negseq.NegSeqMode("flexible", chi=c), v, ip) for c in (-1.0, 0.0, 1.0)]
        cands += list(_cx(rng, 2.0, size=20))
        for ineg in cands:
            r = negseq.verify_non_oscillation(v, phasor.SequencePhasor(ip, complex(ineg)))
            worst = min(worst, max(r) / bound)
    return [_check("neg_sequence", "exclusivity", worst, 1 - 1e-9, below=False, detail="min over candidates of max ripple / 2|v-||i+|")]


@prop("neg_sequence")
def scaling_preserves_objectives(rng):
    worst = 0.0
    for _ in range(100):
        v, ip = _unbalanced(rng)
        mu = rng.uniform(0.05, 1.0)
        for chi in (-1.0, 1.0):
            ineg = negseq.neg_seq_reference(negseq.NegSeqMode("flexible", chi=chi), v, ip)
            r = negseq.verify_non_oscillation(v, phasor.SequencePhasor(mu * ip, mu * ineg))
            worst = max(worst, r.p_ripple if chi < 0 else r.q_ripple)
        k = rng.uniform(0.5, 10)
        a = mu * negseq.neg_seq_reference(negseq.NegSeqMode("v_mitigation", k_minus=k), v, ip)
        b = negseq.neg_seq_reference(negseq.NegSeqMode("v_mitigation", k_minus=mu * k), v, ip)
        worst = max(worst, abs(a - b))
    return [_check("neg_sequence", "scaling_preserves_objectives", worst, 1e-12)]


@prop("neg_sequence")
def mode_iv_direction(rng):
    worst = 0.0
    for _ in range(100):
        v, ip = _unbalanced(rng)
        ineg = negseq.neg_seq_reference(negseq.NegSeqMode("v_mitigation", k_minus=rng.uniform(0.5, 10)), v, ip)
        worst = max(worst, abs(cmath.phase(ineg / v.neg) + math.pi / 2))
    return [_check("neg_sequence", "mode_iv_direction", worst, 1e-12, detail="|angle(i-/v-) + pi/2|")]


# --- network_sim -----------------------------------------------------------


def _random_fault(rng, kind):
    if kind == "voltage_dip":
        return network.FaultEvent(kind, 0.0, magnitude=rng.uniform(0.1, 0.9), phase_jump=rng.uniform(-0.5, 0.5))
    return network.FaultEvent(kind, 0.0, r_f=rng.uniform(0.001, 0.05))


@prop("network_sim")
def sequence_vs_three_phase(rng):
    worst = 0.0
    for _ in range(50):
        grid = network.TheveninGrid(complex(rng.uniform(0.005, 0.05), rng.uniform(0.05, 0.3)), complex(rng.uniform(0.001, 0.02), rng.uniform(0.01, 0.1)),
                                    complex(_cx(rng, 0.1)) + 1, complex(rng.uniform(0.001, 0.02), rng.uniform(0.02, 0.2)))
        i = phasor.SequencePhasor(complex(_cx(rng)), complex(_cx(rng, 0.3)))
        for kind in (None, "three_phase", "slg", "llg", "voltage_dip"):
            f = None if kind is None else _random_fault(rng, kind)
            a = network.solve_sequence_network(i, grid, f)
            b = network.solve_three_phase(i, grid, f)
            worst = max(worst, abs(a.pos - b.pos), abs(a.neg - b.neg))
    return [_check("network_sim", "sequence_vs_three_phase", worst, 1e-10)]


@prop("network_sim")
def power_balance(rng):
    worst = 0.0
    for _ in range(50):
        grid = network.TheveninGrid(0.01 + 0.1j, 0.003 + 0.03j, 1.0, complex(rng.uniform(0.001, 0.02), rng.uniform(0.02, 0.2)))
        i = phasor.SequencePhasor(complex(_cx(rng)), complex(_cx(rng, 0.3)))
        for kind in (None, "three_phase", "slg", "llg", "voltage_dip"):
            f = None if kind is None else _random_fault(rng, kind)
            worst = max(worst, abs(network.thevenin_power_balance(i, grid, f)))
    return [_check("network_sim", "power_balance", worst, 1e-9)]


@prop("network_sim", slow=True)
def determinism_and_finiteness(rng):
    texts = []
    finite = True
    for _ in range(2):
        world = build_world(load_scenario_with_defaults(resolve_scenario("case3_p_osc"))[0], t_end=3.1)
        res = simulate(world)
        finite &= all(math.isfinite(v) for r in res.rows for v in (r.t, r.i_maxphase, r.p, r.q, r.omega, abs(r.v_pos), abs(r.i_neg)))
        texts.append(records_csv(res.rows))
    return [
        _check("network_sim", "determinism", 0 if texts[0] == texts[1] else 1, 0, detail="byte-identical records"),
        _check("network_sim", "no_nan", 0 if finite else 1, 0),
    ]


# --- stability_analysis ----------------------------------------------------


@prop("stability_analysis", slow=True)
def power_angle_sweep(rng):
    worst = 0.0
    kw = dict(z_g1=0.1j, z_g2=0.03j, p_star=0.0)
    curve = stability.power_angle_curve(1.0, 0.3, 0.2, 0.13)
    for delta in np.linspace(-3.0, 3.0, 13):
        p = saturated_point("implicit", 0.3, delta=float(delta), settle=1.0, **kw)
        p_virtual = (p.v_hat * p.i.conjugate()).real
        worst = max(worst, abs(p_virtual - curve.p(float(delta))))
    return [_check("stability_analysis", "power_angle_sweep", worst, 1e-9)]


@prop("stability_analysis")
def critical_clearing_time(rng):
    T_J, p_star = 5.0, 0.5
    pre = stability.PowerAngleCurve(1.8)
    fault = stability.PowerAngleCurve(0.4)
    post = stability.PowerAngleCurve(1.4)
    dt = 1e-4
    t_ea = stability.critical_clearing_time(pre, fault, post, p_star, T_J, W0)
    t_td = clearing_time_bisection(pre, fault, post, p_star, T_J, dt)
    return [_check("stability_analysis", "critical_clearing_time", abs(t_ea - t_td), 2 * dt, detail=f"equal-area {t_ea:.6f} s, time-domain {t_td:.6f} s")]


@prop("stability_analysis")
def energy_dissipation(rng):
    change, integral, _ = energy_drift(25.0)
    rel = abs(change - integral) / abs(integral)
    return [_check("stability_analysis", "energy_dissipation", rel, 1e-6)]


@prop("stability_analysis", slow=True)
def equivalent_impedance_constancy(rng):
    xf, va, av = [], [], []
    cfg = limiting.AdaptiveViConfig()
    for retained in (0.1, 0.3, 0.5):
        p = saturated_point("implicit", retained)
        xf.append((p.v_lambda - p.v) / p.i)
        p = saturated_point("virtual_admittance", retained)
        va.append(((p.v_hat - p.v) / p.i, stability.equivalent_impedance("virtual_admittance", abs(p.i_hat), _VA)))
        p = saturated_point("adaptive_vi", retained)
        # the adaptive drop sits in series with the static virtual admittance
        av.append(((p.v_hat - p.v) / p.i - 0.2j, stability.equivalent_impedance("adaptive_vi", p.i_feedback, cfg)))
    spread = lambda zs: max(abs(a - b) for a in zs for b in zs)
    return [
        _check("stability_analysis", "cross_forming_impedance_constant", spread(xf), 1e-9),
        _check("stability_analysis", "type_b_matches_formula", max(abs(a - b) for a, b in va), 1e-6),
        _check("stability_analysis", "type_a_matches_formula", max(abs(a - b) for a, b in av), 1e-6),
        _check("stability_analysis", "type_b_varies", spread([a for a, _ in va]), 0.01, below=False),
        _check("stability_analysis", "type_a_varies", spread([a for a, _ in av]), 0.01, below=False),
    ]


@prop("stability_analysis")
def dvoc_condition_scaling(rng):
    worst = 0.0
    for _ in range(100):
        inp = stability.DvocStabilityInputs(
            eta=rng.uniform(1, 50), alpha=rng.uniform(0.1, 5), phi=rng.uniform(0, math.pi / 2), p_star=rng.uniform(-1, 1),
            q_star=rng.uniform(-1, 1), v_star=rng.uniform(0.8, 1.2), v_lambda_s=rng.uniform(0.2, 1.2), y=complex(_cx(rng, 3)),
            v_lambda_star=rng.uniform(0.5, 1.2),
        )
        c = rng.uniform(0.2, 5)
        s = replace(inp, p_star=inp.p_star * c, q_star=inp.q_star * c, v_star=inp.v_star * math.sqrt(c),
                    v_lambda_s=inp.v_lambda_s * math.sqrt(c), v_lambda_star=inp.v_lambda_star * math.sqrt(c))
        a, b = stability.dvoc_stability_condition(inp), stability.dvoc_stability_condition(s)
        worst = max(worst, abs(a.lhs - b.lhs), abs(a.rhs - b.rhs), float(a.satisfied != b.satisfied and abs(a.lhs - a.rhs) > 1e-9))
    return [_check("stability_analysis", "dvoc_condition_scaling", worst, 1e-12)]


class DvocTrial(NamedTuple):
    params: object
    z_total: complex
    v_g: complex
    condition: object
    synchronized: bool
    omega_dev: float
    status: str


def dvoc_trial(rng, horizon=5.0) -> Optional[DvocTrial]:
    """One random enhanced-dVOC ride-through, or None when the draw is not eligible.

    A draw is eligible when the fault-on system has exactly one stable
    equilibrium; its internal-voltage magnitude is the steady value used in
    the condition. The implicit regulator is used because its lambda follows
    the degree of saturation in both regimes, as the equilibrium model assumes.
    """
    prm = forming.DvocParams(eta=rng.uniform(5, 50), alpha=rng.uniform(0.2, 5), phi=rng.uniform(1.37, math.pi / 2),
                             p_star=rng.uniform(-0.8, 0.8), q_star=rng.uniform(-0.5, 0.5))
    x_g = rng.uniform(0.05, 0.4)
    z_g1 = complex(x_g * rng.uniform(0, 0.1), x_g)
    retained, jump = rng.uniform(0.1, 0.9), rng.uniform(-1, 1)
    z_total = 0.2j + 1.3 * z_g1
    v_g = cmath.rect(retained, jump)
    stable = [e for e in stability.dvoc_equilibria(prm, z_total, v_g, 1.1) if e.stable]
    if len(stable) != 1:
        return None
    e = stable[0]
    lam = abs(e.v_lambda) / abs(e.v_hat)
    cond = stability.dvoc_stability_condition(stability.DvocStabilityInputs(
        prm.eta, prm.alpha, prm.phi, prm.p_star, prm.q_star, prm.v_star, abs(e.v_lambda), 1 / z_total, lam * prm.v_star))
    try:
        world = single_inverter_world("implicit", "dvoc", params=prm, z_g1=z_g1, z_g2=0.3 * z_g1, t_end=horizon,
                                      faults=[network.FaultEvent("voltage_dip", 0.05, magnitude=retained, phase_jump=jump)])
    except ValueError:
        return None  # no pre-fault operating point
    if not cond.satisfied:
        return DvocTrial(prm, z_total, v_g, cond, False, math.nan, "not simulated")
    res = simulate(world, record=False)
    ((_, o),) = world.derivatives(world.x, want=True)
    dev = abs(o.omega - prm.omega0)
    return DvocTrial(prm, z_total, v_g, cond, res.status == "ok" and dev < 1e-6, dev, res.status)


def dvoc_sufficiency(rng, n_satisfied, max_draws=2000):
    """Simulate draws until ``n_satisfied`` meet the condition; returns those trials."""
    out = []
    for _ in range(max_draws):
        tr = dvoc_trial(rng)
        if tr is not None and tr.condition.satisfied:
            out.append(tr)
            if len(out) == n_satisfied:
                break
    return out


@prop("stability_analysis", slow=True)
def dvoc_condition_sufficiency(rng):
    trials = dvoc_sufficiency(rng, 8)
    fails = sum(not t.synchronized for t in trials)
    worst = max((t.omega_dev for t in trials), default=math.nan)
    return [_check("stability_analysis", "dvoc_condition_sufficiency", fails, 0, detail=f"{len(trials)} satisfied draws, worst |w - w0| {worst:.2e} rad/s")]


# --- scenario_cli ----------------------------------------------------------


@prop("scenario_cli")
def scenario_round_trip(rng):
    bad = []
    for name in bundled_names():
        sc, defaulted = load_scenario_with_defaults(resolve_scenario(name))
        again, _ = load_text(echo(sc, defaulted), f"echo of {name}")
        if again != sc:
            bad.append(name)
    return [_check("scenario_cli", "scenario_round_trip", len(bad), 0, detail=", ".join(bad))]


# --- runner ----------------------------------------------------------------


def select(filters=(), include_slow=True) -> list:
    out = []
    for p in REGISTRY:
        if not include_slow and p.slow:
            continue
        if filters and not any(f in p.module or f in p.name for f in filters):
            continue
        out.append(p)
    return out


def run_properties(props, seed: int = 0, progress: Optional[Callable] = None) -> list:
    """Run each property with its own generator derived from ``seed``.

    A property that raises is reported as a failed check rather than
    aborting the suite.
    """
    results = []
    for k, p in enumerate(props):
        rng = np.random.default_rng([seed, k])
        start = time.perf_counter()
        try:
            checks = p.fn(rng)
        except Exception as exc:  # report and keep going
            checks = [Check(p.module, p.name, False, math.nan, math.nan, f"{type(exc).__name__}: {exc}")]
        elapsed = time.perf_counter() - start
        for c in checks:
            results.append((c, elapsed))
            if progress:
                progress(c, elapsed)
    return results


def report_rows(results) -> list:
    return [
        {"module": c.module, "property": c.name, "passed": c.passed, "measured": c.measured, "tolerance": c.tolerance, "detail": c.detail, "seconds": round(s, 3)}
        for c, s in results
    ]
