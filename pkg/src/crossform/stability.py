"""Transient-stability toolkit for the saturated (cross-forming) system.

With a constant virtual impedance the virtual power seen by an angle-based
reference stays sinusoidal in the angle, so the classic tools apply:
power-angle curves, equal-area margins, the swing energy function and the
dVOC sufficient condition.
"""

import cmath
import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from scipy import optimize
from scipy.integrate import solve_ivp

from .cross_forming import operating_point_geometry

BISECT_TOL = 1e-10


@dataclass(frozen=True)
class PowerAngleCurve:
    """p(delta) = offset + p_max sin(delta - theta_g)."""

    p_max: float
    theta_g: float = 0.0
    p_star: float = 0.0
    offset: float = 0.0

    def __post_init__(self):
        if self.p_max < 0:
            raise ValueError("p_max must be non-negative")

    def p(self, delta):
        return self.offset + self.p_max * math.sin(delta - self.theta_g)

    def area(self, a: float, b: float, level: float) -> float:
        """Integral of (p(delta) - level) from a to b, in closed form."""
        th = self.theta_g
        return (self.offset - level) * (b - a) + self.p_max * (math.cos(a - th) - math.cos(b - th))


def power_angle_curve(v_hat_mag: float, v_g_mag: float, x_v: float, x_g: float, theta_g: float = 0.0, p_star: float = 0.0) -> PowerAngleCurve:
    """Virtual-power curve of an inverter behind a purely inductive path.

    Uses the reference magnitude, so it does not depend on |v_lambda|.
    """
    if x_v + x_g <= 0:
        raise ValueError("total reactance must be positive")
    return PowerAngleCurve(v_hat_mag * v_g_mag / (x_v + x_g), theta_g, p_star)


def uniform_xr_curve(v_hat_mag: float, v_g_mag: float, v_lambda_mag: float, z_total: complex, theta_g: float = 0.0, p_star: float = 0.0) -> PowerAngleCurve:
    """Virtual-power curve when all series impedances share one X/R ratio.

    The sine is shifted by the impedance angle and picks up a constant
    term from the internal voltage driving current through the resistance.
    """
    if abs(z_total) == 0:
        raise ValueError("z_total must be nonzero")
    y = 1 / z_total.conjugate()
    # p = |v_hat| v_lam Re(y) - |v_hat| v_g Re(y e^{j(delta - theta_g)})
    # Re(y e^{jx}) = |y| cos(x + arg y) = -|y| sin(x + arg y - pi/2)
    shift = cmath.phase(y) - math.pi / 2
    return PowerAngleCurve(v_hat_mag * v_g_mag * abs(y), theta_g - shift, p_star, v_hat_mag * v_lambda_mag * y.real)


class Equilibria(NamedTuple):
    stable: float
    unstable: float


def equilibria(curve: PowerAngleCurve, p_star: Optional[float] = None) -> Optional[Equilibria]:
    p_star = curve.p_star if p_star is None else p_star
    if curve.p_max == 0:
        return None
    ratio = (p_star - curve.offset) / curve.p_max
    if abs(ratio) > 1:
        return None
    d0 = math.asin(ratio)
    return Equilibria(curve.theta_g + d0, curve.theta_g + math.pi - d0)


class EqualAreaResult(NamedTuple):
    s_plus: float
    s_minus: float
    stable: bool
    critical_angle: Optional[float]


def _margin(pre_sep, fault, post, p_star, delta_c):
    """Decelerating minus accelerating area for clearing at ``delta_c``."""
    eq = equilibria(post, p_star)
    s_plus = -fault.area(pre_sep, delta_c, p_star)
    if eq is None or delta_c >= eq.unstable:
        return s_plus, 0.0, False
    s_minus = post.area(delta_c, eq.unstable, p_star)
    return s_plus, s_minus, s_minus >= s_plus


def critical_clearing_angle(pre: PowerAngleCurve, fault: PowerAngleCurve, post: PowerAngleCurve, p_star: float) -> Optional[float]:
    """Largest clearing angle that keeps s_minus >= s_plus (bisection to 1e-10 rad).

    Returns None when even immediate clearing is unstable, and the post-fault
    UEP when the fault-on curve never accelerates the angle past it.
    """
    sep = equilibria(pre, p_star)
    eq = equilibria(post, p_star)
    if sep is None or eq is None:
        return None
    lo, hi = sep.stable, eq.unstable
    if not _margin(sep.stable, fault, post, p_star, lo)[2]:
        return None
    f = lambda d: (lambda r: r[1] - r[0])(_margin(sep.stable, fault, post, p_star, d))
    if f(hi - 1e-15) >= 0:
        return hi
    while hi - lo > BISECT_TOL:
        mid = 0.5 * (lo + hi)
        if f(mid) >= 0:
            lo = mid
        else:
            hi = mid
    return lo


def equal_area(pre: PowerAngleCurve, fault: PowerAngleCurve, post: PowerAngleCurve, p_star: float, delta_c: float) -> EqualAreaResult:
    """Accelerating/decelerating areas for clearing at ``delta_c``.

    The angle starts at the pre-fault SEP.
    """
    sep = equilibria(pre, p_star)
    if sep is None:
        raise ValueError("pre-fault curve has no equilibrium for this setpoint")
    s_plus, s_minus, ok = _margin(sep.stable, fault, post, p_star, delta_c)
    return EqualAreaResult(s_plus, s_minus, ok, critical_clearing_angle(pre, fault, post, p_star))


def critical_clearing_time(pre: PowerAngleCurve, fault: PowerAngleCurve, post: PowerAngleCurve, p_star: float, T_J: float, omega0: float, D: float = 0.0) -> Optional[float]:
    """Time for the fault-on swing to reach the critical clearing angle.

    Swing model: T_J dw/dt = p* - p(delta) - D w, d delta/dt = omega0 w,
    with w the per-unit frequency deviation.
    """
    d_cr = critical_clearing_angle(pre, fault, post, p_star)
    if d_cr is None:
        return None
    d0 = equilibria(pre, p_star).stable
    if d_cr <= d0:
        return 0.0

    def rhs(t, y):
        return [omega0 * y[1], (p_star - fault.p(y[0]) - D * y[1]) / T_J]

    hit = lambda t, y: y[0] - d_cr
    hit.terminal = True
    hit.direction = 1
    sol = solve_ivp(rhs, (0.0, 1e3), [d0, 0.0], events=hit, rtol=1e-12, atol=1e-12, method="DOP853")
    if not sol.t_events[0].size:
        return math.inf
    return float(sol.t_events[0][0])


@dataclass(frozen=True)
class EnergyParams:
    """Swing energy parameters; ``T_J`` multiplies the squared frequency variable."""

    T_J: float
    p_max: float
    p_star: float
    delta0: float

    def __post_init__(self):
        if self.p_max < 0:
            raise ValueError("p_max must be non-negative")
        if abs(self.p_star) > self.p_max:
            raise ValueError("no equilibrium: |p*| exceeds p_max")


def energy_function(omega: float, delta: float, params: EnergyParams) -> float:
    """Kinetic plus potential energy of the swing dynamics.

    For a VSM written with per-unit frequency deviation and time in seconds,
    pass ``T_J * omega0``; the dissipation is then ``-D omega0 w^2``.
    """
    pr = params
    return 0.5 * pr.T_J * omega * omega - pr.p_max * (math.cos(delta) - math.cos(pr.delta0)) - pr.p_star * (delta - pr.delta0)


@dataclass(frozen=True)
class DvocStabilityInputs:
    eta: float
    alpha: float
    phi: float
    p_star: float
    q_star: float
    v_star: float
    v_lambda_s: float
    y: complex
    v_lambda_star: Optional[float] = None

    def __post_init__(self):
        if abs(self.y) == 0:
            raise ValueError("lumped admittance must be nonzero")
        if self.v_star <= 0:
            raise ValueError("v_star must be positive")


class DvocCondition(NamedTuple):
    lhs: float
    rhs: float
    satisfied: bool


def dvoc_stability_condition(inp: DvocStabilityInputs) -> DvocCondition:
    """Sufficient synchronization condition for (enhanced) dVOC on an infinite bus.

    ``eta`` does not enter. ``v_lambda_star`` defaults to ``v_star``.
    """
    rot = cmath.exp(1j * inp.phi)
    v_ls = inp.v_star if inp.v_lambda_star is None else inp.v_lambda_star
    lhs = (rot * complex(inp.p_star, -inp.q_star) / inp.v_star**2).real + inp.alpha
    rhs = 0.5 * inp.alpha * inp.v_lambda_s**2 / v_ls**2 + (rot * inp.y).real
    return DvocCondition(lhs, rhs, lhs < rhs)


class DvocEquilibrium(NamedTuple):
    v_hat: complex
    v_lambda: complex
    i: complex
    saturated: bool
    stable: bool


def dvoc_reduced_rates(v_hat: complex, params, z_total: complex, v_g: complex, I_lim: float) -> Optional[complex]:
    """Enhanced dVOC on an infinite bus with the regulator at its quasi-steady state.

    Unsaturated, the current is the virtual-admittance current through
    ``z_total``. Saturated, the internal voltage sits on the outer operating
    point of the reference ray and lambda = |v_lambda| / |v_hat|. Returns None
    where the ray misses the current-limit circle. Nominal-frequency frame.
    """
    i = (v_hat - v_g) / z_total
    lam = 1.0
    if abs(i) > I_lim:
        pts = operating_point_geometry(cmath.phase(v_hat), v_g, z_total, I_lim)
        if pts is None:
            return None
        lam = abs(pts.S) / abs(v_hat)
        i = (pts.S - v_g) / z_total
    vs2 = params.v_star**2
    rot = cmath.exp(1j * params.phi)
    mag = params.alpha * (vs2 - abs(v_hat) ** 2) / vs2
    return params.eta * (rot * (complex(params.p_star, -params.q_star) / vs2 * v_hat - i / lam) + mag * v_hat)


def dvoc_equilibria(params, z_total: complex, v_g: complex, I_lim: float) -> list:
    """Equilibria of ``dvoc_reduced_rates``, found from a polar grid of seeds.

    Stability is read from the eigenvalues of a central-difference Jacobian.
    """

    def f(u):
        r = dvoc_reduced_rates(complex(u[0], u[1]), params, z_total, v_g, I_lim)
        return [1e6, 1e6] if r is None else [r.real, r.imag]

    found = []
    for ang in np.linspace(-math.pi, math.pi, 16, endpoint=False):
        for m in (0.3, 0.7, 1.0, 1.3):
            v0 = cmath.rect(m * params.v_star, ang)
            sol = optimize.root(f, [v0.real, v0.imag], method="hybr", options={"xtol": 1e-13})
            v = complex(*sol.x)
            if not sol.success or abs(v) < 1e-6 or max(abs(x) for x in f(sol.x)) > 1e-9 * max(1.0, params.eta):
                continue
            if all(abs(v - e) > 1e-6 for e in found):
                found.append(v)
    out = []
    h = 1e-7
    for v in sorted(found, key=lambda c: (cmath.phase(c), abs(c))):
        i = (v - v_g) / z_total
        sat = abs(i) > I_lim
        v_lam = v
        if sat:
            v_lam = operating_point_geometry(cmath.phase(v), v_g, z_total, I_lim).S
            i = (v_lam - v_g) / z_total
        cols = []
        for dv in (h, 1j * h):
            a = dvoc_reduced_rates(v + dv, params, z_total, v_g, I_lim)
            b = dvoc_reduced_rates(v - dv, params, z_total, v_g, I_lim)
            if a is None or b is None:
                cols = None
                break
            d = (a - b) / (2 * h)
            cols.append([d.real, d.imag])
        stable = cols is not None and bool(np.all(np.linalg.eigvals(np.array(cols).T).real < 0))
        out.append(DvocEquilibrium(v, v_lam, i, sat, stable))
    return out


STRATEGIES = ("adaptive_vi", "virtual_admittance", "cross_forming")


def equivalent_impedance(strategy: str, current_mag: float, params) -> complex:
    """Impedance between the internal and terminal voltage under saturation.

    ``adaptive_vi`` (Type A) takes the measured |i| and an AdaptiveViConfig;
    ``virtual_admittance`` (Type B) takes the unsaturated reference |i_hat|
    and an object with ``z_v`` and ``I_lim``; ``cross_forming`` ignores the
    current and returns ``params.z_v``.
    """
    if strategy == "adaptive_vi":
        excess = current_mag - params.I_th
        return params.kappa_vi * params.I_th * (excess / params.I_th) * complex(1.0, params.sigma_vi) if excess > 0 else 0j
    if strategy == "virtual_admittance":
        # below the limit the virtual admittance acts unscaled
        return complex(params.z_v) * max(current_mag / params.I_lim, 1.0)
    if strategy == "cross_forming":
        return complex(params.z_v)
    raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")


def measured_impedance(v_internal: complex, v_terminal: complex, i: complex) -> complex:
    """(v_internal - v_terminal) / i from simulated phasors."""
    if i == 0:
        raise ValueError("current is zero")
    return (v_internal - v_terminal) / i
