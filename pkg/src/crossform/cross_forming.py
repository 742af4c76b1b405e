"""Explicit and implicit cross-forming regulators.

Both regulators turn the voltage reference into a current reference so that
the reference angle keeps being imposed while the current magnitude is held
at the limit. In steady state each one behaves like an internal voltage
``v_lambda = lambda * v_hat`` behind the constant virtual impedance ``z_v``.
"""

import cmath
import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import NamedTuple, Optional

from .limiting import VirtualImpedance
from .phasor import SequencePhasor, max_phase_magnitude

MU_FLOOR = 1e-6


@dataclass(frozen=True)
class ExplicitRegState:
    v_lambda_mag: float
    kappa_i: float = 50.0
    v_star_init: float = 1.0


@dataclass(frozen=True)
class ImplicitRegState:
    mu_filtered: float = 1.0
    v_fb_filtered: complex = 0j
    kappa: float = 1.0
    tau_mu: float = 0.01
    tau_v: float = 0.01
    floor_hit: bool = False

    def __post_init__(self):
        if not 0 < self.mu_filtered <= 1:
            raise ValueError("filtered DoS must lie in (0, 1]")


class OperatingMode(Enum):
    VOLTAGE_FORMING = "voltage_forming"
    CROSS_FORMING = "cross_forming"


@dataclass(frozen=True)
class ModeSwitchConfig:
    I_lim: float = 1.1
    t_enter: float = 1e-3
    v_recover: float = 0.9
    # recovery detection disarms only below this fault-level voltage
    v_disarm: float = 0.5
    t_exit: float = 10e-3
    t_lock: float = 100e-3
    # also require the voltage-forming candidate to be unsaturated before leaving
    exit_requires_unsaturated: bool = False


class ModeTimers(NamedTuple):
    saturated_for: float = 0.0
    recovered_for: float = 0.0
    since_exit: float = math.inf
    armed: bool = False


def _z(z_v) -> complex:
    z = z_v.z if isinstance(z_v, VirtualImpedance) else complex(z_v)
    if z == 0:
        raise ValueError("virtual impedance must be nonzero")
    return z


def dos(i_ref: SequencePhasor, I_lim: float) -> float:
    """Degree of saturation: common scale that brings the worst phase to I_lim."""
    if I_lim <= 0:
        raise ValueError("I_lim must be positive")
    peak = max_phase_magnitude(i_ref.pos, i_ref.neg)
    if peak <= I_lim:
        return 1.0
    return I_lim / peak


def virtual_admittance(v_hat: complex, v_pos: complex, z_v) -> complex:
    return (v_hat - v_pos) / _z(z_v)


def explicit_step(state: ExplicitRegState, v_hat_angle: float, v_pos: complex, i_ref_prev: SequencePhasor, I_lim: float, z_v, dt: float):
    """Integrate the magnitude regulator one step and return (state, i_pos reference).

    The integrator is clamped to [0, 2 v*].
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    peak = max_phase_magnitude(i_ref_prev.pos, i_ref_prev.neg)
    mag = state.v_lambda_mag + state.kappa_i * (I_lim - peak) * dt
    mag = min(max(mag, 0.0), 2.0 * state.v_star_init)
    new = replace(state, v_lambda_mag=mag)
    return new, (cmath.rect(mag, v_hat_angle) - v_pos) / _z(z_v)


def _lag(x, target, dt, tau):
    if tau <= 0:
        return target
    return x + (target - x) * -math.expm1(-dt / tau)


def implicit_step(state: ImplicitRegState, v_hat: complex, v_pos: complex, i_ref_prev: SequencePhasor, I_lim: float, z_v, dt: float):
    """Advance the DoS and voltage filters (exact first-order discretization).

    Returns (state, i_pos reference). The implied internal voltage is
    ``kappa * mu * v_hat``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    mu = dos(i_ref_prev, I_lim)
    mu_f = _lag(state.mu_filtered, mu, dt, state.tau_mu)
    floor_hit = mu_f < MU_FLOOR
    mu_f = max(mu_f, MU_FLOOR)
    v_f = _lag(state.v_fb_filtered, v_pos, dt, state.tau_v)
    new = replace(state, mu_filtered=mu_f, v_fb_filtered=v_f, floor_hit=floor_hit)
    return new, (state.kappa * v_hat - v_f / mu_f) / _z(z_v)


class OperatingPoints(NamedTuple):
    S: complex
    U: Optional[complex]


def operating_point_geometry(v_hat_angle: float, v_g: complex, z_total: complex, I_lim: float) -> Optional[OperatingPoints]:
    """Internal voltages on the reference ray that drive exactly I_lim into the grid.

    The candidates are the intersections of the ray at ``v_hat_angle`` with
    the circle of radius ``I_lim |z_total|`` around ``v_g``. ``S`` is the
    outer root; ``U`` is the inner one, or None when it lies behind the origin.
    Returns None when the ray misses the circle.
    """
    if abs(z_total) == 0:
        raise ValueError("total impedance must be nonzero")
    u = cmath.exp(1j * v_hat_angle)
    proj = (v_g * u.conjugate()).real
    radius = I_lim * abs(z_total)
    disc = proj * proj - abs(v_g) ** 2 + radius * radius
    if disc < 0:
        return None
    root = math.sqrt(disc)
    r_s, r_u = proj + root, proj - root
    if r_s < 0:
        return None
    return OperatingPoints(r_s * u, r_u * u if r_u >= 0 else None)


def classify_stability(point: complex, v_g: complex, v_hat_angle: float) -> str:
    """Stable when the grid voltage projected on the ray is shorter than the point.

    The tangent case (equality) counts as unstable.
    """
    proj = (v_g * cmath.exp(-1j * v_hat_angle)).real
    return "stable" if proj < abs(point) else "unstable"


def mode_switch(mode: OperatingMode, i_ref_unsat_mag: float, v_pos_mag: float, timers: ModeTimers, config: ModeSwitchConfig, dt: float):
    """One evaluation of the mode state machine; returns (mode, timers).

    ``i_ref_unsat_mag`` is the worst-phase magnitude of the reference the
    inverter would produce in voltage-forming mode. Leaving cross-forming
    needs the terminal voltage to have recovered above ``v_recover`` and not
    fallen back to fault level for ``t_exit``; the lockout then keeps a
    brief re-saturation from switching straight back.
    """
    saturated = i_ref_unsat_mag > config.I_lim
    if mode is OperatingMode.VOLTAGE_FORMING:
        since_exit = timers.since_exit + dt
        if saturated and since_exit >= config.t_lock:
            sat = timers.saturated_for + dt
        else:
            sat = 0.0
        if sat >= config.t_enter - 1e-12:
            return OperatingMode.CROSS_FORMING, ModeTimers(0.0, 0.0, since_exit, False)
        return mode, ModeTimers(sat, 0.0, since_exit, False)
    armed = timers.armed
    if v_pos_mag > config.v_recover:
        armed = True
    elif v_pos_mag < config.v_disarm:
        armed = False
    if armed and not (config.exit_requires_unsaturated and saturated):
        rec = timers.recovered_for + dt
    else:
        rec = 0.0
    if rec >= config.t_exit - 1e-12:
        return OperatingMode.VOLTAGE_FORMING, ModeTimers(0.0, 0.0, 0.0, False)
    return mode, ModeTimers(0.0, rec, timers.since_exit, armed)
