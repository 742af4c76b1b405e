"""Voltage-forming references and their cross-forming enhancements.

Frequencies are in rad/s; droop gains act on per-unit deviations, i.e. a
frequency droop ``m_p`` gives ``omega = omega0 (1 + m_p (p* - p))``. The
oscillator gain ``eta`` of complex droop and dVOC is applied directly in
rad/s per pu, as it appears in the oscillator equation.

Each law has a ``*_rates`` function (continuous-time right-hand side, used
by the simulator) and a ``*_step`` function that advances a
``FormingRefState`` by one RK4 step with its inputs held over the step.
"""

import cmath
import math
from dataclasses import dataclass, replace

OMEGA0 = 100 * math.pi


@dataclass(frozen=True)
class DroopParams:
    m_p: float = 0.02
    m_q: float = 0.2
    p_star: float = 0.0
    q_star: float = 0.0
    v_star: float = 1.0
    omega0: float = OMEGA0

    def __post_init__(self):
        if self.m_p < 0 or self.m_q < 0 or self.v_star <= 0:
            raise ValueError("need m_p, m_q >= 0 and v_star > 0")


@dataclass(frozen=True)
class VsmParams:
    T_J: float = 5.0
    D: float = 25.0
    m_q: float = 0.2
    p_star: float = 0.0
    q_star: float = 0.0
    v_star: float = 1.0
    omega0: float = OMEGA0

    def __post_init__(self):
        if self.T_J <= 0 or self.D < 0 or self.v_star <= 0:
            raise ValueError("need T_J > 0, D >= 0 and v_star > 0")


@dataclass(frozen=True)
class DvocParams:
    eta: float = 20.0
    alpha: float = 1.0
    phi: float = math.pi / 2
    p_star: float = 0.0
    q_star: float = 0.0
    v_star: float = 1.0
    omega0: float = OMEGA0

    def __post_init__(self):
        if self.eta < 0 or self.alpha < 0 or self.v_star <= 0:
            raise ValueError("need eta, alpha >= 0 and v_star > 0")


@dataclass(frozen=True)
class DualPortParams:
    m_p: float = 0.02
    m_q: float = 0.2
    m_dc: float = 0.0
    v_dc_star: float = 1.0
    p_star: float = 0.0
    q_star: float = 0.0
    v_star: float = 1.0
    omega0: float = OMEGA0

    def __post_init__(self):
        if self.m_p < 0 or self.m_q < 0 or self.m_dc < 0 or self.v_star <= 0:
            raise ValueError("need non-negative gains and v_star > 0")


@dataclass(frozen=True)
class FormingRefState:
    theta: float
    omega: float = OMEGA0
    v_mag: float = 1.0
    v_vec: complex = 0j
    magnitude_droop_enabled: bool = True

    @property
    def reference(self) -> complex:
        if self.v_vec != 0:
            return self.v_vec
        return cmath.rect(self.v_mag, self.theta)


def droop_frequency(p: float, params) -> float:
    return params.omega0 * (1.0 + params.m_p * (params.p_star - p))


def magnitude_law(q: float, params, enabled: bool = True) -> float:
    if not enabled:
        return params.v_star
    return params.v_star + params.m_q * (params.q_star - q)


def vsm_rates(omega: float, p: float, params: VsmParams) -> tuple[float, float]:
    """(d theta/dt, d omega/dt) of the swing-type reference."""
    dw = (-params.D * (omega - params.omega0) / params.omega0 + params.p_star - p) / params.T_J
    return omega, params.omega0 * dw


def complex_droop_rates(v_mag: float, p: float, q: float, params: DvocParams) -> tuple[float, float]:
    """(d theta/dt, d v_mag/dt) of complex droop in polar coordinates."""
    if v_mag <= 0:
        raise ValueError("complex droop needs a positive voltage magnitude")
    eta, vs2, v2 = params.eta, params.v_star**2, v_mag * v_mag
    dtheta = params.omega0 + eta * (params.p_star / vs2 - p / v2)
    rel = eta * (params.q_star / vs2 - q / v2) + eta * params.alpha * (vs2 - v2) / vs2
    return dtheta, rel * v_mag


def dvoc_rates(v_vec: complex, i_o: complex, params: DvocParams, lam: float = 1.0, frame_omega: float = 0.0) -> complex:
    """d v_vec/dt of (enhanced) dVOC, observed in a frame rotating at ``frame_omega``.

    ``lam`` scales the current feedback to ``i_o / lam``; ``lam = 1`` is the
    plain oscillator.
    """
    vs2 = params.v_star**2
    setp = complex(params.p_star, -params.q_star) / vs2
    rot = cmath.exp(1j * params.phi)
    mag = params.alpha * (vs2 - (v_vec.real**2 + v_vec.imag**2)) / vs2
    return (
        1j * (params.omega0 - frame_omega) * v_vec
        + params.eta * rot * (setp * v_vec - i_o / lam)
        + params.eta * mag * v_vec
    )


def dual_port_frequency(p: float, v_dc: float, params: DualPortParams) -> float:
    return params.omega0 * (1.0 + params.m_p * (params.p_star - p) + params.m_dc * (v_dc - params.v_dc_star))


def virtual_power_feedback(v_hat: complex, i_o_pos: complex) -> float:
    """Active power computed with the reference voltage instead of the measured one."""
    return (v_hat * i_o_pos.conjugate()).real


def _rk4(f, y, dt):
    k1 = f(y)
    k2 = f(tuple(a + 0.5 * dt * b for a, b in zip(y, k1)))
    k3 = f(tuple(a + 0.5 * dt * b for a, b in zip(y, k2)))
    k4 = f(tuple(a + dt * b for a, b in zip(y, k3)))
    return tuple(a + dt / 6.0 * (b1 + 2 * b2 + 2 * b3 + b4) for a, b1, b2, b3, b4 in zip(y, k1, k2, k3, k4))


def _check_dt(dt):
    if dt <= 0:
        raise ValueError("dt must be positive")


def droop_step(state: FormingRefState, p: float, q: float, params: DroopParams, dt: float) -> FormingRefState:
    _check_dt(dt)
    omega = droop_frequency(p, params)
    return replace(
        state,
        theta=state.theta + omega * dt,
        omega=omega,
        v_mag=magnitude_law(q, params, state.magnitude_droop_enabled),
    )


def vsm_step(state: FormingRefState, p: float, q: float, params: VsmParams, dt: float) -> FormingRefState:
    _check_dt(dt)
    theta, omega = _rk4(lambda y: vsm_rates(y[1], p, params), (state.theta, state.omega), dt)
    return replace(state, theta=theta, omega=omega, v_mag=magnitude_law(q, params, state.magnitude_droop_enabled))


def complex_droop_step(state: FormingRefState, p: float, q: float, params: DvocParams, dt: float) -> FormingRefState:
    _check_dt(dt)
    theta, v_mag = _rk4(lambda y: complex_droop_rates(y[1], p, q, params), (state.theta, state.v_mag), dt)
    omega = complex_droop_rates(v_mag, p, q, params)[0]
    return replace(state, theta=theta, v_mag=v_mag, omega=omega)


def _dvoc_advance(state, i_o, params, lam, dt):
    """RK4 in the frame co-rotating at omega0, then an exact rotation.

    The feedback current is taken to co-rotate with the reference over the
    step, so an equilibrium step is a pure rotation to rounding error.
    """
    _check_dt(dt)
    if lam <= 0:
        raise ValueError("lambda must be positive")
    v0 = state.v_vec if state.v_vec != 0 else state.reference
    if v0 == 0:
        raise ValueError("dVOC reference vector must be nonzero")
    w0 = params.omega0
    f = lambda y: (dvoc_rates(y[0], i_o, params, lam, frame_omega=w0),)
    (v_rot,) = _rk4(f, (v0,), dt)
    v1 = v_rot * cmath.exp(1j * w0 * dt)
    dv = dvoc_rates(v1, i_o * cmath.exp(1j * w0 * dt), params, lam)
    omega = (dv / v1).imag
    theta = state.theta + cmath.phase(v1 / v0)
    return replace(state, theta=theta, omega=omega, v_mag=abs(v1), v_vec=v1)


def dvoc_step(state: FormingRefState, i_o_pos: complex, params: DvocParams, dt: float) -> FormingRefState:
    return _dvoc_advance(state, i_o_pos, params, 1.0, dt)


def enhanced_dvoc_step(state: FormingRefState, i_o_pos: complex, lam: float, params: DvocParams, dt: float) -> FormingRefState:
    return _dvoc_advance(state, i_o_pos, params, lam, dt)


def dual_port_step(state: FormingRefState, p: float, q: float, v_dc: float, params: DualPortParams, dt: float) -> FormingRefState:
    _check_dt(dt)
    omega = dual_port_frequency(p, v_dc, params)
    return replace(
        state,
        theta=state.theta + omega * dt,
        omega=omega,
        v_mag=magnitude_law(q, params, state.magnitude_droop_enabled),
    )
