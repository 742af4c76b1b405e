import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from crossform import forming, stability
from crossform.forming import (
    DroopParams,
    DualPortParams,
    DvocParams,
    FormingRefState,
    VsmParams,
)

W0 = 100 * math.pi
DT = 1e-4


def oracle_dvoc(v, i, eta, alpha, phi, p, q, vs, lam=1.0, frame=0.0):
    """Rectangular oscillator law written out independently of the package."""
    return (
        1j * (W0 - frame) * v
        + eta * cmath.exp(1j * phi) * ((p - 1j * q) / vs**2 * v - i / lam)
        + eta * alpha * (vs**2 - abs(v) ** 2) / vs**2 * v
    )


# --- droop ---------------------------------------------------------------


def test_droop_setpoint_equilibrium():
    pr = DroopParams(p_star=0.3, q_star=0.1)
    s = forming.droop_step(FormingRefState(0.4), 0.3, 0.1, pr, DT)
    assert s.omega == W0 and s.v_mag == 1.0
    assert s.theta == pytest.approx(0.4 + W0 * DT, abs=1e-15)


def test_droop_zero_gain_ignores_power():
    s = forming.droop_step(FormingRefState(0.0), 0.9, 0.0, DroopParams(m_p=0.0), DT)
    assert s.omega == W0


def test_droop_frequency_deviation():
    s = forming.droop_step(FormingRefState(0.0), 0.1, 0.0, DroopParams(m_p=0.05, p_star=0.2), DT)
    assert (s.omega - W0) / W0 == pytest.approx(0.05 * (0.2 - 0.1), abs=1e-15)
    assert (s.omega - W0) / W0 == pytest.approx(0.005, abs=1e-15)


def test_droop_magnitude_can_be_frozen():
    st_ = FormingRefState(0.0, magnitude_droop_enabled=False)
    s = forming.droop_step(st_, 0.0, 0.5, DroopParams(), DT)
    assert s.v_mag == 1.0
    s = forming.droop_step(FormingRefState(0.0), 0.0, 0.5, DroopParams(), DT)
    assert s.v_mag == pytest.approx(1.0 - 0.2 * 0.5)


@pytest.mark.parametrize("bad", [dict(m_p=-1), dict(m_q=-0.1), dict(v_star=0)])
def test_droop_params_validated(bad):
    with pytest.raises(ValueError):
        DroopParams(**bad)


def test_step_rejects_nonpositive_dt():
    with pytest.raises(ValueError):
        forming.droop_step(FormingRefState(0.0), 0, 0, DroopParams(), 0.0)


# --- VSM -----------------------------------------------------------------


def test_vsm_equilibrium():
    _, dw = forming.vsm_rates(W0, 0.2, VsmParams(p_star=0.2))
    assert dw == 0


def test_vsm_initial_acceleration():
    pr = VsmParams(T_J=5, D=25, p_star=0.1)
    _, dw = forming.vsm_rates(W0, 0.0, pr)
    assert dw / W0 == pytest.approx(0.02, abs=1e-15)


def test_vsm_step_matches_closed_form():
    # constant power: w(t) = (dp/D)(1 - exp(-D t / T_J)) in pu
    pr = VsmParams(T_J=5, D=25, p_star=0.1)
    s = FormingRefState(0.0)
    for _ in range(1000):
        s = forming.vsm_step(s, 0.0, 0.0, pr, DT)
    t = 1000 * DT
    expect = 0.1 / 25 * (1 - math.exp(-25 * t / 5))
    assert (s.omega - W0) / W0 == pytest.approx(expect, abs=1e-12)


def test_vsm_undamped_conserves_energy():
    p_max, p_star, T_J = 1.2, 0.5, 5.0
    d0 = math.asin(p_star / p_max)
    pr = VsmParams(T_J=T_J, D=0.0, p_star=p_star)
    ep = stability.EnergyParams(T_J * W0, p_max, p_star, d0)

    def rhs(y):
        delta, omega = y
        _, dw = forming.vsm_rates(omega, p_max * math.sin(delta), pr)
        return np.array([omega - W0, dw])

    y = np.array([d0 + 0.6, W0])
    V0 = stability.energy_function(0.0, y[0], ep)
    drift = 0.0
    for _ in range(10_000):
        k1 = rhs(y)
        k2 = rhs(y + 0.5 * DT * k1)
        k3 = rhs(y + 0.5 * DT * k2)
        k4 = rhs(y + DT * k3)
        y = y + DT / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        drift = max(drift, abs(stability.energy_function((y[1] - W0) / W0, y[0], ep) - V0))
    assert drift < 1e-6


# --- complex droop / dVOC -------------------------------------------------


def test_complex_droop_nominal_equilibrium():
    pr = DvocParams(p_star=0.3, q_star=-0.1)
    dth, dv = forming.complex_droop_rates(1.0, 0.3, -0.1, pr)
    assert dth == pytest.approx(W0, abs=1e-12) and dv == pytest.approx(0.0, abs=1e-15)


def test_complex_droop_no_magnitude_gain_freezes_magnitude():
    _, dv = forming.complex_droop_rates(1.0, 0.4, 0.0, DvocParams(alpha=0.0))
    assert dv == 0.0


def test_complex_droop_rejects_zero_magnitude():
    with pytest.raises(ValueError):
        forming.complex_droop_rates(0.0, 0, 0, DvocParams())


def test_polar_trajectory_matches_rectangular_oracle():
    pr = DvocParams(eta=15, alpha=1.5, p_star=0.3, q_star=0.05)
    z, vg = 0.3j, 0.9 + 0j
    cur = lambda v: (v - vg) / z

    def rhs(t, y):
        v = complex(y[0], y[1])
        d = oracle_dvoc(v, cur(v), pr.eta, pr.alpha, math.pi / 2, pr.p_star, pr.q_star, 1.0, frame=W0)
        return [d.real, d.imag]

    sol = solve_ivp(rhs, (0, 0.1), [math.cos(0.2), math.sin(0.2)], rtol=1e-12, atol=1e-13, dense_output=True)
    y = np.array([0.2, 1.0])
    worst = 0.0
    for k in range(1000):
        def f(yy):
            v = cmath.rect(yy[1], yy[0])
            s = v * cur(v).conjugate()
            dth, dv = forming.complex_droop_rates(yy[1], s.real, s.imag, pr)
            return np.array([dth - W0, dv])
        k1 = f(y)
        k2 = f(y + 0.5 * DT * k1)
        k3 = f(y + 0.5 * DT * k2)
        k4 = f(y + DT * k3)
        y = y + DT / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        ref = sol.sol((k + 1) * DT)
        worst = max(worst, abs(cmath.rect(y[1], y[0]) - complex(*ref)))
    assert worst < 1e-9


def test_dvoc_equilibrium_current_gives_pure_rotation():
    pr = DvocParams(p_star=0.4, q_star=0.2)
    v = cmath.rect(1.0, 0.7)
    i = complex(0.4, -0.2) * v
    assert forming.dvoc_rates(v, i, pr) == pytest.approx(1j * W0 * v, abs=1e-12)
    s = forming.dvoc_step(FormingRefState(0.7, v_vec=v), i, pr, DT)
    assert abs(s.v_vec - v * cmath.exp(1j * W0 * DT)) < 1e-12


def test_dvoc_zero_gain_is_rotation():
    v = 0.8 + 0.3j
    assert forming.dvoc_rates(v, 5 + 1j, DvocParams(eta=0.0)) == pytest.approx(1j * W0 * v, abs=1e-13)


@settings(max_examples=25, deadline=None)
@given(st.floats(-math.pi, math.pi), st.floats(0.5, 1.5), st.floats(-1, 1), st.floats(-1, 1))
def test_dvoc_rates_match_oracle(ang, mag, ire, iim):
    pr = DvocParams(eta=12, alpha=0.7, phi=1.3, p_star=0.2, q_star=0.1, v_star=1.05)
    v, i = cmath.rect(mag, ang), complex(ire, iim)
    expect = oracle_dvoc(v, i, 12, 0.7, 1.3, 0.2, 0.1, 1.05)
    assert abs(forming.dvoc_rates(v, i, pr) - expect) < 1e-12 * max(1, abs(expect))


def test_dvoc_step_is_fourth_order():
    pr = DvocParams(eta=30, alpha=2, p_star=0.3)
    s0 = FormingRefState(0.3, v_vec=cmath.rect(0.9, 0.3))
    i = 0.5 - 0.4j

    def split_error(h):
        one = forming.dvoc_step(s0, i, pr, h).v_vec
        # the held current co-rotates with the frame, so the second half starts rotated
        half = forming.dvoc_step(s0, i, pr, h / 2)
        two = forming.dvoc_step(half, i * cmath.exp(1j * W0 * h / 2), pr, h / 2).v_vec
        return abs(one - two)

    ratio = split_error(4e-3) / split_error(2e-3)
    # local error of RK4 scales as h^5
    assert 24 < ratio < 40


def test_dvoc_rejects_zero_vector():
    with pytest.raises(ValueError):
        forming.dvoc_step(FormingRefState(0.0, v_mag=0.0), 0j, DvocParams(), DT)


# --- enhanced dVOC --------------------------------------------------------


def test_enhanced_with_unit_lambda_is_plain():
    s0 = FormingRefState(0.1, v_vec=cmath.rect(1.0, 0.1))
    pr = DvocParams(p_star=0.2)
    a = forming.dvoc_step(s0, 0.3 + 0.1j, pr, DT)
    b = forming.enhanced_dvoc_step(s0, 0.3 + 0.1j, 1.0, pr, DT)
    assert a == b


def test_enhanced_lambda_scales_feedback():
    pr = DvocParams(eta=1.0, alpha=0.0, phi=0.0)
    v = 1 + 0j
    # with zero set-point the feedback term alone is -eta i / lambda
    d = forming.dvoc_rates(v, 1 + 0j, pr, lam=0.5, frame_omega=W0)
    assert d == pytest.approx(-2.0, abs=1e-15)


def test_enhanced_rejects_nonpositive_lambda():
    with pytest.raises(ValueError):
        forming.enhanced_dvoc_step(FormingRefState(0.0, v_vec=1 + 0j), 0j, 0.0, DvocParams(), DT)


def test_enhanced_trajectory_matches_scaled_normal_form():
    lam, vs = 0.6, 1.0
    pr = DvocParams(eta=18, alpha=1.2, phi=1.45, p_star=0.3, q_star=-0.1)
    z, vg = 0.33j, 0.3 + 0j
    # normal form in v_lambda = lam * v_hat with v_lambda* = lam v*
    p2, q2 = lam**2 * pr.p_star, lam**2 * pr.q_star

    def rhs(t, y):
        vl = complex(y[0], y[1])
        d = oracle_dvoc(vl, (vl - vg) / z, pr.eta, pr.alpha, pr.phi, p2, q2, lam * vs, frame=W0)
        return [d.real, d.imag]

    v0 = cmath.rect(1.0, 0.4)
    sol = solve_ivp(rhs, (0, 1.0), [(lam * v0).real, (lam * v0).imag], rtol=1e-12, atol=1e-13, dense_output=True)
    y = v0
    worst = 0.0
    f = lambda v: forming.dvoc_rates(v, (lam * v - vg) / z, pr, lam, frame_omega=W0)
    for k in range(10_000):
        k1 = f(y)
        k2 = f(y + 0.5 * DT * k1)
        k3 = f(y + 0.5 * DT * k2)
        k4 = f(y + DT * k3)
        y = y + DT / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if k % 50 == 49:
            worst = max(worst, abs(lam * y - complex(*sol.sol((k + 1) * DT))))
    assert worst < 1e-8


# --- dual port / virtual power ---------------------------------------------


def test_dual_port_nominal():
    s = forming.dual_port_step(FormingRefState(0.0), 0.2, 0.0, 1.0, DualPortParams(p_star=0.2, m_dc=0.5), DT)
    assert s.omega == W0


def test_dual_port_machine_matching():
    s = forming.dual_port_step(FormingRefState(0.0), 0.0, 0.0, 1.01, DualPortParams(m_p=0.0, m_dc=1.0), DT)
    assert (s.omega - W0) / W0 == pytest.approx(0.01, abs=1e-12)


@given(st.floats(-1, 1), st.floats(0.9, 1.1), st.floats(0, 0.1), st.floats(0, 2))
def test_dual_port_superposition(p, vdc, mp, mdc):
    pr = DualPortParams(m_p=mp, m_dc=mdc, p_star=0.1)
    both = forming.dual_port_frequency(p, vdc, pr) - W0
    only_p = forming.dual_port_frequency(p, pr.v_dc_star, pr) - W0
    only_dc = forming.dual_port_frequency(pr.p_star, vdc, pr) - W0
    assert both == pytest.approx(only_p + only_dc, abs=1e-9)


def test_virtual_power_feedback():
    assert forming.virtual_power_feedback(1 + 0j, 1 + 0j) == 1.0
    assert forming.virtual_power_feedback(1 + 0j, -1j) == pytest.approx(0.0, abs=1e-16)


def test_virtual_power_follows_sine_curve():
    # saturated current through an inductive path: i = (v_hat - v_g)/(j x)
    x, vg = 0.3, 0.5
    curve = stability.power_angle_curve(1.0, vg, 0.2, 0.1)
    for d in np.linspace(-3, 3, 25):
        vh = cmath.rect(1.0, d)
        p = forming.virtual_power_feedback(vh, (vh - vg) / (1j * x))
        assert p == pytest.approx(1.0 * vg * math.sin(d) / x, abs=1e-12)
        assert p == pytest.approx(curve.p(d), abs=1e-9)
