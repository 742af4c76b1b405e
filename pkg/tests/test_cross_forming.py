import cmath
import math

import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from crossform import cross_forming as cf
from crossform.limiting import VirtualImpedance, elliptical_limit
from crossform.phasor import SequencePhasor

DT = 1e-4
I_LIM = 1.1
ZV = 0.2j


def test_dos_ratio():
    assert cf.dos(SequencePhasor(2.2 + 0j), I_LIM) == pytest.approx(0.5, abs=1e-15)
    assert cf.dos(SequencePhasor(0.5 + 0j), I_LIM) == 1.0
    assert cf.dos(SequencePhasor(1 + 0j, 0.5 + 0j), I_LIM) == pytest.approx(1.1 / 1.5, abs=1e-12)
    assert cf.dos(SequencePhasor(1 + 0j, 0.5 + 0j), I_LIM) == pytest.approx(0.7333, abs=1e-4)


def test_dos_rejects_bad_limit():
    with pytest.raises(ValueError):
        cf.dos(SequencePhasor(1 + 0j), 0.0)


def test_virtual_admittance():
    assert cf.virtual_admittance(1 + 0j, 1 + 0j, ZV) == 0
    assert cf.virtual_admittance(1 + 0j, 0.8 + 0j, ZV) == pytest.approx(-1j, abs=1e-15)
    assert cf.virtual_admittance(1 + 0j, 0.8 + 0j, VirtualImpedance(0.0, 0.2)) == pytest.approx(-1j, abs=1e-15)
    with pytest.raises(ValueError):
        cf.virtual_admittance(1, 0, 0j)


@given(st.complex_numbers(max_magnitude=2), st.complex_numbers(max_magnitude=2))
def test_virtual_admittance_is_impedance_drop(vh, v):
    i = cf.virtual_admittance(vh, v, 0.05 + 0.2j)
    assert abs((0.05 + 0.2j) * i - (vh - v)) < 1e-12


def test_explicit_integrator_frozen_at_limit():
    s = cf.ExplicitRegState(0.9)
    new, _ = cf.explicit_step(s, 0.0, 0.5 + 0j, SequencePhasor(1.1 + 0j), I_LIM, ZV, DT)
    assert new.v_lambda_mag == 0.9


def test_explicit_integrator_clamps():
    s = cf.ExplicitRegState(0.0)
    new, _ = cf.explicit_step(s, 0.0, 0j, SequencePhasor(5 + 0j), I_LIM, ZV, DT)
    assert new.v_lambda_mag == 0.0
    s = cf.ExplicitRegState(2.0)
    new, _ = cf.explicit_step(s, 0.0, 0j, SequencePhasor(0j), I_LIM, ZV, DT)
    assert new.v_lambda_mag == 2.0


def test_explicit_time_constant():
    # integrator gain on a current error through |z_v| gives tau = |z_v| / kappa_i
    assert abs(ZV) / cf.ExplicitRegState(1.0).kappa_i == pytest.approx(4e-3)


def collinear_explicit(t_end=1.0, v_g=0.5 + 0j, z_g=0.1j):
    s = cf.ExplicitRegState(1.0)
    i = (1.0 - v_g) / (ZV + z_g)
    for _ in range(int(t_end / DT)):
        s, i_ref = cf.explicit_step(s, 0.0, v_g + z_g * i, SequencePhasor(i), I_LIM, ZV, DT)
        i = i_ref
    return s, i


def test_explicit_converges_to_outer_point():
    s, i = collinear_explicit()
    assert s.v_lambda_mag == pytest.approx(0.5 + 1.1 * 0.3, abs=1e-9)
    assert abs(i) == pytest.approx(I_LIM, abs=1e-9)


def collinear_implicit(t_end=2.0, v_g=0.5 + 0j, z_g=0.1j, kappa=1.0):
    s = cf.ImplicitRegState(kappa=kappa, v_fb_filtered=v_g)
    i_ref = (kappa - v_g) / ZV
    i = elliptical_limit(SequencePhasor(i_ref), I_LIM)[0].pos
    for _ in range(int(t_end / DT)):
        s, i_ref = cf.implicit_step(s, 1.0 + 0j, v_g + z_g * i, SequencePhasor(i_ref), I_LIM, ZV, DT)
        i = elliptical_limit(SequencePhasor(i_ref), I_LIM)[0].pos
    return s, i


def test_implicit_shares_operating_point():
    s, i = collinear_implicit()
    assert s.kappa * s.mu_filtered * 1.0 == pytest.approx(0.83, abs=1e-6)
    assert abs(i) == pytest.approx(I_LIM, abs=1e-6)


def test_implicit_unsaturated_is_virtual_admittance():
    s = cf.ImplicitRegState(v_fb_filtered=0.9 + 0.1j, tau_mu=0.0, tau_v=0.0)
    _, i = cf.implicit_step(s, 1 + 0.2j, 0.9 + 0.1j, SequencePhasor(0.3 + 0j), I_LIM, ZV, DT)
    assert i == pytest.approx(cf.virtual_admittance(1 + 0.2j, 0.9 + 0.1j, ZV), abs=1e-15)


def test_implicit_filter_pole():
    # one step of the exact lag from 1 toward 0 decays by exp(-dt/tau)
    s = cf.ImplicitRegState(mu_filtered=1.0, tau_mu=0.01)
    new, _ = cf.implicit_step(s, 1 + 0j, 0j, SequencePhasor(1e6 + 0j), I_LIM, ZV, DT)
    target = I_LIM / 1e6
    assert (new.mu_filtered - target) / (1 - target) == pytest.approx(math.exp(-100 * DT), rel=1e-12)


def test_implicit_floor():
    s = cf.ImplicitRegState(mu_filtered=2e-6, tau_mu=0.0)
    new, i = cf.implicit_step(s, 1 + 0j, 0.5 + 0j, SequencePhasor(1e9 + 0j), I_LIM, ZV, DT)
    assert new.floor_hit and new.mu_filtered == cf.MU_FLOOR
    assert math.isfinite(abs(i))


def test_implicit_rejects_out_of_range_dos():
    with pytest.raises(ValueError):
        cf.ImplicitRegState(mu_filtered=0.0)


@given(st.floats(-math.pi, math.pi), st.floats(0.01, 2), st.floats(0, 1))
def test_angle_preservation(angle, mag, v_mag):
    # the internal voltage lies on the reference ray for both regulators
    s, i = cf.explicit_step(cf.ExplicitRegState(mag), angle, v_mag + 0j, SequencePhasor(1 + 0j), I_LIM, ZV, DT)
    v_lam = ZV * i + v_mag
    assert abs(v_lam - cmath.rect(s.v_lambda_mag, angle)) < 1e-12
    st_i = cf.ImplicitRegState(mu_filtered=0.5, v_fb_filtered=v_mag + 0j, tau_mu=0.0, tau_v=0.0)
    s2, i2 = cf.implicit_step(st_i, cmath.rect(1.0, angle), v_mag + 0j, SequencePhasor(2.2 + 0j), I_LIM, ZV, DT)
    implied = s2.mu_filtered * (ZV * i2) + v_mag
    assert abs(cmath.phase(implied / cmath.rect(1.0, angle))) < 1e-12


# --- geometry -------------------------------------------------------------


def test_geometry_collinear():
    pts = cf.operating_point_geometry(0.0, 0.5 + 0j, 0.3j, I_LIM)
    assert pts.S == pytest.approx(0.83, abs=1e-12)
    assert pts.U == pytest.approx(0.17, abs=1e-12)


def test_geometry_encloses_origin():
    for a in (-2.0, 0.0, 1.0, 3.0):
        pts = cf.operating_point_geometry(a, 0.2 + 0j, 0.3j, I_LIM)
        assert pts is not None and pts.U is None and abs(pts.S) > 0


def test_geometry_tangent_and_miss():
    r, vg = 1.1 * 0.3, 0.5
    tangent = math.asin(r / vg)
    # just inside the tangent, since rounding at the exact angle can go either way
    pts = cf.operating_point_geometry(tangent - 1e-12, vg + 0j, 0.3j, I_LIM)
    assert abs(pts.S - pts.U) < 1e-5
    assert cf.operating_point_geometry(tangent + 0.05, vg + 0j, 0.3j, I_LIM) is None


@given(st.floats(-1.5, 1.5), st.floats(0.2, 1.2), st.floats(0.05, 0.5))
def test_geometry_points_carry_limit_current(angle, vg, x):
    pts = cf.operating_point_geometry(angle, vg + 0j, 1j * x, I_LIM)
    assume(pts is not None)
    for p in (pts.S, pts.U):
        if p is not None:
            assert abs((p - vg) / (1j * x)) == pytest.approx(I_LIM, abs=1e-9)
            assert abs(cmath.phase(p) - angle) < 1e-9 or abs(p) < 1e-12


def test_classify():
    assert cf.classify_stability(0.83 + 0j, 0.5 + 0j, 0.0) == "stable"
    assert cf.classify_stability(0.17 + 0j, 0.5 + 0j, 0.0) == "unstable"
    assert cf.classify_stability(0.5 + 0j, 0.5 + 0j, 0.0) == "unstable"


# --- mode switch ----------------------------------------------------------

VF, CF = cf.OperatingMode.VOLTAGE_FORMING, cf.OperatingMode.CROSS_FORMING


def run_modes(signal, t_end, cfg=cf.ModeSwitchConfig()):
    mode, timers, trace = VF, cf.ModeTimers(), []
    for k in range(int(round(t_end / DT))):
        i_mag, v_mag = signal(k * DT)
        mode, timers = cf.mode_switch(mode, i_mag, v_mag, timers, cfg, DT)
        trace.append((k * DT, mode))
    return trace


def test_never_saturated_stays_forming():
    assert all(m is VF for _, m in run_modes(lambda t: (1.0, 1.0), 0.5))


def test_enters_within_two_ms():
    trace = run_modes(lambda t: (1.6, 0.3) if t >= 0.1 else (0.3, 1.0), 0.2)
    t_enter = next(t for t, m in trace if m is CF)
    assert 0.1 < t_enter <= 0.102


def test_exit_and_lockout_against_resaturation():
    def sig(t):
        if t < 0.1:
            return 0.3, 1.0
        if t < 0.3:
            return 1.6, 0.3
        if 0.33 < t < 0.36:
            return 1.3, 0.95  # brief re-saturation after recovery
        return 0.4, 1.0

    trace = run_modes(sig, 0.6)
    entered = [t for (t, m), (_, prev) in zip(trace[1:], trace) if m is CF and prev is VF]
    assert len(entered) == 1
    t_exit = next(t for t, m in trace if t > 0.3 and m is VF)
    assert 0.3 < t_exit < 0.32
