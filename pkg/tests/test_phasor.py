import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crossform.phasor import (
    SequencePhasor,
    conj,
    max_phase_magnitude,
    phase_magnitudes,
    polar,
    power_decompose,
    power_ripple,
    reconstruct_instantaneous,
    rotate,
    to_polar,
    wrap_angle,
)

W0 = 100 * math.pi
LAMBDAS = (0.0, -2 * math.pi / 3, 2 * math.pi / 3)

finite = st.floats(-3, 3, allow_nan=False)
cx = st.builds(complex, finite, finite)
seq = st.builds(SequencePhasor, cx, cx)


def sampled_peaks(i, n=10_000):
    """Brute-force oracle: sample each phase over one period and take the peak."""
    t = np.arange(n) / n * (2 * math.pi / W0)
    out = []
    for lam in LAMBDAS:
        x = np.real(i.pos * np.exp(1j * (W0 * t + lam))) + np.real(i.neg * np.exp(1j * (-W0 * t + lam)))
        out.append(np.max(np.abs(x)))
    return out


def test_balanced_magnitudes_are_equal():
    assert phase_magnitudes(SequencePhasor(1 + 0j)) == pytest.approx((1, 1, 1), abs=1e-15)


def test_zero_phasor():
    assert phase_magnitudes(SequencePhasor(0j, 0j)) == (0, 0, 0)


def test_unbalanced_example_matches_sampling():
    i = SequencePhasor(1 + 0j, 0.5 + 0j)
    got = phase_magnitudes(i)
    assert got == pytest.approx((1.5, 0.8660254, 0.8660254), abs=1e-6)
    assert got == pytest.approx(sampled_peaks(i), abs=1e-6)
    assert max_phase_magnitude(i.pos, i.neg) == pytest.approx(1.5, abs=1e-15)


def test_reconstruct_balanced_at_zero():
    assert reconstruct_instantaneous(SequencePhasor(1 + 0j), 0.0, W0) == pytest.approx((1, -0.5, -0.5), abs=1e-15)


def test_reconstruct_zero_any_time():
    assert reconstruct_instantaneous(SequencePhasor(0j, 0j), 0.0123, W0) == (0, 0, 0)


@settings(max_examples=30, deadline=None)
@given(seq)
def test_closed_form_matches_sampled_peaks(i):
    assert phase_magnitudes(i) == pytest.approx(sampled_peaks(i), abs=1e-6)


@given(seq, st.floats(-math.pi, math.pi))
def test_time_shift_invariance(i, phi):
    shifted = SequencePhasor(i.pos * cmath.exp(1j * phi), i.neg * cmath.exp(-1j * phi))
    assert phase_magnitudes(shifted) == pytest.approx(phase_magnitudes(i), abs=1e-12)


def test_balanced_has_no_ripple():
    s = power_decompose(SequencePhasor(1 + 0.2j), SequencePhasor(0.3 - 0.5j))
    assert s.s_osc_fwd == 0 and s.s_osc_rev == 0


def test_unity_power():
    s = power_decompose(SequencePhasor(1 + 0j), SequencePhasor(1 + 0j))
    assert s.s_dc == 1 + 0j


def instantaneous_p_q(v, i, t):
    """Three-phase oracle: p = (2/3) sum v_x i_x; q from the line-to-line form."""
    va, vb, vc = (np.real(v.pos * np.exp(1j * (W0 * t + lam))) + np.real(v.neg * np.exp(1j * (-W0 * t + lam))) for lam in LAMBDAS)
    ia, ib, ic = (np.real(i.pos * np.exp(1j * (W0 * t + lam))) + np.real(i.neg * np.exp(1j * (-W0 * t + lam))) for lam in LAMBDAS)
    p = (2 / 3) * (va * ia + vb * ib + vc * ic)
    q = (2 / 3) / math.sqrt(3) * ((vb - vc) * ia + (vc - va) * ib + (va - vb) * ic)
    return p, q


@settings(max_examples=100, deadline=None)
@given(seq, seq)
def test_power_decomposition_matches_phase_products(v, i):
    t = np.linspace(0, 0.02, 101)
    s = power_decompose(v, i)
    p, q = instantaneous_p_q(v, i, t)
    assert np.max(np.abs(s.p(t, W0) - p)) < 1e-9
    assert np.max(np.abs(s.q(t, W0) - q)) < 1e-9


@settings(max_examples=50, deadline=None)
@given(seq, seq)
def test_ripple_is_peak_to_peak(v, i):
    t = np.linspace(0, 0.01, 4001)
    p, q = instantaneous_p_q(v, i, t)
    p_pp, q_pp = power_ripple(power_decompose(v, i))
    # dense sampling of a pure 2w0 sinusoid; relative error of order (pi/4000)^2
    assert p_pp == pytest.approx(np.ptp(p), abs=1e-5 * (1 + p_pp))
    assert q_pp == pytest.approx(np.ptp(q), abs=1e-5 * (1 + q_pp))


def test_polar_helpers():
    assert rotate(1 + 0j, math.pi / 2) == pytest.approx(1j, abs=1e-16)
    assert conj(1 + 2j) == 1 - 2j
    assert to_polar(polar(2.0, 0.3)) == pytest.approx((2.0, 0.3), abs=1e-15)


@given(cx, st.floats(-10, 10))
def test_rotate_inverse(z, a):
    assert abs(rotate(rotate(z, a), -a) - z) <= 1e-15 * max(1.0, abs(z)) * 4


def test_wrap_angle():
    assert wrap_angle(math.pi) == pytest.approx(math.pi)
    assert wrap_angle(-math.pi) == pytest.approx(math.pi)
    assert wrap_angle(3 * math.pi / 2) == pytest.approx(-math.pi / 2)
    assert np.allclose(wrap_angle(np.array([0.0, 2 * math.pi])), [0.0, 0.0])
