"""Sequence phasors, phase magnitudes and power decomposition.

A ``SequencePhasor`` holds amplitude-invariant baseband envelopes of the
positive and negative sequence. Phase ``x`` is reconstructed as

    x(t) = Re{pos e^{j(w0 t + lam_x)}} + Re{neg e^{j(-w0 t + lam_x)}}

with ``lam = (0, -2pi/3, +2pi/3)`` for phases a, b, c. The alpha-beta space
vector is then ``pos e^{jw0t} + neg e^{-jw0t}``, so ``neg`` is the coefficient
of the clockwise-rotating part, not the textbook phase-a phasor of the
negative-sequence set (that one is ``conj(neg)``).

Power is expressed on the base (3/2) V_peak I_peak, which absorbs the 3/2
factor of the amplitude-invariant transform: s = v conj(i) in pu.
"""

import cmath
import math
from typing import NamedTuple

import numpy as np

PHASE_SHIFTS = (0.0, -2.0 * math.pi / 3.0, 2.0 * math.pi / 3.0)
# e^{-j 2 lam_x}: used to fold the negative sequence onto each phase
_FOLD = tuple(cmath.exp(-2j * lam) for lam in PHASE_SHIFTS)


class SequencePhasor(NamedTuple):
    pos: complex
    neg: complex = 0j


class PhaseTriplet(NamedTuple):
    a: float
    b: float
    c: float


class PowerDecomposition(NamedTuple):
    """Complex power s(t) = s_dc + s_osc_fwd e^{j2w0t} + s_osc_rev e^{-j2w0t}."""

    s_dc: complex
    s_osc_fwd: complex
    s_osc_rev: complex

    def p(self, t, omega0: float):
        return _osc(self, t, omega0).real

    def q(self, t, omega0: float):
        return _osc(self, t, omega0).imag


def _osc(s: PowerDecomposition, t, omega0):
    rot = np.exp(2j * omega0 * np.asarray(t, dtype=float))
    p = s.s_dc.real + (s.s_osc_fwd * rot).real + (s.s_osc_rev / rot).real
    q = s.s_dc.imag + (s.s_osc_fwd * rot).imag + (s.s_osc_rev / rot).imag
    return p + 1j * q


def phase_magnitudes(i: SequencePhasor) -> PhaseTriplet:
    """Peak magnitude of each phase waveform."""
    pos, neg_c = i.pos, i.neg.conjugate()
    return PhaseTriplet(*(abs(pos + neg_c * f) for f in _FOLD))


def max_phase_magnitude(pos: complex, neg: complex = 0j) -> float:
    if neg == 0:
        return abs(pos)
    neg_c = neg.conjugate()
    return max(abs(pos + neg_c * _FOLD[0]), abs(pos + neg_c * _FOLD[1]), abs(pos + neg_c * _FOLD[2]))


def reconstruct_instantaneous(sig: SequencePhasor, t, omega0: float) -> PhaseTriplet:
    """Instantaneous phase values at time(s) ``t``; arrays broadcast."""
    wt = omega0 * np.asarray(t, dtype=float)
    out = []
    for lam in PHASE_SHIFTS:
        x = (sig.pos * np.exp(1j * (wt + lam))).real + (sig.neg * np.exp(1j * (-wt + lam))).real
        out.append(x if np.ndim(x) else float(x))
    return PhaseTriplet(*out)


def power_decompose(v: SequencePhasor, i: SequencePhasor) -> PowerDecomposition:
    return PowerDecomposition(
        v.pos * i.pos.conjugate() + v.neg * i.neg.conjugate(),
        v.pos * i.neg.conjugate(),
        v.neg * i.pos.conjugate(),
    )


def power_ripple(s: PowerDecomposition) -> tuple[float, float]:
    """Peak-to-peak ripple of p(t) and q(t) over a fundamental period."""
    back = s.s_osc_rev.conjugate()
    return 2.0 * abs(s.s_osc_fwd + back), 2.0 * abs(s.s_osc_fwd - back)


def polar(magnitude: float, angle: float) -> complex:
    return cmath.rect(magnitude, angle)


def to_polar(z: complex) -> tuple[float, float]:
    return abs(z), cmath.phase(z)


def rotate(z: complex, angle: float) -> complex:
    return z * cmath.exp(1j * angle)


def conj(z: complex) -> complex:
    return z.conjugate()


def wrap_angle(angle):
    """Wrap to (-pi, pi]; used for display only."""
    w = np.mod(np.asarray(angle, dtype=float) + np.pi, 2 * np.pi) - np.pi
    w = np.where(w == -np.pi, np.pi, w)
    return float(w) if np.ndim(w) == 0 else w
