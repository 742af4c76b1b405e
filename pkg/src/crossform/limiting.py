"""Reference current limiters and the baseline current-limiting strategies."""

import cmath
import math
from dataclasses import dataclass

from .phasor import SequencePhasor, max_phase_magnitude


@dataclass(frozen=True)
class VirtualImpedance:
    r_v: float
    x_v: float

    @property
    def z(self) -> complex:
        return complex(self.r_v, self.x_v)

    @classmethod
    def from_complex(cls, z: complex) -> "VirtualImpedance":
        return cls(z.real, z.imag)


@dataclass(frozen=True)
class LimiterConfig:
    I_lim: float = 1.1
    frame: str = "stationary"

    def __post_init__(self):
        if self.I_lim <= 0:
            raise ValueError("I_lim must be positive")
        if self.frame not in ("stationary", "rotational"):
            raise ValueError(f"unknown limiter frame {self.frame!r}")


@dataclass(frozen=True)
class AdaptiveViConfig:
    I_th: float = 1.0
    kappa_vi: float = 0.91
    sigma_vi: float = 10.0
    I_lim: float = 1.1

    def __post_init__(self):
        if not 0 < self.I_th < self.I_lim:
            raise ValueError("need 0 < I_th < I_lim")


@dataclass(frozen=True)
class CurrentFormingConfig:
    m_p: float
    I_lim: float = 1.1
    psi: float = 0.0
    p_star: float = 0.0
    omega0: float = 100 * math.pi


def circular_limit(i_ref: complex, I_lim: float) -> complex:
    mag = abs(i_ref)
    if mag <= I_lim:
        return i_ref
    return i_ref * (I_lim / mag)


def scale_factor(peak: float, I_lim: float) -> float:
    return 1.0 if peak <= I_lim else I_lim / peak


def elliptical_limit(i_ref: SequencePhasor, I_lim: float) -> tuple[SequencePhasor, float]:
    """Scale both sequences by one common factor so the worst phase sits at I_lim."""
    mu = scale_factor(max_phase_magnitude(i_ref.pos, i_ref.neg), I_lim)
    if mu == 1.0:
        return i_ref, 1.0
    return SequencePhasor(i_ref.pos * mu, i_ref.neg * mu), mu


def dq_limit(i_dq_pos: complex, i_dq_neg: complex, theta: float, I_lim: float) -> tuple[complex, complex, float]:
    """Elliptical limiting on synchronous-frame references.

    With i_dq_pos = e^{-j theta} i_pos and i_dq_neg = e^{j theta} i_neg the
    product of the pair and each magnitude are frame invariant, so the phase
    peaks (and the scale) do not depend on ``theta``.
    """
    mu = scale_factor(max_phase_magnitude(i_dq_pos, i_dq_neg), I_lim)
    return i_dq_pos * mu, i_dq_neg * mu, mu


def adaptive_virtual_impedance(i_mag_feedback: float, cfg: AdaptiveViConfig) -> VirtualImpedance:
    excess = i_mag_feedback - cfg.I_th
    if excess <= 0:
        return VirtualImpedance(0.0, 0.0)
    r_v = cfg.kappa_vi * excess
    return VirtualImpedance(r_v, cfg.sigma_vi * r_v)


def adaptive_vi_drop(i_mag_feedback: float, cfg: AdaptiveViConfig) -> complex:
    """Complex impedance (r_v + j x_v) of the adaptive law as a plain number."""
    excess = i_mag_feedback - cfg.I_th
    if excess <= 0:
        return 0j
    return cfg.kappa_vi * excess * complex(1.0, cfg.sigma_vi)


def kvi_lower_bound(v_hat_mag: float, I_lim: float, I_th: float, sigma_vi: float) -> float:
    """Smallest adaptive gain that keeps a bolted-fault current at I_lim."""
    if I_lim <= I_th:
        raise ValueError("I_lim must exceed I_th")
    return abs(v_hat_mag) / (I_lim * math.sqrt(sigma_vi**2 + 1.0) * (I_lim - I_th))


@dataclass(frozen=True)
class CurrentFormingState:
    theta: float


def current_forming_step(state: CurrentFormingState, p: float, cfg: CurrentFormingConfig, dt: float):
    """Advance the droop angle and return (state, current reference)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    omega = cfg.omega0 * (1.0 + cfg.m_p * (cfg.p_star - p))
    theta = state.theta + omega * dt
    return CurrentFormingState(theta), cmath.rect(cfg.I_lim, theta - cfg.psi)
