"""Negative-sequence current references and power-ripple checks."""

from dataclasses import dataclass
from typing import NamedTuple

from .phasor import SequencePhasor, power_decompose, power_ripple


class PositiveSequenceCollapse(ValueError):
    pass


@dataclass(frozen=True)
class NegSeqMode:
    """``kind`` is "balanced", "flexible" (with ``chi``) or "v_mitigation" (with ``k_minus``).

    ``tau_filter`` optionally low-passes the negative-sequence voltage fed to
    the mitigation mode; zero means unfiltered.
    """

    kind: str = "balanced"
    chi: float = 0.0
    k_minus: float = 0.0
    tau_filter: float = 0.0

    def __post_init__(self):
        if self.kind not in ("balanced", "flexible", "v_mitigation"):
            raise ValueError(f"unknown negative-sequence mode {self.kind!r}")
        if not -1.0 <= self.chi <= 1.0:
            raise ValueError("chi must lie in [-1, 1]")
        if self.k_minus < 0 or self.tau_filter < 0:
            raise ValueError("k_minus and tau_filter must be non-negative")

    @property
    def label(self) -> str:
        if self.kind == "balanced":
            return "balanced"
        if self.kind == "v_mitigation":
            return f"v_mitigation:{self.k_minus!r}"
        if self.chi == -1.0:
            return "p_osc_suppress"
        if self.chi == 1.0:
            return "q_osc_suppress"
        return f"flexible:{self.chi!r}"


def parse_neg_seq_mode(text: str, tau_filter: float = 0.0) -> NegSeqMode:
    text = text.strip()
    if text == "balanced":
        return NegSeqMode(tau_filter=tau_filter)
    if text == "p_osc_suppress":
        return NegSeqMode("flexible", chi=-1.0, tau_filter=tau_filter)
    if text == "q_osc_suppress":
        return NegSeqMode("flexible", chi=1.0, tau_filter=tau_filter)
    name, _, arg = text.partition(":")
    try:
        value = float(arg)
    except ValueError:
        raise ValueError(f"cannot parse negative-sequence mode {text!r}") from None
    if name == "flexible":
        return NegSeqMode("flexible", chi=value, tau_filter=tau_filter)
    if name == "v_mitigation":
        return NegSeqMode("v_mitigation", k_minus=value, tau_filter=tau_filter)
    raise ValueError(f"cannot parse negative-sequence mode {text!r}")


def neg_seq_reference(mode: NegSeqMode, v: SequencePhasor, i_pos: complex) -> complex:
    """Negative-sequence current reference from the pre-limit positive reference."""
    if mode.kind == "balanced":
        return 0j
    if mode.kind == "v_mitigation":
        # absorbs reactive current in proportion to v-: a virtual susceptance
        return -1j * mode.k_minus * v.neg
    if v.pos == 0:
        raise PositiveSequenceCollapse("positive-sequence voltage collapse")
    return mode.chi * v.neg / v.pos.conjugate() * i_pos.conjugate()


class Ripple(NamedTuple):
    p_ripple: float
    q_ripple: float


def verify_non_oscillation(v: SequencePhasor, i: SequencePhasor) -> Ripple:
    """Peak-to-peak active and reactive power ripple over one period."""
    return Ripple(*power_ripple(power_decompose(v, i)))
