"""Algebraic networks: Thevenin grid with faults and positive-sequence multi-bus.

Single-inverter layout::

    inverter --z_g1-- F --z_g2-- v_g
                      |
                    fault

Fault analysis is done with textbook symmetrical components (phase-a
phasors, 1 = positive, 2 = negative, 0 = zero). The inverter's
``SequencePhasor.neg`` is the clockwise space-vector coefficient, which is
the complex conjugate of the textbook negative-sequence phasor, so currents
and voltages are conjugated on the way in and out. A consequence is that an
inductive branch R + jX appears as R - jX to ``neg`` quantities.

The inverter side has no zero-sequence path (delta-wye step-up
transformer); zero-sequence current can only flow on the grid side.
"""

import cmath
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .phasor import SequencePhasor

A = cmath.exp(2j * cmath.pi / 3)
# phase <- sequence (0, 1, 2)
SEQ_TO_PHASE = np.array([[1, 1, 1], [1, A * A, A], [1, A, A * A]])
PHASE_TO_SEQ = np.linalg.inv(SEQ_TO_PHASE)

FAULT_KINDS = ("three_phase", "slg", "llg", "voltage_dip")


class NetworkError(ValueError):
    pass


@dataclass(frozen=True)
class TheveninGrid:
    z_g1: complex
    z_g2: complex
    v_g: complex = 1.0 + 0j
    z_g2_zero: Optional[complex] = None

    def __post_init__(self):
        if abs(self.z_g1 + self.z_g2) == 0:
            raise NetworkError("grid impedance must be nonzero")

    @property
    def z_zero(self) -> complex:
        return self.z_g2 if self.z_g2_zero is None else self.z_g2_zero


@dataclass(frozen=True)
class FaultEvent:
    """Fault at the grid node F, or a step of the source voltage.

    ``r_f`` is in pu. For ``voltage_dip`` the source becomes
    ``magnitude * v_g * e^{j phase_jump}`` while active.
    """

    kind: str
    t_on: float
    t_clear: float = float("inf")
    r_f: float = 0.0
    magnitude: float = 1.0
    phase_jump: float = 0.0
    bus: Optional[str] = None

    def __post_init__(self):
        if self.kind not in FAULT_KINDS:
            raise NetworkError(f"unknown fault kind {self.kind!r}")
        if not self.t_clear > self.t_on:
            raise NetworkError("fault must clear after it starts")
        if self.r_f < 0:
            raise NetworkError("fault resistance must be non-negative")

    def active(self, t: float) -> bool:
        return self.t_on <= t < self.t_clear


def _fault_currents(E, Z, kind, r_f):
    """Currents drawn into the fault per sequence, given Thevenin (E, Z) at F."""
    E0, E1, E2 = E
    Z0, Z1, Z2 = Z
    if kind == "three_phase":
        return tuple(e / (z + r_f) if z + r_f != 0 else _short(e) for e, z in zip(E, Z))
    if kind == "slg":
        den = Z0 + Z1 + Z2 + 3 * r_f
        if den == 0:
            raise NetworkError("singular single-line-to-ground interconnection")
        i = (E0 + E1 + E2) / den
        return i, i, i
    if kind == "llg":
        # I0 + I1 + I2 = 0, V1 = V2, V0 - V1 = 3 r_f I0
        m = np.array([[1, 1, 1], [0, -Z1, Z2], [-Z0 - 3 * r_f, Z1, 0]], dtype=complex)
        rhs = np.array([0, E2 - E1, E1 - E0], dtype=complex)
        try:
            sol = np.linalg.solve(m, rhs)
        except np.linalg.LinAlgError:
            raise NetworkError("singular double-line-to-ground interconnection") from None
        return complex(sol[0]), complex(sol[1]), complex(sol[2])
    raise NetworkError(f"{kind!r} is not a shunt fault")


def _short(e):
    if e != 0:
        raise NetworkError("bolted fault on a zero-impedance source")
    return 0j


def _thevenin_std(I1: complex, I2: complex, grid: TheveninGrid, fault: Optional[FaultEvent]):
    """Terminal (V1, V2) for textbook sequence injections (I1, I2)."""
    v_g = grid.v_g
    if fault is not None and fault.kind == "voltage_dip":
        v_g = v_g * fault.magnitude * cmath.exp(1j * fault.phase_jump)
        fault = None
    z2 = grid.z_g2
    E = (0j, v_g + z2 * I1, z2 * I2)
    if fault is None:
        vf1, vf2 = E[1], E[2]
    else:
        Z = (grid.z_zero, z2, z2)
        i_f = _fault_currents(E, Z, fault.kind, fault.r_f)
        vf1 = E[1] - Z[1] * i_f[1]
        vf2 = E[2] - Z[2] * i_f[2]
    return vf1 + grid.z_g1 * I1, vf2 + grid.z_g1 * I2


def solve_sequence_network(i_inj: SequencePhasor, grid: TheveninGrid, fault: Optional[FaultEvent] = None) -> SequencePhasor:
    """Terminal voltage for the inverter injection ``i_inj``."""
    v1, v2 = _thevenin_std(i_inj.pos, i_inj.neg.conjugate(), grid, fault)
    return SequencePhasor(v1, v2.conjugate())


def solve_three_phase(i_inj: SequencePhasor, grid: TheveninGrid, fault: Optional[FaultEvent] = None) -> SequencePhasor:
    """Brute-force phase-domain nodal solve of the same circuit.

    Unknowns are the phase voltages at the terminal T and at F plus the three
    fault currents; fault constraints are written directly on phase
    quantities. Used as an independent check of the sequence interconnections.
    """
    v_g = grid.v_g
    if fault is not None and fault.kind == "voltage_dip":
        v_g = v_g * fault.magnitude * cmath.exp(1j * fault.phase_jump)
        fault = None

    def branch(z0, z1):
        return SEQ_TO_PHASE @ np.diag([1 / z0, 1 / z1, 1 / z1]) @ PHASE_TO_SEQ

    y1 = branch(grid.z_g1, grid.z_g1)
    y2 = branch(grid.z_zero, grid.z_g2)
    v_src = SEQ_TO_PHASE @ np.array([0, v_g, 0])
    i_t = SEQ_TO_PHASE @ np.array([0, i_inj.pos, i_inj.neg.conjugate()])

    m = np.zeros((9, 9), dtype=complex)
    rhs = np.zeros(9, dtype=complex)
    T, F, IF = slice(0, 3), slice(3, 6), slice(6, 9)
    # KCL at T: y1 (V_T - V_F) = I_T
    m[T, T] = y1
    m[T, F] = -y1
    rhs[T] = i_t
    # KCL at F: y1 (V_F - V_T) + y2 (V_F - V_src) + I_f = 0
    m[F, T] = -y1
    m[F, F] = y1 + y2
    m[F, IF] = np.eye(3)
    rhs[F] = y2 @ v_src
    r_f = 0.0 if fault is None else fault.r_f
    kind = None if fault is None else fault.kind
    for k in range(3):
        row = 6 + k
        if kind == "three_phase":
            m[row, 3 + k] = 1
            m[row, 6 + k] = -r_f
        elif kind == "slg" and k == 0:
            m[row, 3] = 1
            m[row, 6] = -r_f
        elif kind == "llg" and k == 1:
            m[row, 4] = 1
            m[row, 5] = -1
        elif kind == "llg" and k == 2:
            m[row, 4] = 1
            m[row, 7] = -r_f
            m[row, 8] = -r_f
        else:
            m[row, 6 + k] = 1
    sol = np.linalg.solve(m, rhs)
    seq = PHASE_TO_SEQ @ sol[T]
    return SequencePhasor(complex(seq[1]), complex(seq[2]).conjugate())


@dataclass(frozen=True)
class AffineMap:
    """v = e + M i over stacked textbook sequence injections."""

    e: tuple
    M: tuple

    def apply(self, i):
        return [ek + sum(mk * ij for mk, ij in zip(row, i)) for ek, row in zip(self.e, self.M)]


def thevenin_map(grid: TheveninGrid, fault: Optional[FaultEvent] = None) -> AffineMap:
    """Superposition coefficients of the terminal solve, for the simulator."""
    e = _thevenin_std(0j, 0j, grid, fault)
    c1 = _thevenin_std(1 + 0j, 0j, grid, fault)
    c2 = _thevenin_std(0j, 1 + 0j, grid, fault)
    M = tuple(tuple((c[k] - e[k]) for c in (c1, c2)) for k in range(2))
    return AffineMap(tuple(e), M)


def thevenin_power_balance(i_inj: SequencePhasor, grid: TheveninGrid, fault: Optional[FaultEvent] = None) -> float:
    """Inverter output minus (grid intake + branch and fault losses); zero when consistent."""
    I1, I2 = i_inj.pos, i_inj.neg.conjugate()
    v1, v2 = _thevenin_std(I1, I2, grid, fault)
    out = (v1 * I1.conjugate() + v2 * I2.conjugate()).real
    v_g = grid.v_g
    shunt = fault
    if fault is not None and fault.kind == "voltage_dip":
        v_g = v_g * fault.magnitude * cmath.exp(1j * fault.phase_jump)
        shunt = None
    z2 = grid.z_g2
    E = (0j, v_g + z2 * I1, z2 * I2)
    Z = (grid.z_zero, z2, z2)
    i_f = (0j, 0j, 0j) if shunt is None else _fault_currents(E, Z, shunt.kind, shunt.r_f)
    vf = [E[k] - Z[k] * i_f[k] for k in range(3)]
    # current flowing from F into the source branch, per sequence
    i_src = ((I1 - i_f[1]), (I2 - i_f[2]), -i_f[0])
    losses = grid.z_g1.real * (abs(I1) ** 2 + abs(I2) ** 2)
    losses += z2.real * (abs(i_src[0]) ** 2 + abs(i_src[1]) ** 2) + grid.z_zero.real * abs(i_src[2]) ** 2
    fault_power = sum((vf[k] * i_f[k].conjugate()).real for k in range(3))
    intake = (v_g * i_src[0].conjugate()).real
    return out - (intake + losses + fault_power)


@dataclass
class MultiBusNetwork:
    """Positive-sequence network on a common system base.

    ``branches`` are (from, to, z); ``loads`` map bus -> constant impedance;
    ``sources`` are (bus, z_source, v_source) Thevenin feeds
    (empty for an islanded system); ``inverters`` list the terminal bus and
    rating (inverter base / system base) of each inverter.
    """

    buses: list
    branches: list
    inverters: list
    loads: dict = field(default_factory=dict)
    sources: list = field(default_factory=list)
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        names = set(self.buses)
        for f, t, _ in self.branches:
            if f not in names or t not in names:
                raise NetworkError(f"branch {f}-{t} references an unknown bus")
        for bus in list(self.loads) + [s[0] for s in self.sources] + [b for b, _ in self.inverters]:
            if bus not in names:
                raise NetworkError(f"unknown bus {bus!r}")

    def index(self, bus) -> int:
        return self.buses.index(bus)

    def admittance(self, fault: Optional[FaultEvent] = None, norton=None) -> np.ndarray:
        n = len(self.buses)
        Y = np.zeros((n, n), dtype=complex)
        for f, t, z in self.branches:
            a, b = self.index(f), self.index(t)
            y = 1 / z
            Y[a, a] += y
            Y[b, b] += y
            Y[a, b] -= y
            Y[b, a] -= y
        for bus, z in self.loads.items():
            Y[self.index(bus), self.index(bus)] += 1 / z
        for bus, z, _ in self.sources:
            Y[self.index(bus), self.index(bus)] += 1 / z
        if fault is not None and fault.kind == "three_phase":
            k = self.index(fault.bus)
            if fault.r_f == 0:
                raise NetworkError("bolted multi-bus faults need r_f > 0")
            Y[k, k] += 1 / fault.r_f
        elif fault is not None and fault.kind not in ("voltage_dip",):
            raise NetworkError("multi-bus networks are positive-sequence only")
        for k, (y_n, _) in (norton or {}).items():
            bus = self.index(self.inverters[k][0])
            Y[bus, bus] += y_n * self.inverters[k][1]
        return Y

    def source_currents(self, fault: Optional[FaultEvent] = None) -> np.ndarray:
        i = np.zeros(len(self.buses), dtype=complex)
        scale = 1.0
        if fault is not None and fault.kind == "voltage_dip":
            scale = fault.magnitude * cmath.exp(1j * fault.phase_jump)
        for bus, z, v in self.sources:
            i[self.index(bus)] += v * scale / z
        return i

    def terminal_map(self, fault: Optional[FaultEvent] = None) -> AffineMap:
        """Inverter terminal voltages as an affine map of their own-base currents."""
        key = None if fault is None else (fault.kind, fault.bus, fault.r_f, fault.magnitude, fault.phase_jump)
        if key in self._cache:
            return self._cache[key]
        Y = self.admittance(fault)
        idx = [self.index(b) for b, _ in self.inverters]
        rhs = np.zeros((len(self.buses), 1 + len(idx)), dtype=complex)
        rhs[:, 0] = self.source_currents(fault)
        for col, (k, (_, rating)) in enumerate(zip(idx, self.inverters), start=1):
            rhs[k, col] = rating
        try:
            sol = np.linalg.solve(Y, rhs)
        except np.linalg.LinAlgError:
            raise NetworkError("singular nodal admittance matrix") from None
        if not np.all(np.isfinite(sol)) or np.linalg.cond(Y) > 1e12:
            raise NetworkError("singular nodal admittance matrix")
        e = tuple(complex(sol[k, 0]) for k in idx)
        M = tuple(tuple(complex(sol[k, c]) for c in range(1, 1 + len(idx))) for k in idx)
        self._cache[key] = AffineMap(e, M)
        return self._cache[key]


def solve_multibus(injections, network: MultiBusNetwork, fault: Optional[FaultEvent] = None, norton=None) -> np.ndarray:
    """Bus voltages for inverter injections.

    ``injections[k]`` is the own-base current of inverter k (ignored when the
    inverter is given as a Norton source). ``norton`` maps inverter index to
    (admittance, internal voltage), both in the inverter's own base.
    """
    norton = norton or {}
    Y = network.admittance(fault, norton)
    rhs = network.source_currents(fault)
    for k, (bus, rating) in enumerate(network.inverters):
        if k in norton:
            y_n, v_int = norton[k]
            rhs[network.index(bus)] += rating * y_n * v_int
        else:
            rhs[network.index(bus)] += rating * injections[k]
    try:
        return np.linalg.solve(Y, rhs)
    except np.linalg.LinAlgError:
        raise NetworkError("singular nodal admittance matrix") from None
