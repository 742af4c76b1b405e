"""Fixed-step dynamic-phasor simulator.

All phasors live in a frame rotating at omega0 (positive sequence) or
-omega0 (negative sequence), so a steady state at nominal frequency is a
set of constant states. The network is algebraic and solved at every RK4
stage; the inverter current follows its limited reference through a
first-order tracking lag ``tau_c`` that stands in for the inner current
loop and LC filter. Events and mode switches act on step boundaries.

Per-inverter state vector::

    0 delta     reference angle minus omega0 t          [rad]
    1 omega     VSM frequency                           [rad/s]
    2 v_mag     complex-droop magnitude                 [pu]
    3 v_vec     dVOC reference vector                   [pu]
    4 v_lam     explicit regulator integrator |v_lambda| [pu]
    5 mu_f      implicit regulator filtered DoS
    6 v_f       filtered positive-sequence voltage      [pu]
    7 i_fb      filtered current magnitude (adaptive VI) [pu]
    8 i_pos     positive-sequence current               [pu]
    9 i_neg     negative-sequence current               [pu]
   10 v_neg_f   filtered negative-sequence voltage      [pu]
"""

import cmath
import math
import time
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional

import numpy as np
from scipy import optimize

from .cross_forming import MU_FLOOR, ModeSwitchConfig, ModeTimers, OperatingMode, mode_switch
from .forming import DroopParams, DualPortParams, DvocParams, VsmParams, dvoc_rates
from .limiting import AdaptiveViConfig, adaptive_vi_drop
from .negseq import NegSeqMode, neg_seq_reference
from .network import FaultEvent, MultiBusNetwork, TheveninGrid, thevenin_map
from .phasor import SequencePhasor, max_phase_magnitude

VF = OperatingMode.VOLTAGE_FORMING
CF = OperatingMode.CROSS_FORMING
NSTATE = 11
REGULATORS = ("explicit", "implicit", "virtual_admittance", "adaptive_vi", "current_forming")
FORMING_KINDS = ("droop", "vsm", "complex_droop", "dvoc", "dual_port")
PARAMS_FOR = {"droop": DroopParams, "vsm": VsmParams, "complex_droop": DvocParams, "dvoc": DvocParams, "dual_port": DualPortParams}


class SimulationDiverged(RuntimeError):
    pass


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-4
    t_end: float = 10.0
    tau_c: float = 1e-3
    decimation: int = 10
    divergence_limit: float = 1e3
    freeze_forming: bool = False

    def __post_init__(self):
        if self.dt <= 0 or self.t_end < 0:
            raise ConfigurationError("need dt > 0 and t_end >= 0")
        if self.tau_c <= 0:
            # a zero lag would close an algebraic loop through the network
            raise ConfigurationError("tau_c must be positive")
        if self.decimation < 1:
            raise ConfigurationError("decimation must be >= 1")


@dataclass(frozen=True)
class InverterSpec:
    forming: str
    params: object
    regulator: str
    name: str = "inv"
    z_v: complex = 0.2j
    kappa_i: float = 50.0
    kappa: float = 1.0
    tau_mu: float = 0.01
    tau_v: float = 0.01
    reseed_on_entry: bool = True
    I_lim: float = 1.1
    limiter_frame: str = "stationary"
    adaptive: AdaptiveViConfig = AdaptiveViConfig()
    tau_i_feedback: float = 1e-3
    current_forming_m_p: float = 0.02
    neg_seq: NegSeqMode = NegSeqMode()
    power_feedback: str = "auto"
    magnitude_droop_in_cf: bool = False
    mode_switch: ModeSwitchConfig = ModeSwitchConfig()
    v_dc: float = 1.0
    bus: Optional[str] = None

    def __post_init__(self):
        if self.forming not in FORMING_KINDS:
            raise ConfigurationError(f"unknown forming reference {self.forming!r}")
        if self.regulator not in REGULATORS:
            raise ConfigurationError(f"unknown regulator {self.regulator!r}")
        if not isinstance(self.params, PARAMS_FOR[self.forming]):
            raise ConfigurationError(f"{self.forming} needs {PARAMS_FOR[self.forming].__name__}")
        if self.z_v == 0:
            raise ConfigurationError("virtual impedance must be nonzero")
        if self.power_feedback not in ("auto", "virtual", "measured"):
            raise ConfigurationError("power_feedback must be auto, virtual or measured")
        if self.mode_switch.I_lim != self.I_lim:
            object.__setattr__(self, "mode_switch", replace(self.mode_switch, I_lim=self.I_lim))

    @property
    def uses_virtual_power(self) -> bool:
        if self.power_feedback == "auto":
            return self.regulator in ("explicit", "implicit")
        return self.power_feedback == "virtual"

    @property
    def switches_mode(self) -> bool:
        return self.regulator in ("explicit", "implicit", "current_forming")


@dataclass(frozen=True)
class SetpointEvent:
    t: float
    inverter: int
    p_star: Optional[float] = None
    q_star: Optional[float] = None
    v_dc: Optional[float] = None


class RecordRow(NamedTuple):
    t: float
    inverter: int
    v_pos: complex
    v_neg: complex
    i_pos: complex
    i_neg: complex
    i_maxphase: float
    p: float
    q: float
    p_virtual: float
    theta_rel: float
    omega: float
    mu: float
    v_lambda_mag: float
    mode: str


@dataclass
class ScenarioResult:
    rows: list
    events: list
    status: str = "ok"
    message: str = ""
    runtime: float = 0.0
    world: object = None

    def series(self, name: str, inverter: int = 0) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows if r.inverter == inverter])


class _Out(NamedTuple):
    v_pos: complex
    v_neg: complex
    v_hat: complex
    i_hat: complex
    i_neg_hat: complex
    mu: float
    vf_peak: float
    v_lambda_mag: float
    omega: float


class InverterModel:
    """Right-hand side of one inverter; mode and live setpoints are held outside the stages."""

    def __init__(self, spec: InverterSpec, tau_c: float):
        self.spec = spec
        self.params = spec.params
        self.tau_c = tau_c
        self.mode = VF
        self.timers = ModeTimers()
        self.psi = 0.0
        self.v_dc = spec.v_dc
        self.z = complex(spec.z_v)
        self.virtual = spec.uses_virtual_power
        self.clamped_for = 0.0

    def reference(self, x, vp, ip, cf):
        """Forming reference vector (rotating frame) for the given mode."""
        s, prm = self.spec, self.params
        if s.forming == "dvoc":
            return x[3]
        if s.forming == "complex_droop":
            v = x[2]
        elif cf and not s.magnitude_droop_in_cf:
            v = prm.v_star
        else:
            q = (vp * ip.conjugate()).imag
            v = prm.v_star + prm.m_q * (prm.q_star - q)
        return cmath.rect(v, x[0])

    def vf_reference(self, x, vp, v_hat):
        """Positive-sequence reference the voltage-forming mode would produce."""
        reg = self.spec.regulator
        if reg == "implicit":
            return (v_hat - x[6]) / self.z
        if reg == "adaptive_vi":
            zad = adaptive_vi_drop(x[7], self.spec.adaptive)
            return (v_hat - zad * x[8] - vp) / self.z
        return (v_hat - vp) / self.z

    def neg_reference(self, x, vp, vn, i_hat):
        mode = self.spec.neg_seq
        if mode.kind == "balanced":
            return 0j
        if mode.kind == "v_mitigation" and mode.tau_filter > 0:
            vn = x[10]
        return neg_seq_reference(mode, SequencePhasor(vp, vn), i_hat)

    def rates(self, x, vp, vn, freeze=False, want=False):
        s, prm = self.spec, self.params
        cf = self.mode is CF
        reg = s.regulator
        ip, ineg = x[8], x[9]
        I_lim = s.I_lim
        v_hat = self.reference(x, vp, ip, cf)
        lam = 1.0
        if cf:
            if reg == "explicit":
                mag = abs(v_hat)
                u = v_hat / mag if mag > 0 else cmath.rect(1.0, x[0])
                i_hat = (x[4] * u - vp) / self.z
                # the integrator may rest on its lower clamp; keep the feedback scaling finite
                lam = max(x[4], MU_FLOOR * mag) / mag if mag > 0 else 1.0
            elif reg == "implicit":
                i_hat = (s.kappa * v_hat - x[6] / x[5]) / self.z
                lam = s.kappa * x[5]
            elif reg == "current_forming":
                i_hat = cmath.rect(I_lim, x[0] - self.psi)
            else:
                i_hat = self.vf_reference(x, vp, v_hat)
        else:
            i_hat = self.vf_reference(x, vp, v_hat)
        in_hat = self.neg_reference(x, vp, vn, i_hat)
        peak = max_phase_magnitude(i_hat, in_hat)
        if reg == "adaptive_vi" or peak <= I_lim:
            mu = 1.0
            ibar, inbar = i_hat, in_hat
        else:
            mu = I_lim / peak
            ibar, inbar = i_hat * mu, in_hat * mu

        d = [0.0] * NSTATE
        w0 = prm.omega0
        if not freeze:
            p_meas = (vp * ip.conjugate()).real
            p_fb = (v_hat * ip.conjugate()).real if self.virtual else p_meas
            kind = s.forming
            if kind == "vsm":
                if cf and reg == "current_forming":
                    d[0] = w0 * s.current_forming_m_p * (prm.p_star - p_meas)
                else:
                    d[0] = x[1] - w0
                    d[1] = w0 * (-prm.D * (x[1] - w0) / w0 + prm.p_star - p_fb) / prm.T_J
            elif kind == "droop":
                d[0] = w0 * prm.m_p * (prm.p_star - p_fb)
            elif kind == "dual_port":
                d[0] = w0 * (prm.m_p * (prm.p_star - p_fb) + prm.m_dc * (self.v_dc - prm.v_dc_star))
            elif kind == "dvoc":
                d[3] = dvoc_rates(x[3], ip, prm, lam, frame_omega=w0)
            else:
                io = ip / lam
                sv = v_hat * io.conjugate()
                v2 = x[2] * x[2]
                vs2 = prm.v_star**2
                d[0] = prm.eta * (prm.p_star / vs2 - sv.real / v2)
                d[2] = x[2] * (prm.eta * (prm.q_star / vs2 - sv.imag / v2) + prm.eta * prm.alpha * (vs2 - v2) / vs2)
        if reg == "explicit" and cf:
            g = s.kappa_i * (I_lim - peak)
            if (x[4] <= 0.0 and g < 0) or (x[4] >= 2 * prm.v_star and g > 0):
                g = 0.0
            d[4] = g
        if reg == "implicit":
            d[6] = (vp - x[6]) / s.tau_v
            if cf:
                d[5] = (max(mu, MU_FLOOR) - x[5]) / s.tau_mu
        if reg == "adaptive_vi":
            d[7] = (max_phase_magnitude(ip, ineg) - x[7]) / s.tau_i_feedback
        d[8] = (ibar - ip) / self.tau_c
        d[9] = (inbar - ineg) / self.tau_c
        if s.neg_seq.kind == "v_mitigation" and s.neg_seq.tau_filter > 0:
            d[10] = (vn - x[10]) / s.neg_seq.tau_filter
        if not want:
            return d
        # saturation detection uses the unfiltered virtual-admittance candidate
        va_hat = (self.reference(x, vp, ip, False) - vp) / self.z
        vf_peak = max_phase_magnitude(va_hat, self.neg_reference(x, vp, vn, va_hat))
        if cf and reg == "explicit":
            vlam = x[4]
        elif cf and reg == "implicit":
            vlam = s.kappa * x[5] * abs(v_hat)
        else:
            vlam = abs(v_hat)
        if s.forming == "vsm" and not (cf and reg == "current_forming"):
            omega = x[1]
        elif s.forming == "dvoc":
            omega = w0 + (d[3] / x[3]).imag if x[3] != 0 else w0
        else:
            omega = w0 + d[0]
        return d, _Out(vp, vn, v_hat, i_hat, in_hat, mu, vf_peak, vlam, omega)


class World:
    """Inverters, network and event schedule, advanced by ``step``."""

    def __init__(self, inverters, network, faults=(), setpoints=(), config: SimConfig = SimConfig()):
        self.config = config
        self.models = [InverterModel(s, config.tau_c) for s in inverters]
        self.network = network
        self.faults = sorted(faults, key=lambda f: f.t_on)
        self.setpoints = sorted(setpoints, key=lambda e: e.t)
        self._validate()
        self.k = 0
        self.t0 = 0.0
        self.x = [[0.0] * NSTATE for _ in self.models]
        self.fault = None
        self.events = []
        self._pending = self._schedule()
        self._set_topology(None)

    @property
    def t(self) -> float:
        return self.t0 + self.k * self.config.dt

    @property
    def multibus(self) -> bool:
        return isinstance(self.network, MultiBusNetwork)

    def _validate(self):
        for a, b in zip(self.faults, self.faults[1:]):
            if b.t_on < a.t_clear:
                raise ConfigurationError("overlapping fault events are not supported")
        if self.multibus:
            if len(self.network.inverters) != len(self.models):
                raise ConfigurationError("network inverter list does not match the inverter blocks")
            for m in self.models:
                if m.spec.neg_seq.kind != "balanced":
                    raise ConfigurationError("multi-bus scenarios are positive-sequence only")
            for f in self.faults:
                if f.kind not in ("three_phase", "voltage_dip"):
                    raise ConfigurationError("multi-bus scenarios support three_phase and voltage_dip faults")
                if f.kind == "three_phase" and f.bus not in self.network.buses:
                    raise ConfigurationError(f"fault bus {f.bus!r} does not exist")
        elif len(self.models) != 1:
            raise ConfigurationError("a Thevenin grid takes exactly one inverter")
        for e in self.setpoints:
            if not 0 <= e.inverter < len(self.models):
                raise ConfigurationError(f"setpoint event refers to inverter {e.inverter}")

    def _schedule(self):
        items = []
        for f in self.faults:
            items.append((f.t_on, 0, "fault_on", f))
            if math.isfinite(f.t_clear):
                items.append((f.t_clear, 0, "fault_clear", f))
        for e in self.setpoints:
            items.append((e.t, 1, "setpoint", e))
        items.sort(key=lambda it: (it[0], it[1]))
        return items

    def _set_topology(self, fault):
        self.fault = fault
        if self.multibus:
            self.map = self.network.terminal_map(fault)
        else:
            self.map = thevenin_map(self.network, fault)
        m = self.map
        self._e = list(m.e)
        self._M = [list(r) for r in m.M]

    def voltages(self, xs):
        """Terminal (v_pos, v_neg) of every inverter for the stacked states."""
        if self.multibus:
            cur = [x[8] for x in xs]
            out = []
            for e, row in zip(self._e, self._M):
                v = e
                for mk, ij in zip(row, cur):
                    v += mk * ij
                out.append((v, 0j))
            return out
        x = xs[0]
        i1, i2 = x[8], x[9].conjugate()
        (m00, m01), (m10, m11) = self._M
        v1 = self._e[0] + m00 * i1 + m01 * i2
        v2 = self._e[1] + m10 * i1 + m11 * i2
        return [(v1, v2.conjugate())]

    def derivatives(self, xs, want=False):
        freeze = self.config.freeze_forming
        vs = self.voltages(xs)
        if want:
            return [m.rates(x, vp, vn, freeze, True) for m, x, (vp, vn) in zip(self.models, xs, vs)]
        return [m.rates(x, vp, vn, freeze) for m, x, (vp, vn) in zip(self.models, xs, vs)]

    def step(self):
        dt = self.config.dt
        xs = self.x
        k1 = self.derivatives(xs)
        k2 = self.derivatives([[a + 0.5 * dt * b for a, b in zip(x, k)] for x, k in zip(xs, k1)])
        k3 = self.derivatives([[a + 0.5 * dt * b for a, b in zip(x, k)] for x, k in zip(xs, k2)])
        k4 = self.derivatives([[a + dt * b for a, b in zip(x, k)] for x, k in zip(xs, k3)])
        h = dt / 6.0
        self.x = [
            [a + h * (b1 + 2 * b2 + 2 * b3 + b4) for a, b1, b2, b3, b4 in zip(x, d1, d2, d3, d4)]
            for x, d1, d2, d3, d4 in zip(xs, k1, k2, k3, k4)
        ]
        self.k += 1
        self._post_step()

    def _post_step(self):
        lim = self.config.divergence_limit
        for n, (m, x) in enumerate(zip(self.models, self.x)):
            if x[4] < 0.0:
                x[4] = 0.0
            elif m.spec.regulator == "explicit" and x[4] > 2 * m.params.v_star:
                x[4] = 2 * m.params.v_star
            if m.spec.regulator == "implicit" and x[5] < MU_FLOOR:
                x[5] = MU_FLOOR
            w0 = m.params.omega0
            worst = max(abs(x[1] - w0) / w0 if m.spec.forming == "vsm" else 0.0, *(abs(v) for v in x[2:]))
            if not worst < lim or not math.isfinite(x[0]):
                raise SimulationDiverged(f"state magnitude {worst:.3g} exceeded {lim:g} for inverter {n} at t={self.t:.6f} s")

    def apply_events(self):
        """Apply every event due at the current step boundary."""
        eps = 1e-9 * self.config.dt
        t = self.t
        while self._pending and self._pending[0][0] <= t + eps:
            when, _, kind, ev = self._pending.pop(0)
            if kind == "fault_on":
                self._set_topology(ev)
            elif kind == "fault_clear":
                self._set_topology(None)
            else:
                m = self.models[ev.inverter]
                changes = {k: getattr(ev, k) for k in ("p_star", "q_star") if getattr(ev, k) is not None}
                if changes:
                    m.params = replace(m.params, **changes)
                if ev.v_dc is not None:
                    m.v_dc = ev.v_dc
            self.events.append((t, kind, _describe(kind, ev)))

    def update_modes(self, outs):
        dt = self.config.dt
        for n, (m, x, (_, o)) in enumerate(zip(self.models, self.x, outs)):
            if not m.spec.switches_mode:
                continue
            before = m.mode
            m.mode, m.timers = mode_switch(m.mode, o.vf_peak, abs(o.v_pos), m.timers, m.spec.mode_switch, dt)
            if m.mode is before:
                continue
            if m.mode is CF:
                self._enter_cross_forming(m, x, o)
                self.events.append((self.t, "mode", f"inverter {n} enters cross_forming"))
            else:
                self._exit_cross_forming(m, x)
                self.events.append((self.t, "mode", f"inverter {n} returns to voltage_forming"))

    def _enter_cross_forming(self, m, x, o):
        s = m.spec
        if s.regulator == "explicit":
            x[4] = m.params.v_star if s.reseed_on_entry else abs(o.v_hat)
        elif s.regulator == "implicit":
            x[5] = 1.0
        elif s.regulator == "current_forming":
            ibar = o.i_hat * o.mu
            m.psi = x[0] - cmath.phase(ibar) if ibar != 0 else 0.0

    def _exit_cross_forming(self, m, x):
        if m.spec.regulator == "current_forming" and m.spec.forming == "vsm":
            vp = self.voltages(self.x)[self.models.index(m)][0]
            p = (vp * x[8].conjugate()).real
            x[1] = m.params.omega0 * (1.0 + m.spec.current_forming_m_p * (m.params.p_star - p))

    def check_clamps(self, outs):
        """Flag regulators pinned at their bounds: the saturated geometry has no operating point."""
        dt = self.config.dt
        for n, (m, x) in enumerate(zip(self.models, self.x)):
            pinned = False
            if m.mode is CF and m.spec.regulator == "explicit":
                pinned = x[4] <= 0.0 or x[4] >= 2 * m.params.v_star
            elif m.mode is CF and m.spec.regulator == "implicit":
                pinned = x[5] <= MU_FLOOR * (1 + 1e-9)
            m.clamped_for = m.clamped_for + dt if pinned else 0.0
            if pinned and abs(m.clamped_for - 0.02) < 0.5 * dt:
                self.events.append((self.t, "no_operating_point", f"inverter {n} regulator pinned at its bound"))

    def snapshot(self, outs):
        rows = []
        t = self.t
        for n, (m, x, (_, o)) in enumerate(zip(self.models, self.x, outs)):
            ip, ineg = x[8], x[9]
            s = o.v_pos * ip.conjugate() + o.v_neg * ineg.conjugate()
            theta = x[0] if m.spec.forming != "dvoc" else cmath.phase(x[3])
            rows.append(
                RecordRow(
                    t, n, o.v_pos, o.v_neg, ip, ineg, max_phase_magnitude(ip, ineg), s.real, s.imag,
                    (o.v_hat * ip.conjugate()).real, theta, o.omega, o.mu, o.v_lambda_mag, m.mode.value,
                )
            )
        return rows


def _describe(kind, ev):
    if kind == "setpoint":
        parts = [f"{k}={getattr(ev, k)!r}" for k in ("p_star", "q_star", "v_dc") if getattr(ev, k) is not None]
        return f"inverter {ev.inverter}: " + ", ".join(parts)
    if ev.kind == "voltage_dip":
        return f"voltage_dip magnitude={ev.magnitude!r} phase_jump={ev.phase_jump!r}"
    return f"{ev.kind} r_f={ev.r_f!r}" + (f" bus={ev.bus}" if ev.bus else "")


def simulate(world: World, t_end: Optional[float] = None, record: bool = True) -> ScenarioResult:
    """Run to ``t_end`` and collect decimated records.

    Divergence ends the run early with ``status='diverged'``; a regulator
    pinned at its bound for 20 ms is reported as ``no_operating_point``.
    """
    cfg = world.config
    t_end = cfg.t_end if t_end is None else t_end
    n_steps = int(round((t_end - world.t) / cfg.dt))
    rows = []
    status, message = "ok", ""
    start = time.perf_counter()
    world.apply_events()
    outs = world.derivatives(world.x, want=True)
    if record:
        rows.extend(world.snapshot(outs))
    try:
        for n in range(1, n_steps + 1):
            world.step()
            world.apply_events()
            outs = world.derivatives(world.x, want=True)
            world.update_modes(outs)
            world.check_clamps(outs)
            if record and n % cfg.decimation == 0:
                rows.extend(world.snapshot(outs))
    except SimulationDiverged as exc:
        status, message = "diverged", str(exc)
    if status == "ok" and any(e[1] == "no_operating_point" for e in world.events):
        status, message = "no_operating_point", "regulator pinned at its bound"
    return ScenarioResult(rows, list(world.events), status, message, time.perf_counter() - start, world)


# --- equilibrium --------------------------------------------------------


def _steady_currents(world: World, v_hats, adaptive_mags=None):
    """Voltage-forming steady currents for given references (positive sequence).

    ``adaptive_mags`` maps inverter index to the current magnitude that sets
    its adaptive virtual impedance.
    """
    n = len(world.models)
    m = world.map
    e = np.array(m.e[:n] if world.multibus else m.e[:1])
    M = np.array(m.M)[:n, :n] if world.multibus else np.array([[m.M[0][0]]])
    mags = adaptive_mags or {}
    z = np.array([mod.z + (adaptive_vi_drop(mags[k], mod.spec.adaptive) if k in mags else 0) for k, mod in enumerate(world.models)])
    i = np.linalg.solve(np.diag(z) + M, np.asarray(v_hats) - e)
    return i, e + M @ i


def initialize_equilibrium(world: World, theta_guess: Optional[list] = None) -> World:
    """Place every state at the pre-fault voltage-forming equilibrium.

    Unknowns per inverter are the reference angle and magnitude (or the
    dVOC vector). Islanded networks add the common frequency as an unknown
    with the first angle pinned at zero.
    """
    if world.fault is not None:
        raise ConfigurationError("initialize before any fault is active")
    models = world.models
    n = len(models)
    islanded = world.multibus and not world.network.sources
    theta0 = theta_guess or [0.0] * n

    # adaptive-VI inverters whose impedance is active; found in a second pass
    adaptive = []
    n_ref = len(models) * 2 - (1 if islanded else 0)

    def unpack(u):
        refs = []
        for k, mod in enumerate(models):
            if islanded and k == 0:
                a, r = 0.0, u[0]
            else:
                a, r = u[2 * k - (1 if islanded else 0)], u[2 * k + 1 - (1 if islanded else 0)]
            refs.append((a, r))
        mags = {k: u[n_ref + j] for j, k in enumerate(adaptive)}
        w_s = u[-1] if islanded else None
        return refs, mags, w_s

    def build(u):
        refs, mags, w_s = unpack(u)
        v_hats = []
        for mod, (a, r) in zip(models, refs):
            if mod.spec.forming == "dvoc":
                v_hats.append(complex(a, r))
            else:
                v_hats.append(cmath.rect(r, a))
        i, v = _steady_currents(world, v_hats, mags)
        return v_hats, i, v, w_s, mags

    def residual(u):
        v_hats, i, v, w_s, mags = build(u)
        res = []
        for mod, vh, ik, vk in zip(models, v_hats, i, v):
            prm, s = mod.params, mod.spec
            w0 = prm.omega0
            target = w0 if w_s is None else w_s
            sv = vk * ik.conjugate()
            p_fb = (vh * ik.conjugate()).real if mod.virtual else sv.real
            if s.forming == "dvoc":
                d = dvoc_rates(vh, ik, prm, 1.0, frame_omega=target)
                res += [d.real, d.imag]
                continue
            if s.forming == "vsm":
                res.append((-prm.D * (target - w0) / w0 + prm.p_star - p_fb))
            elif s.forming == "droop":
                res.append(w0 * (1 + prm.m_p * (prm.p_star - p_fb)) - target if prm.m_p > 0 or w_s is not None else 0.0)
            elif s.forming == "dual_port":
                res.append(w0 * (1 + prm.m_p * (prm.p_star - p_fb) + prm.m_dc * (mod.v_dc - prm.v_dc_star)) - target)
            else:
                vs = (vh * ik.conjugate())
                v2 = abs(vh) ** 2
                vs2 = prm.v_star**2
                res.append(w0 + prm.eta * (prm.p_star / vs2 - vs.real / v2) - target)
            if s.forming == "complex_droop":
                v2 = abs(vh) ** 2
                vs2 = prm.v_star**2
                res.append(prm.eta * (prm.q_star / vs2 - (vh * ik.conjugate()).imag / v2) + prm.eta * prm.alpha * (vs2 - v2) / vs2)
            else:
                res.append(abs(vh) - (prm.v_star + prm.m_q * (prm.q_star - sv.imag)))
        res += [mags[k] - abs(i[k]) for k in adaptive]
        return np.array(res)

    u0 = []
    for k, mod in enumerate(models):
        vs = mod.params.v_star
        if mod.spec.forming == "dvoc":
            c = cmath.rect(vs, theta0[k])
            u0 += [c.real, c.imag]
        elif islanded and k == 0:
            u0 += [vs]
        else:
            u0 += [theta0[k], vs]
    tail = [models[0].params.omega0] if islanded else []
    u0 = np.array(u0 + tail, dtype=float)
    if len(u0) != len(residual(u0)):
        raise ConfigurationError("islanded initialization is only supported for angle-based references")

    def solve(u0):
        scale = np.where(np.abs(u0) > 10, np.abs(u0), 1.0)
        sol = optimize.root(lambda z: residual(z * scale), u0 / scale, method="hybr", options={"xtol": 1e-14, "maxfev": 50 * (len(u0) + 1)})
        return sol.x * scale

    u = solve(u0)
    # the adaptive impedance switches on above I_th; re-solve with the
    # magnitudes as unknowns, starting from the inactive solution
    i_first = build(u)[1]
    over = [k for k, mod in enumerate(models) if mod.spec.regulator == "adaptive_vi" and abs(i_first[k]) > mod.spec.adaptive.I_th]
    if over:
        adaptive[:] = over
        head = u[: n_ref]
        u = solve(np.concatenate([head, [abs(i_first[k]) for k in over], u[n_ref:]]))
    r = residual(u)
    if not np.all(np.isfinite(r)) or np.max(np.abs(r)) > 1e-10:
        raise ConfigurationError(
            f"no pre-fault equilibrium found (residual {np.max(np.abs(r)):.3g}); the setpoints may exceed the power transfer limit"
        )
    v_hats, i, v, w_s, _ = build(u)
    for mod, x, vh, ik, vk in zip(models, world.x, v_hats, i, v):
        s, prm = mod.spec, mod.params
        x[:] = [0.0] * NSTATE
        x[0] = cmath.phase(vh)
        x[1] = prm.omega0 if w_s is None else w_s
        x[2] = abs(vh)
        x[3] = complex(vh) if s.forming == "dvoc" else 0j
        x[4] = prm.v_star
        x[5] = 1.0
        x[6] = complex(vk)
        x[7] = abs(ik)
        x[8] = complex(ik)
        x[9] = 0j
        x[10] = 0j
        if abs(ik) > s.I_lim:
            raise ConfigurationError("the pre-fault operating point already exceeds the current limit")
        mod.mode, mod.timers = VF, ModeTimers()
    return world
