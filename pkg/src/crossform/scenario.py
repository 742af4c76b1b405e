"""Scenario files: YAML in, validated dataclasses out, and back again.

Every section is a frozen dataclass whose fields are the accepted keys;
anything else is rejected. Complex numbers are written as strings such as
``"0.01+0.1j"``. ``echo`` produces the effective configuration with all
defaults filled in, and loading that text yields an identical Scenario.
"""

import dataclasses
import math
import typing
from dataclasses import dataclass, field
from typing import Optional

import yaml

from .cross_forming import ModeSwitchConfig
from .forming import OMEGA0, DroopParams, DualPortParams, DvocParams, VsmParams
from .limiting import AdaptiveViConfig
from .negseq import parse_neg_seq_mode
from .network import FaultEvent, MultiBusNetwork, NetworkError, TheveninGrid
from .sim import ConfigurationError, InverterSpec, SetpointEvent, SimConfig, World, initialize_equilibrium


class ScenarioError(ConfigurationError):
    def __init__(self, problems):
        self.problems = [problems] if isinstance(problems, str) else list(problems)
        super().__init__("; ".join(self.problems))


@dataclass(frozen=True)
class SimSection:
    dt: float = 1e-4
    t_end: float = 10.0
    tau_c: float = 1e-3
    decimation: int = 10
    divergence_limit: float = 1e3
    freeze_forming: bool = False


@dataclass(frozen=True)
class BaseSection:
    """System base used to convert ohmic fault resistances to pu."""

    v_ll_kv: float = 220.0
    s_mva: float = 200.0

    @property
    def z_base(self) -> float:
        return self.v_ll_kv**2 / self.s_mva


FORMING_KEYS = {
    "droop": ("m_p", "m_q"),
    "vsm": ("T_J", "D", "m_q"),
    "complex_droop": ("eta", "alpha", "phi"),
    "dvoc": ("eta", "alpha", "phi"),
    "dual_port": ("m_p", "m_q", "m_dc", "v_dc_star"),
}
COMMON_FORMING = ("kind", "p_star", "q_star", "v_star", "omega0")


@dataclass(frozen=True)
class FormingSection:
    kind: str = "vsm"
    p_star: float = 0.0
    q_star: float = 0.0
    v_star: float = 1.0
    omega0: float = OMEGA0
    m_p: float = 0.02
    m_q: float = 0.2
    T_J: float = 5.0
    D: float = 25.0
    eta: float = 20.0
    alpha: float = 1.0
    phi: float = math.pi / 2
    m_dc: float = 0.0
    v_dc_star: float = 1.0


@dataclass(frozen=True)
class RegulatorSection:
    kind: str = "explicit"
    z_v: complex = 0.2j
    kappa_i: float = 50.0
    kappa: float = 1.0
    tau_mu: float = 0.01
    tau_v: float = 0.01
    reseed_on_entry: bool = True
    power_feedback: str = "auto"
    magnitude_droop_in_cf: bool = False


@dataclass(frozen=True)
class LimiterSection:
    I_lim: float = 1.1
    frame: str = "stationary"


@dataclass(frozen=True)
class AdaptiveViSection:
    I_th: float = 1.0
    kappa_vi: float = 0.91
    sigma_vi: float = 10.0
    tau_i: float = 1e-3


@dataclass(frozen=True)
class CurrentFormingSection:
    m_p: float = 0.02


@dataclass(frozen=True)
class NegSeqSection:
    mode: str = "balanced"
    tau_filter: float = 0.0


@dataclass(frozen=True)
class ModeSwitchSection:
    t_enter: float = 1e-3
    v_recover: float = 0.9
    v_disarm: float = 0.5
    t_exit: float = 10e-3
    t_lock: float = 100e-3
    exit_requires_unsaturated: bool = False


@dataclass(frozen=True)
class InverterSection:
    name: str = "inv"
    bus: Optional[str] = None
    rating: float = 1.0
    v_dc: float = 1.0
    forming: FormingSection = FormingSection()
    regulator: RegulatorSection = RegulatorSection()
    limiter: LimiterSection = LimiterSection()
    adaptive_vi: AdaptiveViSection = AdaptiveViSection()
    current_forming: CurrentFormingSection = CurrentFormingSection()
    neg_seq: NegSeqSection = NegSeqSection()
    mode_switch: ModeSwitchSection = ModeSwitchSection()


@dataclass(frozen=True)
class NetworkSection:
    kind: str = "thevenin"
    z_g1: complex = 0.01 + 0.1j
    z_g2: complex = 0.003 + 0.03j
    v_g: complex = 1 + 0j
    z_g2_zero: Optional[complex] = None
    buses: tuple = ()
    branches: tuple = ()
    loads: tuple = ()
    sources: tuple = ()


EVENT_KEYS = {
    "fault": ("fault_type", "t_on", "t_clear", "r_f", "r_f_ohm", "bus", "p_star_fault", "detection_delay"),
    "voltage_dip": ("t_on", "t_clear", "magnitude", "phase_jump", "p_star_fault", "detection_delay"),
    "setpoint": ("t", "inverter", "p_star", "q_star", "v_dc"),
}


@dataclass(frozen=True)
class EventSection:
    """A fault, a source dip, or a setpoint step.

    ``p_star_fault`` on a fault or dip schedules every inverter's p* to that
    value ``detection_delay`` after onset and back at clearance.
    """

    kind: str = "fault"
    fault_type: str = "three_phase"
    t_on: float = 0.0
    t_clear: float = math.inf
    r_f: Optional[float] = None
    r_f_ohm: Optional[float] = None
    bus: Optional[str] = None
    magnitude: float = 1.0
    phase_jump: float = 0.0
    p_star_fault: Optional[float] = None
    detection_delay: float = 5e-3
    t: float = 0.0
    inverter: int = 0
    p_star: Optional[float] = None
    q_star: Optional[float] = None
    v_dc: Optional[float] = None


@dataclass(frozen=True)
class Scenario:
    name: str = "scenario"
    description: str = ""
    sim: SimSection = SimSection()
    base: BaseSection = BaseSection()
    network: NetworkSection = NetworkSection()
    inverters: tuple = (InverterSection(),)
    events: tuple = ()


LIST_ITEMS = {(Scenario, "inverters"): InverterSection, (Scenario, "events"): EventSection}


# --- parsing ------------------------------------------------------------


def _convert(value, tp, where, problems):
    origin = typing.get_origin(tp)
    if origin is typing.Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if value is None:
            return None
        return _convert(value, args[0], where, problems)
    if tp is bool:
        if isinstance(value, bool):
            return value
        problems.append(f"{where}: expected true/false, got {value!r}")
        return None
    if tp is int:
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        problems.append(f"{where}: expected an integer, got {value!r}")
        return None
    if tp is float:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        if isinstance(value, str):
            try:
                return float(value)
            except ValueError:
                pass
        problems.append(f"{where}: expected a number, got {value!r}")
        return None
    if tp is complex:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return complex(value)
        if isinstance(value, str):
            try:
                return complex(value.replace(" ", ""))
            except ValueError:
                pass
        problems.append(f"{where}: expected a complex number such as \"0.01+0.1j\", got {value!r}")
        return None
    if tp is str:
        if isinstance(value, str):
            return value
        problems.append(f"{where}: expected a string, got {value!r}")
        return None
    return value


def _build(cls, data, where, problems, defaulted):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        problems.append(f"{where or 'top level'}: expected a mapping, got {type(data).__name__}")
        return cls()
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(map(str, data)) - set(fields))
    for key in unknown:
        problems.append(f"{where + '.' if where else ''}{key}: unknown key (allowed: {', '.join(fields)})")
    kwargs = {}
    for name, f in fields.items():
        path = f"{where}.{name}" if where else name
        if name not in data:
            if not dataclasses.is_dataclass(f.type):
                defaulted.append(path)
            if (cls, name) in LIST_ITEMS or not dataclasses.is_dataclass(f.type):
                continue
            kwargs[name] = _build(f.type, {}, path, problems, defaulted)
            continue
        value = data[name]
        if (cls, name) in LIST_ITEMS:
            item = LIST_ITEMS[(cls, name)]
            if not isinstance(value, list):
                problems.append(f"{path}: expected a list")
                continue
            kwargs[name] = tuple(_build(item, v, f"{path}[{k}]", problems, defaulted) for k, v in enumerate(value))
        elif dataclasses.is_dataclass(f.type):
            kwargs[name] = _build(f.type, value, path, problems, defaulted)
        elif cls is NetworkSection and name in ("buses", "branches", "loads", "sources"):
            kwargs[name] = _network_table(name, value, path, problems)
        else:
            kwargs[name] = _convert(value, f.type, path, problems)
    kwargs = {k: v for k, v in kwargs.items() if v is not None or k in data}
    try:
        return cls(**kwargs)
    except TypeError as exc:
        problems.append(f"{where}: {exc}")
        return cls()


def _network_table(name, value, path, problems):
    if name == "buses":
        if not isinstance(value, list) or not all(isinstance(b, str) for b in value):
            problems.append(f"{path}: expected a list of bus names")
            return ()
        return tuple(value)
    if name == "loads":
        if not isinstance(value, dict):
            problems.append(f"{path}: expected a mapping bus -> impedance")
            return ()
        return tuple((str(b), _convert(z, complex, f"{path}.{b}", problems)) for b, z in value.items())
    width, label = (3, "[from, to, z]") if name == "branches" else (3, "[bus, z, v]")
    if not isinstance(value, list):
        problems.append(f"{path}: expected a list of {label}")
        return ()
    rows = []
    for k, row in enumerate(value):
        if not isinstance(row, list) or len(row) != width:
            problems.append(f"{path}[{k}]: expected {label}")
            continue
        if name == "branches":
            rows.append((str(row[0]), str(row[1]), _convert(row[2], complex, f"{path}[{k}]", problems)))
        else:
            rows.append((str(row[0]), _convert(row[1], complex, f"{path}[{k}]", problems), _convert(row[2], complex, f"{path}[{k}]", problems)))
    return tuple(rows)


def _semantic(sc: Scenario, raw) -> list:
    problems = []
    if sc.sim.dt <= 0:
        problems.append("sim.dt: must be positive")
    if sc.sim.tau_c <= 0:
        problems.append("sim.tau_c: must be positive")
    if sc.sim.decimation < 1:
        problems.append("sim.decimation: must be >= 1")
    if not sc.inverters:
        problems.append("inverters: at least one inverter is required")
    for k, inv in enumerate(sc.inverters):
        where = f"inverters[{k}]"
        fm = inv.forming
        if fm.kind not in FORMING_KEYS:
            problems.append(f"{where}.forming.kind: unknown reference {fm.kind!r} (expected one of {', '.join(FORMING_KEYS)})")
        else:
            given = set((_raw_at(raw, ("inverters", k, "forming")) or {}).keys())
            extra = sorted(given - set(COMMON_FORMING) - set(FORMING_KEYS[fm.kind]))
            for key in extra:
                problems.append(f"{where}.forming.{key}: not a parameter of {fm.kind}")
        if inv.regulator.kind not in ("explicit", "implicit", "virtual_admittance", "adaptive_vi", "current_forming"):
            problems.append(f"{where}.regulator.kind: unknown regulator {inv.regulator.kind!r}")
        if inv.regulator.z_v == 0:
            problems.append(f"{where}.regulator.z_v: must be nonzero")
        if inv.limiter.I_lim <= 0:
            problems.append(f"{where}.limiter.I_lim: must be positive")
        if inv.limiter.frame not in ("stationary", "dq"):
            problems.append(f"{where}.limiter.frame: expected stationary or dq")
        if not 0 < inv.adaptive_vi.I_th < inv.limiter.I_lim:
            problems.append(f"{where}.adaptive_vi.I_th: must lie in (0, I_lim)")
        try:
            parse_neg_seq_mode(inv.neg_seq.mode, inv.neg_seq.tau_filter)
        except ValueError as exc:
            problems.append(f"{where}.neg_seq.mode: {exc}")
        if inv.rating <= 0:
            problems.append(f"{where}.rating: must be positive")
        if inv.regulator.kind == "current_forming" and fm.kind != "vsm":
            problems.append(f"{where}.regulator: current_forming is paired with the vsm reference")
    net = sc.network
    if net.kind == "thevenin":
        if len(sc.inverters) != 1:
            problems.append("network: a thevenin grid takes exactly one inverter")
        if abs(net.z_g1 + net.z_g2) == 0:
            problems.append("network: z_g1 + z_g2 must be nonzero")
    elif net.kind == "multibus":
        names = set(net.buses)
        for k, inv in enumerate(sc.inverters):
            if inv.bus not in names:
                problems.append(f"inverters[{k}].bus: {inv.bus!r} is not a bus of the network")
        for k, (a, b, _) in enumerate(net.branches):
            for bus in (a, b):
                if bus not in names:
                    problems.append(f"network.branches[{k}]: unknown bus {bus!r}")
        for bus, _ in net.loads:
            if bus not in names:
                problems.append(f"network.loads: unknown bus {bus!r}")
        for k, (bus, _, _) in enumerate(net.sources):
            if bus not in names:
                problems.append(f"network.sources[{k}]: unknown bus {bus!r}")
    else:
        problems.append(f"network.kind: expected thevenin or multibus, got {net.kind!r}")
    last = -math.inf
    for k, ev in enumerate(sc.events):
        where = f"events[{k}]"
        if ev.kind not in EVENT_KEYS:
            problems.append(f"{where}.kind: expected fault, voltage_dip or setpoint")
            continue
        given = set((_raw_at(raw, ("events", k)) or {}).keys()) - {"kind"}
        for key in sorted(given - set(EVENT_KEYS[ev.kind])):
            problems.append(f"{where}.{key}: not used by a {ev.kind} event")
        start = ev.t if ev.kind == "setpoint" else ev.t_on
        if start < last:
            problems.append(f"{where}: events must be listed in time order")
        last = start
        if ev.kind == "setpoint":
            if not 0 <= ev.inverter < len(sc.inverters):
                problems.append(f"{where}.inverter: no inverter {ev.inverter}")
            continue
        if not ev.t_clear > ev.t_on:
            problems.append(f"{where}: t_clear must be after t_on")
        if ev.kind == "fault":
            if ev.fault_type not in ("three_phase", "slg", "llg"):
                problems.append(f"{where}.fault_type: expected three_phase, slg or llg")
            if ev.r_f is not None and ev.r_f_ohm is not None:
                problems.append(f"{where}: give r_f (pu) or r_f_ohm, not both")
            if (ev.r_f or 0) < 0 or (ev.r_f_ohm or 0) < 0:
                problems.append(f"{where}: fault resistance must be non-negative")
            if net.kind == "multibus" and ev.bus not in set(net.buses):
                problems.append(f"{where}.bus: {ev.bus!r} is not a bus of the network")
    return problems


def _raw_at(raw, path):
    node = raw
    for key in path:
        try:
            node = node[key]
        except (KeyError, IndexError, TypeError):
            return None
    return node


def load_text(text: str, source: str = "<string>") -> tuple:
    """Parse scenario text; returns (Scenario, list of defaulted keys)."""
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        loc = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ScenarioError(f"{source}: YAML parse error{loc}: {getattr(exc, 'problem', exc)}") from None
    problems, defaulted = [], []
    sc = _build(Scenario, raw if raw is not None else {}, "", problems, defaulted)
    if not problems:
        problems = _semantic(sc, raw or {})
    if problems:
        raise ScenarioError([f"{source}: {p}" for p in problems])
    return sc, defaulted


def load_scenario(path) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return load_text(fh.read(), str(path))[0]


def load_scenario_with_defaults(path) -> tuple:
    with open(path, encoding="utf-8") as fh:
        return load_text(fh.read(), str(path))


def from_dict(data: dict, source: str = "<dict>") -> Scenario:
    return load_text(yaml.safe_dump(data, sort_keys=False), source)[0]


# --- echo ---------------------------------------------------------------


def _plain(value):
    if isinstance(value, complex):
        return repr(value).strip("()")
    if isinstance(value, float) and math.isinf(value):
        return value
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    if dataclasses.is_dataclass(value):
        return to_dict(value)
    return value


def _applicable(obj):
    if isinstance(obj, FormingSection):
        return set(COMMON_FORMING) | set(FORMING_KEYS.get(obj.kind, ()))
    if isinstance(obj, EventSection):
        return {"kind"} | set(EVENT_KEYS.get(obj.kind, ()))
    return None


def to_dict(obj) -> dict:
    out = {}
    keep = _applicable(obj)
    for f in dataclasses.fields(obj):
        if keep is not None and f.name not in keep:
            continue
        v = getattr(obj, f.name)
        if isinstance(obj, NetworkSection) and f.name == "loads":
            out[f.name] = {b: _plain(z) for b, z in v}
        else:
            out[f.name] = _plain(v)
    return out


def echo(sc: Scenario, defaulted=()) -> str:
    """Effective configuration as YAML, with defaulted keys listed up front."""
    lines = ["# effective configuration"]
    if defaulted:
        lines.append("# keys filled from defaults:")
        lines += [f"#   {k}" for k in defaulted]
    body = yaml.safe_dump(to_dict(sc), sort_keys=False, default_flow_style=None, width=120)
    return "\n".join(lines) + "\n" + body


# --- world construction -------------------------------------------------


def _forming_params(fm: FormingSection):
    common = dict(p_star=fm.p_star, q_star=fm.q_star, v_star=fm.v_star, omega0=fm.omega0)
    if fm.kind == "droop":
        return DroopParams(m_p=fm.m_p, m_q=fm.m_q, **common)
    if fm.kind == "vsm":
        return VsmParams(T_J=fm.T_J, D=fm.D, m_q=fm.m_q, **common)
    if fm.kind == "dual_port":
        return DualPortParams(m_p=fm.m_p, m_q=fm.m_q, m_dc=fm.m_dc, v_dc_star=fm.v_dc_star, **common)
    return DvocParams(eta=fm.eta, alpha=fm.alpha, phi=fm.phi, **common)


def inverter_spec(inv: InverterSection) -> InverterSpec:
    reg, lim, ms = inv.regulator, inv.limiter, inv.mode_switch
    return InverterSpec(
        forming=inv.forming.kind,
        params=_forming_params(inv.forming),
        regulator=reg.kind,
        name=inv.name,
        z_v=reg.z_v,
        kappa_i=reg.kappa_i,
        kappa=reg.kappa,
        tau_mu=reg.tau_mu,
        tau_v=reg.tau_v,
        reseed_on_entry=reg.reseed_on_entry,
        I_lim=lim.I_lim,
        limiter_frame=lim.frame,
        adaptive=AdaptiveViConfig(inv.adaptive_vi.I_th, inv.adaptive_vi.kappa_vi, inv.adaptive_vi.sigma_vi, lim.I_lim),
        tau_i_feedback=inv.adaptive_vi.tau_i,
        current_forming_m_p=inv.current_forming.m_p,
        neg_seq=parse_neg_seq_mode(inv.neg_seq.mode, inv.neg_seq.tau_filter),
        power_feedback=reg.power_feedback,
        magnitude_droop_in_cf=reg.magnitude_droop_in_cf,
        mode_switch=ModeSwitchConfig(lim.I_lim, ms.t_enter, ms.v_recover, ms.v_disarm, ms.t_exit, ms.t_lock, ms.exit_requires_unsaturated),
        v_dc=inv.v_dc,
        bus=inv.bus,
    )


def build_network(sc: Scenario):
    net = sc.network
    if net.kind == "thevenin":
        return TheveninGrid(net.z_g1, net.z_g2, net.v_g, net.z_g2_zero)
    return MultiBusNetwork(
        list(net.buses),
        [tuple(b) for b in net.branches],
        [(inv.bus, inv.rating) for inv in sc.inverters],
        dict(net.loads),
        [tuple(s) for s in net.sources],
    )


def build_events(sc: Scenario):
    faults, setpoints = [], []
    for ev in sc.events:
        if ev.kind == "setpoint":
            setpoints.append(SetpointEvent(ev.t, ev.inverter, ev.p_star, ev.q_star, ev.v_dc))
            continue
        if ev.kind == "voltage_dip":
            faults.append(FaultEvent("voltage_dip", ev.t_on, ev.t_clear, magnitude=ev.magnitude, phase_jump=ev.phase_jump))
        else:
            r_f = ev.r_f if ev.r_f is not None else (ev.r_f_ohm or 0.0) / sc.base.z_base
            faults.append(FaultEvent(ev.fault_type, ev.t_on, ev.t_clear, r_f=r_f, bus=ev.bus))
        if ev.p_star_fault is not None:
            for k, inv in enumerate(sc.inverters):
                setpoints.append(SetpointEvent(ev.t_on + ev.detection_delay, k, p_star=ev.p_star_fault))
                if math.isfinite(ev.t_clear):
                    setpoints.append(SetpointEvent(ev.t_clear, k, p_star=inv.forming.p_star))
    return faults, setpoints


def build_world(sc: Scenario, dt: Optional[float] = None, t_end: Optional[float] = None) -> World:
    """Validated scenario -> initialized world at its pre-fault equilibrium."""
    s = sc.sim
    cfg = SimConfig(
        dt=s.dt if dt is None else dt,
        t_end=s.t_end if t_end is None else t_end,
        tau_c=s.tau_c,
        decimation=s.decimation,
        divergence_limit=s.divergence_limit,
        freeze_forming=s.freeze_forming,
    )
    faults, setpoints = build_events(sc)
    try:
        world = World([inverter_spec(inv) for inv in sc.inverters], build_network(sc), faults, setpoints, cfg)
    except (NetworkError, ValueError) as exc:
        raise ScenarioError(str(exc)) from None

    return initialize_equilibrium(world)
