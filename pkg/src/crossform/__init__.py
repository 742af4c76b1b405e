"""Cross-forming control of grid-forming inverters under current saturation."""

from .phasor import SequencePhasor, max_phase_magnitude, phase_magnitudes
from .scenario import Scenario, build_world, load_scenario
from .sim import ScenarioResult, SimConfig, World, simulate

__version__ = "0.1.0"

__all__ = [
    "SequencePhasor",
    "max_phase_magnitude",
    "phase_magnitudes",
    "Scenario",
    "build_world",
    "load_scenario",
    "ScenarioResult",
    "SimConfig",
    "World",
    "simulate",
]
