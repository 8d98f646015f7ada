"""System-level WLAN reliability simulator: MLO, R-TWT, preemption, multi-AP coordination."""

from .engine import Engine, RngStream, SchedulingError, SimTime
from .scenario import ScenarioConfig, ScenarioError, parse_scenario, preset_text

__all__ = [
    "Engine",
    "RngStream",
    "SchedulingError",
    "SimTime",
    "ScenarioConfig",
    "ScenarioError",
    "parse_scenario",
    "preset_text",
]

__version__ = "0.1.0"
