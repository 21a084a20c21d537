"""Microscopic simulator for signalized arterials with a manual/smart fleet and platoons."""

from .carfollow import IIDM_DEFAULT, KRAUSS_COMPANION, MANUAL, SMART, VehicleClassParams, equilibrium_headway
from .engine import SimResult, SimState, run
from .network import ScenarioError
from .scenario import (
    ScenarioConfig,
    apply_parameter,
    build_arterial,
    build_single_intersection,
    load_scenario,
    save_scenario,
    saturated,
)

__all__ = [
    "IIDM_DEFAULT",
    "KRAUSS_COMPANION",
    "MANUAL",
    "SMART",
    "ScenarioConfig",
    "ScenarioError",
    "SimResult",
    "SimState",
    "VehicleClassParams",
    "apply_parameter",
    "build_arterial",
    "build_single_intersection",
    "equilibrium_headway",
    "load_scenario",
    "run",
    "save_scenario",
    "saturated",
]
