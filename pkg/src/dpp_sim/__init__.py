"""Double pulsed positioning: clock-drift-robust TDoA/ToA simulation and solving."""

from .exceptions import DppError
from .measure import (
    MeasurementSet,
    admissible_triples,
    direct_distance,
    extract_tdoa_spans,
    extract_twr_spans,
    full_cycle_measurements,
    mu,
    tdoa_from_mu,
    toa_distance,
)
from .model import SPEED_OF_LIGHT, ClockModel, Node, Role, System, build_system
from .protocol import ProtocolConfig, build_dpp_schedule, simulate, simulate_cycle
from .scenario import load_scenario, parse_scenario
from .solve import embed_relative, pipeline_mobile, procrustes_align, solve_tdoa, solve_toa

__version__ = "0.1.0"

__all__ = [
    "SPEED_OF_LIGHT",
    "ClockModel",
    "DppError",
    "MeasurementSet",
    "Node",
    "ProtocolConfig",
    "Role",
    "System",
    "admissible_triples",
    "build_dpp_schedule",
    "build_system",
    "direct_distance",
    "embed_relative",
    "extract_tdoa_spans",
    "extract_twr_spans",
    "full_cycle_measurements",
    "load_scenario",
    "mu",
    "parse_scenario",
    "pipeline_mobile",
    "procrustes_align",
    "simulate",
    "simulate_cycle",
    "solve_tdoa",
    "solve_toa",
    "tdoa_from_mu",
    "toa_distance",
]
