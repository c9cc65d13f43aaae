"""Cooperative bistatic OFDM sensing between a macro and a micro base station."""

from .scenario import (GeometryError, GridSpec, Scenario, SystemConfig, Target, build_grid,
                       desk_config, reference_scenario)
from .waveform import EchoTensor, GainMode, Side, synthesize_echo
from .fusion import FusedTensor, FusionMode, Occupancy, fuse_symbol_level
from .estimators import EstimationError, Method, gdft_spectrum, localize, pick_peaks
from .evaluation import (Cooperation, ExperimentSpec, FusionLevel, desk_experiment, run_cell,
                         run_sweep)

__all__ = [
    "GeometryError", "GridSpec", "Scenario", "SystemConfig", "Target", "build_grid",
    "desk_config", "reference_scenario", "EchoTensor", "GainMode", "Side", "synthesize_echo",
    "FusedTensor", "FusionMode", "Occupancy", "fuse_symbol_level", "EstimationError", "Method",
    "gdft_spectrum", "localize", "pick_peaks", "Cooperation", "ExperimentSpec", "FusionLevel",
    "desk_experiment", "run_cell", "run_sweep",
]
__version__ = "0.1.0"
