"""Steady-state analysis and average-model simulation of MMC modulation schemes."""

from .core import (
    Config,
    ConverterParams,
    OperatingPoint,
    RequiredRange,
    Scheme,
    derive_constants,
    load_config,
    preset,
)
from .errors import (
    BracketError,
    InvalidParameterError,
    ModlabError,
    NotSettledError,
    SimulationAborted,
    SolverError,
)
from .steady_state import solve, solve_direct, solve_improved_direct, solve_indirect

__version__ = "0.1.0"

__all__ = [
    "BracketError",
    "Config",
    "ConverterParams",
    "InvalidParameterError",
    "ModlabError",
    "NotSettledError",
    "OperatingPoint",
    "RequiredRange",
    "Scheme",
    "SimulationAborted",
    "SolverError",
    "derive_constants",
    "load_config",
    "preset",
    "solve",
    "solve_direct",
    "solve_improved_direct",
    "solve_indirect",
    "__version__",
]
