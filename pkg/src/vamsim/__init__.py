"""Desk-scale VAM redundancy-mitigation simulator."""

from .channel import ChannelConfig, Outcome
from .engine import ConfigError, RunConfig, RunOutput, run, run_matrix
from .kernels import BACKEND
from .redundancy import Mode, RmConfig
from .scenario import MobilityTrace, Obstacle, TraceError
from .vam import GenThresholds

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "ChannelConfig", "ConfigError", "GenThresholds", "MobilityTrace", "Mode", "Obstacle",
    "Outcome", "RmConfig", "RunConfig", "RunOutput", "TraceError", "run", "run_matrix",
]
