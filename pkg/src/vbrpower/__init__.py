"""Downlink power allocation for stored VBR video sessions in one cell."""

from .baseline import allocate_diversity
from .channel import ChannelModel, ChannelState
from .config import RunConfig, load_config
from .dual_solver import ConcaveProblem, SolverConfig, solve_distributed
from .rate_model import PowerBounds, SinrBounds, power_bounds, sinr, sinr_bounds
from .simulator import RunSummary, Simulation
from .step1 import allocate_step1
from .step2 import allocate_proposed, allocate_step2
from .traces import FrameTrace, VideoSession, bundled_trace, load_trace, synthetic_trace

__version__ = "0.1.0"

__all__ = [
    "ChannelModel",
    "ChannelState",
    "ConcaveProblem",
    "FrameTrace",
    "PowerBounds",
    "RunConfig",
    "RunSummary",
    "Simulation",
    "SinrBounds",
    "SolverConfig",
    "VideoSession",
    "allocate_diversity",
    "allocate_proposed",
    "allocate_step1",
    "allocate_step2",
    "bundled_trace",
    "load_config",
    "load_trace",
    "power_bounds",
    "sinr",
    "sinr_bounds",
    "solve_distributed",
    "synthetic_trace",
]
