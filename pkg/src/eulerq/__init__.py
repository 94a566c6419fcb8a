"""Fast simulation of Markovian queueing networks with backward, forward and averaged Euler schemes."""

__version__ = "0.1.0"

from .euler import AverageStats, SimConfig, SummaryStats, Trajectory, recommend_step, run_replications, simulate
from .netmodel import NetworkSpec, NodeSpec, RoutingMatrix, Schedule, steady_state_means, validate_network

__all__ = [
    "AverageStats",
    "NetworkSpec",
    "NodeSpec",
    "RoutingMatrix",
    "Schedule",
    "SimConfig",
    "SummaryStats",
    "Trajectory",
    "__version__",
    "recommend_step",
    "run_replications",
    "simulate",
    "steady_state_means",
    "validate_network",
]
