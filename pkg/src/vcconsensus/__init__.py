"""Consensus of double-integrator agents with nonconvex velocity constraints.

Agents exchange delayed positions over switching directed graphs; each
control input is radially scaled into the agent's velocity set. The package
simulates the closed loop and certifies its convergence through products of
row-stochastic matrices.
"""

from ._kernels import BACKEND
from .analysis import analyze, build_step_matrices, dual_simulate, fit_exponential_rate
from .config import ScenarioConfig, load_config
from .constraints import AxisBox, Ball, ConstraintSet, Intersection, SampledOracle, Union
from .graphs import GraphSnapshot, PeriodicSchedule, RandomSchedule, has_directed_spanning_tree
from .protocol import Trajectory, run, simulate

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "AxisBox",
    "Ball",
    "ConstraintSet",
    "GraphSnapshot",
    "Intersection",
    "PeriodicSchedule",
    "RandomSchedule",
    "SampledOracle",
    "ScenarioConfig",
    "Trajectory",
    "Union",
    "analyze",
    "build_step_matrices",
    "dual_simulate",
    "fit_exponential_rate",
    "has_directed_spanning_tree",
    "load_config",
    "run",
    "simulate",
]
