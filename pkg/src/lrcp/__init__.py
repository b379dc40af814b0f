"""Simulation and estimation toolkit for long-range contact processes."""

__version__ = "0.1.0"

from .engine import GraphicalWindow, SimConfig, Trajectory  # noqa: F401
from .geometry import SeedSet, Shell, SpaceTimeBox, box, separated  # noqa: F401
from .kernel import (  # noqa: F401
    InvalidKernelError,
    Kernel,
    find_tail_bound,
    finite_table,
    nearest_neighbor,
    power_law,
)
