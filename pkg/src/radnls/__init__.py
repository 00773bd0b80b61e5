"""Radial defocusing NLS with a potential: solver, diagnostics, bound states and scattering probes."""

__version__ = "0.1.0"

from .errors import *  # noqa: F401,F403
from .grid import (  # noqa: F401
    ModelParams,
    PotentialSpec,
    RadialField,
    RadialGrid,
    h1_inner,
    h1_norm,
    integrate,
    make_grid,
    radial_derivative,
)
from .operators import build_operator, free_propagate, linear_propagate, resolvent_apply  # noqa: F401
from .dynamics import Sponge, StepperConfig, Trajectory, evolve  # noqa: F401
