"""Boundary feedback stabilization of a linearized two-phase channel flow.

A spectral toolkit for the coupled fourth-order mode systems of a sheared
binary mixture between two walls: collocation calculus, equilibrium
profiles, per-mode operator pencils with their duals, eigen machinery,
explicit wall-gain synthesis, and closed-loop time integration with decay
verification.
"""

from .config import RunConfig, load_config
from .feedback import GainSet, build_gains, lifting_identity_residual, omega
from .grid import Grid, build_grid, inner, reflect
from .operators import ModeIndex, ModePencil, assemble_pencil, assemble_adjoint
from .pipeline import ControlDesign, build_design
from .sim import DecayReport, ModeState, fit_decay, run_simulation
from .spectra import ActuatorChoice, EigenSet, determine_cutoff, solve_pencil_eigen
from .steady import PhysParams, SteadyState, build_steady_state

__version__ = "0.1.0"

__all__ = [
    "RunConfig",
    "load_config",
    "Grid",
    "build_grid",
    "inner",
    "reflect",
    "PhysParams",
    "SteadyState",
    "build_steady_state",
    "ModeIndex",
    "ModePencil",
    "assemble_pencil",
    "assemble_adjoint",
    "EigenSet",
    "ActuatorChoice",
    "solve_pencil_eigen",
    "determine_cutoff",
    "GainSet",
    "build_gains",
    "omega",
    "lifting_identity_residual",
    "ControlDesign",
    "build_design",
    "ModeState",
    "DecayReport",
    "run_simulation",
    "fit_decay",
    "__version__",
]
