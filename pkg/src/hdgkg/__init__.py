"""Hybridizable discontinuous Galerkin solver for the nonlinear Klein-Gordon equation."""

from .cases import ManufacturedCase, builtin_case, validate_case
from .hdg import Discretization, HDGState, SpaceConfig
from .harness import error_norms, run_convergence, run_energy, run_single
from .mesh import Mesh, build_structured
from .postprocess import postprocess
from .timestepping import Integrator, TimeConfig

__version__ = "0.1.0"

__all__ = [
    "ManufacturedCase",
    "builtin_case",
    "validate_case",
    "Discretization",
    "HDGState",
    "SpaceConfig",
    "error_norms",
    "run_convergence",
    "run_energy",
    "run_single",
    "Mesh",
    "build_structured",
    "postprocess",
    "Integrator",
    "TimeConfig",
]
