"""Solver and geometric verifier for reduced volume equations on torus
bundles: periodic Monge-Ampere-type scalar PDEs solved by a continuity
method, cross-checked by an invariant-coframe exterior-algebra engine."""

__version__ = "0.1.0"

from .equations import CoframeParams, EquationSpec, Family
from .grid import ScalarField, TorusGrid
from .solver import SolveReport, SolverConfig, Status, continuity_solve, newton_solve
from .verify import VerificationReport, verify_solution

__all__ = [
    "CoframeParams",
    "EquationSpec",
    "Family",
    "ScalarField",
    "SolveReport",
    "SolverConfig",
    "Status",
    "TorusGrid",
    "VerificationReport",
    "continuity_solve",
    "newton_solve",
    "verify_solution",
    "__version__",
]
