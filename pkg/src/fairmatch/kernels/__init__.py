"""Numerical kernels: LP, concave QP, polytope projection, ascent drivers."""

from .ascent import AscentConfig, AscentResult, projected_gradient_ascent, projected_subgradient_ascent, write_trace_csv
from .lp import LinearProgram, LpSolution, solve_lp
from .projection import (
    SlabPolytope,
    feasibility_point,
    max_violation,
    polytope_rows,
    project_onto,
    project_qp,
    relaxed_polytope,
    xi_polytope,
)
from .qp import ConcaveQuadraticProgram, QpSolution, solve_concave_qp

__all__ = [
    "AscentConfig",
    "AscentResult",
    "ConcaveQuadraticProgram",
    "LinearProgram",
    "LpSolution",
    "QpSolution",
    "SlabPolytope",
    "feasibility_point",
    "max_violation",
    "polytope_rows",
    "project_onto",
    "project_qp",
    "projected_gradient_ascent",
    "projected_subgradient_ascent",
    "relaxed_polytope",
    "solve_concave_qp",
    "solve_lp",
    "write_trace_csv",
    "xi_polytope",
]
