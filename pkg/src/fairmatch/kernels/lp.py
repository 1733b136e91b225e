"""Linear-program kernel.

Thin, contract-checked wrapper around scipy's HiGHS solver. Programs are
stated as maximizations; duals are reported in the max convention so that
primal and dual objectives agree at optimality.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

__all__ = ["LinearProgram", "LpSolution", "solve_lp"]

_STATUS = {0: "optimal", 1: "iteration_limit", 2: "infeasible", 3: "unbounded", 4: "numerical"}


@dataclass
class LinearProgram:
    """maximize objective @ x subject to rows and variable bounds.

    ``senses`` entries are "<=", ">=" or "=" per row of A. Bounds may be
    -inf/+inf. A may be dense or scipy sparse.
    """

    objective: np.ndarray
    A: object = None
    senses: list = field(default_factory=list)
    rhs: np.ndarray = None
    lower: np.ndarray = None
    upper: np.ndarray = None

    def n_vars(self):
        return np.asarray(self.objective).size


@dataclass
class LpSolution:
    status: str
    x: np.ndarray | None
    objective: float | None
    row_duals: np.ndarray | None
    lower_duals: np.ndarray | None
    upper_duals: np.ndarray | None
    dual_objective: float | None

    @property
    def optimal(self):
        return self.status == "optimal"


def _split_rows(A, senses, rhs):
    """Normalize to (A_ub, b_ub, A_eq, b_eq) with all inequalities <=."""
    if A is None or (hasattr(A, "shape") and A.shape[0] == 0):
        return None, None, None, None, np.array([], dtype=int), np.array([])
    senses = list(senses)
    rhs = np.asarray(rhs, dtype=float)
    sparse = sp.issparse(A)
    A = A.tocsr() if sparse else np.atleast_2d(np.asarray(A, dtype=float))
    ub_idx = [i for i, s in enumerate(senses) if s in ("<=", ">=")]
    eq_idx = [i for i, s in enumerate(senses) if s == "="]
    if len(ub_idx) + len(eq_idx) != len(senses):
        raise ValueError("row senses must be '<=', '>=' or '='")
    flip = np.array([-1.0 if senses[i] == ">=" else 1.0 for i in ub_idx])
    A_ub = b_ub = A_eq = b_eq = None
    if ub_idx:
        sub = A[ub_idx]
        A_ub = sp.diags(flip) @ sub if sparse else flip[:, None] * sub
        b_ub = flip * rhs[ub_idx]
    if eq_idx:
        A_eq = A[eq_idx]
        b_eq = rhs[eq_idx]
    return A_ub, b_ub, A_eq, b_eq, np.array(ub_idx + eq_idx), np.concatenate([flip, np.ones(len(eq_idx))]) if (ub_idx or eq_idx) else np.array([])


def solve_lp(lp: LinearProgram) -> LpSolution:
    """Solve an LP; on optimal the duals satisfy primal == dual objective."""
    c = np.asarray(lp.objective, dtype=float)
    if c.size < 1:
        raise ValueError("LP needs at least one variable")
    if not np.all(np.isfinite(c)):
        raise ValueError("objective has non-finite coefficients")
    nv = c.size
    lower = np.full(nv, -np.inf) if lp.lower is None else np.broadcast_to(np.asarray(lp.lower, float), (nv,))
    upper = np.full(nv, np.inf) if lp.upper is None else np.broadcast_to(np.asarray(lp.upper, float), (nv,))
    A_ub, b_ub, A_eq, b_eq, order, flips = _split_rows(lp.A, lp.senses, lp.rhs)

    res = linprog(
        -c,
        A_ub=A_ub,
        b_ub=b_ub,
        A_eq=A_eq,
        b_eq=b_eq,
        bounds=np.column_stack([lower, upper]),
        method="highs",
    )
    status = _STATUS.get(res.status, "numerical")
    if status != "optimal":
        return LpSolution(status, None, None, None, None, None, None)

    x = np.asarray(res.x)
    obj = float(c @ x)
    # HiGHS marginals are for the min problem; negate for the max convention
    # and undo the >= row flips so duals line up with the caller's rows.
    n_rows = len(lp.senses) if lp.senses else 0
    row_duals = np.zeros(n_rows)
    marg = []
    if A_ub is not None:
        marg.extend(-np.asarray(res.ineqlin.marginals) * flips[: A_ub.shape[0]])
    if A_eq is not None:
        marg.extend(-np.asarray(res.eqlin.marginals))
    for pos, i in enumerate(order):
        row_duals[i] = marg[pos]
    lower_duals = -np.asarray(res.lower.marginals)
    upper_duals = -np.asarray(res.upper.marginals)

    dual_obj = 0.0
    if n_rows:
        dual_obj += float(row_duals @ np.asarray(lp.rhs, dtype=float))
    finite_lo = np.isfinite(lower)
    finite_up = np.isfinite(upper)
    dual_obj += float(lower_duals[finite_lo] @ lower[finite_lo])
    dual_obj += float(upper_duals[finite_up] @ upper[finite_up])
    return LpSolution(status, x, obj, row_duals, lower_duals, upper_duals, dual_obj)
