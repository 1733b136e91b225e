"""Concave quadratic program kernel backed by cvxopt.

Programs maximize  x' quad x + lin @ x + const  with quad symmetric NSD
(a 1-D ``quad`` is treated as a diagonal, the fast path used by the
ellipsoidal solvers). Zero-quadratic programs fall through to the LP kernel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from cvxopt import matrix as cvx_matrix
from cvxopt import solvers as cvx_solvers
from cvxopt import spmatrix as cvx_spmatrix

from .lp import LinearProgram, solve_lp

__all__ = ["ConcaveQuadraticProgram", "QpSolution", "solve_concave_qp"]

cvx_solvers.options["show_progress"] = False
# projections and xi-steps are compared across routes at 1e-5 positional
# accuracy, which needs objective accuracy well below cvxopt's defaults
cvx_solvers.options["abstol"] = 1e-11
cvx_solvers.options["reltol"] = 1e-11
cvx_solvers.options["feastol"] = 1e-9
cvx_solvers.options["maxiters"] = 200

_NSD_TOL = 1e-8
_DIAG_LOADING = 1e-10


@dataclass
class ConcaveQuadraticProgram:
    """maximize x' quad x + lin @ x + const over a polyhedron.

    quad: (d, d) symmetric NSD matrix, or (d,) diagonal, or None (pure LP).
    A_ub x <= b_ub, A_eq x = b_eq; bounds may be infinite.
    """

    quad: object
    lin: np.ndarray
    const: float = 0.0
    A_ub: object = None
    b_ub: np.ndarray = None
    A_eq: object = None
    b_eq: np.ndarray = None
    lower: np.ndarray = None
    upper: np.ndarray = None


@dataclass
class QpSolution:
    status: str
    x: np.ndarray | None
    objective: float | None

    @property
    def optimal(self):
        return self.status == "optimal"


def _check_nsd(quad):
    if quad is None:
        return
    if np.ndim(quad) == 1:
        if np.max(quad) > _NSD_TOL:
            raise ValueError("quadratic term is not negative semidefinite")
        return
    quad = np.asarray(quad, dtype=float)
    if not np.allclose(quad, quad.T, atol=1e-9):
        raise ValueError("quadratic term must be symmetric")
    if np.linalg.eigvalsh(quad).max() > _NSD_TOL:
        raise ValueError("quadratic term is not negative semidefinite")


def _to_cvx(A):
    if sp.issparse(A):
        coo = A.tocoo()
        return cvx_spmatrix(coo.data, coo.row.tolist(), coo.col.tolist(), size=coo.shape)
    return cvx_matrix(np.asarray(A, dtype=float))


def _objective(quad, lin, const, x):
    val = float(lin @ x) + const
    if quad is None:
        return val
    if np.ndim(quad) == 1:
        return val + float(quad @ (x * x))
    return val + float(x @ (quad @ x))


def solve_concave_qp(qp: ConcaveQuadraticProgram) -> QpSolution:
    lin = np.asarray(qp.lin, dtype=float)
    d = lin.size
    _check_nsd(qp.quad)
    quad_is_zero = qp.quad is None or (
        np.max(np.abs(qp.quad)) < 1e-15 if np.ndim(qp.quad) else False
    )
    if quad_is_zero:
        senses, rows, rhs = [], [], []
        if qp.A_ub is not None:
            rows.append(qp.A_ub)
            senses += ["<="] * np.shape(qp.A_ub)[0]
            rhs.append(np.asarray(qp.b_ub, float))
        if qp.A_eq is not None:
            rows.append(qp.A_eq)
            senses += ["="] * np.shape(qp.A_eq)[0]
            rhs.append(np.asarray(qp.b_eq, float))
        A = None
        if rows:
            A = sp.vstack([sp.csr_matrix(r) for r in rows]) if any(sp.issparse(r) for r in rows) else np.vstack(rows)
        sol = solve_lp(LinearProgram(lin, A, senses, np.concatenate(rhs) if rhs else None, qp.lower, qp.upper))
        obj = None if sol.objective is None else sol.objective + qp.const
        return QpSolution(sol.status, sol.x, obj)

    # cvxopt minimizes (1/2) x'Px + q'x: P = -2 quad (+ loading), q = -lin.
    if np.ndim(qp.quad) == 1:
        diag_vals = -2.0 * np.asarray(qp.quad, float) + _DIAG_LOADING
        P = cvx_spmatrix(diag_vals, range(d), range(d), size=(d, d))
    else:
        P_arr = -2.0 * np.asarray(qp.quad, float)
        P_arr[np.diag_indices(d)] += _DIAG_LOADING
        P = cvx_matrix(P_arr)
    q = -lin

    G_blocks, h_blocks = [], []
    if qp.A_ub is not None:
        G_blocks.append(sp.csr_matrix(qp.A_ub))
        h_blocks.append(np.asarray(qp.b_ub, float))
    lower = np.full(d, -np.inf) if qp.lower is None else np.broadcast_to(np.asarray(qp.lower, float), (d,))
    upper = np.full(d, np.inf) if qp.upper is None else np.broadcast_to(np.asarray(qp.upper, float), (d,))
    fin_lo = np.flatnonzero(np.isfinite(lower))
    fin_up = np.flatnonzero(np.isfinite(upper))
    if fin_up.size:
        G_blocks.append(sp.csr_matrix((np.ones(fin_up.size), (np.arange(fin_up.size), fin_up)), shape=(fin_up.size, d)))
        h_blocks.append(upper[fin_up])
    if fin_lo.size:
        G_blocks.append(sp.csr_matrix((-np.ones(fin_lo.size), (np.arange(fin_lo.size), fin_lo)), shape=(fin_lo.size, d)))
        h_blocks.append(-lower[fin_lo])

    kwargs = {}
    if qp.A_eq is not None:
        kwargs["A"] = _to_cvx(np.atleast_2d(np.asarray(qp.A_eq, float)) if not sp.issparse(qp.A_eq) else qp.A_eq)
        kwargs["b"] = cvx_matrix(np.asarray(qp.b_eq, float))
    if G_blocks:
        kwargs["G"] = _to_cvx(sp.vstack(G_blocks))
        kwargs["h"] = cvx_matrix(np.concatenate(h_blocks))

    try:
        sol = cvx_solvers.qp(P, cvx_matrix(q), **kwargs)
    except (ValueError, ArithmeticError, ZeroDivisionError):
        return QpSolution("numerical", None, None)
    if sol["status"] == "optimal":
        x = np.asarray(sol["x"]).reshape(-1)
        return QpSolution("optimal", x, _objective(qp.quad, lin, qp.const, x))
    if sol["status"] in ("primal infeasible",):
        return QpSolution("infeasible", None, None)
    if sol["status"] in ("dual infeasible",):
        return QpSolution("unbounded", None, None)
    # "unknown": cvxopt stalled; keep the iterate if it is usable
    if sol.get("x") is not None:
        x = np.asarray(sol["x"]).reshape(-1)
        if np.all(np.isfinite(x)):
            return QpSolution("inaccurate", x, _objective(qp.quad, lin, qp.const, x))
    return QpSolution("numerical", None, None)
