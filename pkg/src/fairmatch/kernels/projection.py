"""Euclidean projection onto allocation polytopes.

The feasible set of an instance and its upper-bound relaxation are both
"slab polytopes": intersections of row-sum slabs, column-sum slabs and a
per-cell box, each of which has a closed-form projection. Dykstra's
alternating projections over the three families converges to the exact
Euclidean projection; a concave-QP solve is kept as fallback and oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .qp import ConcaveQuadraticProgram, solve_concave_qp

__all__ = [
    "SlabPolytope",
    "relaxed_polytope",
    "xi_polytope",
    "project_onto",
    "project_qp",
    "feasibility_point",
    "polytope_rows",
    "max_violation",
]


@dataclass(frozen=True)
class SlabPolytope:
    """{X : row_lo <= X 1 <= row_hi, col_lo <= 1'X <= col_hi, lo <= X <= hi}."""

    row_lower: np.ndarray
    row_upper: np.ndarray
    col_lower: np.ndarray
    col_upper: np.ndarray
    cell_lower: np.ndarray
    cell_upper: np.ndarray

    @property
    def shape(self):
        return self.cell_lower.shape


def relaxed_polytope(inst) -> SlabPolytope:
    """Continuous relaxation of the instance's feasible set."""
    return SlabPolytope(
        row_lower=inst.load_lower,
        row_upper=inst.load_upper,
        col_lower=inst.supply_lower,
        col_upper=inst.supply_upper,
        cell_lower=np.zeros((inst.n, inst.m)),
        cell_upper=inst.pair_caps,
    )


def xi_polytope(inst) -> SlabPolytope:
    """Upper-bound-only relaxation of the feasible set.

    Only row sums <= load_upper, column sums <= supply_upper and cells
    <= pair_caps; no lower bounds and no nonnegativity. Every feasible
    allocation lies inside it, but it is strictly larger than the shifted
    set {a - z : a feasible, z >= 0} the dual solvers optimize over.
    """
    neg = -np.inf
    return SlabPolytope(
        row_lower=np.full(inst.n, neg),
        row_upper=inst.load_upper,
        col_lower=np.full(inst.m, neg),
        col_upper=inst.supply_upper,
        cell_lower=np.full((inst.n, inst.m), neg),
        cell_upper=inst.pair_caps,
    )


def _project_row_slabs(X, lo, hi):
    sums = X.sum(axis=1)
    target = np.clip(sums, lo, hi)
    return X + ((target - sums) / X.shape[1])[:, None]


def _project_col_slabs(X, lo, hi):
    sums = X.sum(axis=0)
    target = np.clip(sums, lo, hi)
    return X + ((target - sums) / X.shape[0])[None, :]


def max_violation(X, poly: SlabPolytope):
    rows = X.sum(axis=1)
    cols = X.sum(axis=0)
    v = 0.0
    v = max(v, float(np.max(poly.row_lower - rows, initial=0.0)))
    v = max(v, float(np.max(rows - poly.row_upper, initial=0.0)))
    v = max(v, float(np.max(poly.col_lower - cols, initial=0.0)))
    v = max(v, float(np.max(cols - poly.col_upper, initial=0.0)))
    v = max(v, float(np.max(poly.cell_lower - X, initial=0.0)))
    v = max(v, float(np.max(X - poly.cell_upper, initial=0.0)))
    return v


def project_onto(point, poly: SlabPolytope, tol=1e-10, max_sweeps=20000):
    """Euclidean projection of ``point`` (matrix or flat vector) onto poly.

    Dykstra's algorithm over the three constraint families; falls back to
    the QP route if the sweep cap is hit before the iterate is feasible.
    Returns an array of the same shape as the input.
    """
    n, m = poly.shape
    arr = np.asarray(point, dtype=float)
    flat = arr.ndim == 1
    X = arr.reshape(n, m).copy()
    if not np.all(np.isfinite(X)):
        raise ValueError("cannot project a non-finite point")

    p = np.zeros_like(X)
    q = np.zeros_like(X)
    r = np.zeros_like(X)
    for _ in range(max_sweeps):
        Y = _project_row_slabs(X + p, poly.row_lower, poly.row_upper)
        p = X + p - Y
        Z = _project_col_slabs(Y + q, poly.col_lower, poly.col_upper)
        q = Y + q - Z
        X_new = np.clip(Z + r, poly.cell_lower, poly.cell_upper)
        r = Z + r - X_new
        change = np.abs(X_new - X).max()
        X = X_new
        if change < tol and max_violation(X, poly) < 10 * tol:
            break
    else:
        X = None

    if X is None or max_violation(X, poly) > 1e-6:
        X = project_qp(arr.reshape(n, m), poly)
    return X.reshape(-1) if flat else X


def polytope_rows(poly: SlabPolytope):
    """Sparse (A, senses, rhs) rows for the slab constraints (box excluded).

    Variables are the row-major cells. Infinite slab bounds are dropped;
    pinned slabs (lo == hi) become single equality rows.
    """
    n, m = poly.shape
    nm = n * m
    data_rows, senses, rhs = [], [], []

    def add(vec, sense, b):
        data_rows.append(vec)
        senses.append(sense)
        rhs.append(b)

    for a in range(n):
        cols = np.arange(a * m, (a + 1) * m)
        vec = sp.csr_matrix((np.ones(m), (np.zeros(m, dtype=int), cols)), shape=(1, nm))
        lo, hi = poly.row_lower[a], poly.row_upper[a]
        if np.isfinite(lo) and lo == hi:
            add(vec, "=", lo)
            continue
        if np.isfinite(hi):
            add(vec, "<=", hi)
        if np.isfinite(lo):
            add(vec, ">=", lo)
    for i in range(m):
        cols = np.arange(i, nm, m)
        vec = sp.csr_matrix((np.ones(n), (np.zeros(n, dtype=int), cols)), shape=(1, nm))
        lo, hi = poly.col_lower[i], poly.col_upper[i]
        if np.isfinite(lo) and lo == hi:
            add(vec, "=", lo)
            continue
        if np.isfinite(hi):
            add(vec, "<=", hi)
        if np.isfinite(lo):
            add(vec, ">=", lo)
    if not data_rows:
        return None, [], np.array([])
    return sp.vstack(data_rows).tocsr(), senses, np.asarray(rhs, dtype=float)


def _split_ub_eq(poly):
    A, senses, rhs = polytope_rows(poly)
    if A is None:
        return None, None, None, None
    le = [i for i, s in enumerate(senses) if s == "<="]
    ge = [i for i, s in enumerate(senses) if s == ">="]
    eq = [i for i, s in enumerate(senses) if s == "="]
    blocks, ub_rhs = [], []
    if le:
        blocks.append(A[le])
        ub_rhs.append(rhs[le])
    if ge:
        blocks.append(-A[ge])
        ub_rhs.append(-rhs[ge])
    A_ub = sp.vstack(blocks).tocsr() if blocks else None
    b_ub = np.concatenate(ub_rhs) if blocks else None
    A_eq = A[eq] if eq else None
    b_eq = rhs[eq] if eq else None
    return A_ub, b_ub, A_eq, b_eq


def project_qp(point, poly: SlabPolytope):
    """Exact projection via the concave-QP kernel (minimize ||x - p||^2 / 2)."""
    n, m = poly.shape
    pvec = np.asarray(point, dtype=float).reshape(-1)
    A_ub, b_ub, A_eq, b_eq = _split_ub_eq(poly)
    qp = ConcaveQuadraticProgram(
        quad=np.full(n * m, -0.5),
        lin=pvec,
        A_ub=A_ub,
        b_ub=b_ub,
        A_eq=A_eq,
        b_eq=b_eq,
        lower=poly.cell_lower.reshape(-1),
        upper=poly.cell_upper.reshape(-1),
    )
    sol = solve_concave_qp(qp)
    if sol.x is None:
        raise ValueError("projection target set is infeasible")
    return sol.x.reshape(n, m)


def feasibility_point(poly: SlabPolytope):
    """A point of the polytope, or None when it is empty (LP feasibility)."""
    from .lp import LinearProgram, solve_lp

    n, m = poly.shape
    A, senses, rhs = polytope_rows(poly)
    lp = LinearProgram(
        np.zeros(n * m),
        A,
        senses,
        rhs,
        lower=poly.cell_lower.reshape(-1),
        upper=poly.cell_upper.reshape(-1),
    )
    sol = solve_lp(lp)
    return sol.x if sol.optimal else None
