"""Uncertainty-unaware baselines: welfare LPs on a point estimate."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .instance import Allocation, Instance, group_pair_indices
from .kernels.lp import LinearProgram, solve_lp
from .kernels.projection import polytope_rows, relaxed_polytope
from .robust import SolveReport, fold_gesw_scaling, fold_usw_weights

__all__ = ["nominal_usw", "nominal_gesw"]


def nominal_usw(inst: Instance, values, weights=None) -> SolveReport:
    """max_a a . (d * v) over the relaxed feasible set, d folding the weights."""
    d = fold_usw_weights(inst, weights)
    v = np.asarray(values, float).reshape(-1) * d
    A, senses, rhs = polytope_rows(relaxed_polytope(inst))
    sol = solve_lp(LinearProgram(v, A, senses, rhs, lower=np.zeros(inst.nm), upper=inst.caps_vector()))
    if not sol.optimal:
        raise ValueError(f"nominal USW LP failed: {sol.status}")
    alloc = Allocation(sol.x.reshape(inst.n, inst.m), mode="fractional")
    return SolveReport(alloc, float(sol.objective), "naive-usw", meta={"dual_objective": float(sol.objective), "duality_gap": 0.0})


def nominal_gesw(inst: Instance, values) -> SolveReport:
    """Epigraph LP: max t subject to t <= u_G(a, v) for every group."""
    d = fold_gesw_scaling(inst)
    v = np.asarray(values, float).reshape(-1) * d
    nm = inst.nm
    rows, senses, rhs = [], [], []
    for g in range(inst.n_groups):
        idx = group_pair_indices(inst, g)
        row = np.zeros(nm + 1)
        row[idx] = -v[idx]
        row[nm] = 1.0
        rows.append(row)
        senses.append("<=")
        rhs.append(0.0)
    A_poly, senses_poly, rhs_poly = polytope_rows(relaxed_polytope(inst))
    A = sp.vstack([sp.csr_matrix(np.array(rows)), sp.hstack([A_poly, sp.csr_matrix((A_poly.shape[0], 1))])]).tocsr()
    senses += list(senses_poly)
    rhs = np.concatenate([np.asarray(rhs), rhs_poly])
    obj = np.zeros(nm + 1)
    obj[nm] = 1.0
    lower = np.concatenate([np.zeros(nm), [-np.inf]])
    upper = np.concatenate([inst.caps_vector(), [np.inf]])
    sol = solve_lp(LinearProgram(obj, A, senses, rhs, lower, upper))
    if not sol.optimal:
        raise ValueError(f"nominal GESW LP failed: {sol.status}")
    alloc = Allocation(sol.x[:nm].reshape(inst.n, inst.m), mode="fractional")
    return SolveReport(alloc, float(sol.objective), "naive-gesw", meta={"dual_objective": float(sol.objective), "duality_gap": 0.0})
