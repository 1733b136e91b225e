"""Robust (max-min) welfare solvers.

Every method maximizes the worst-case welfare over an uncertainty set by
working on the dual of the inner minimization. The dual variable xi = a - z
(z the multiplier of v >= 0) ranges over the exact shifted feasible set
{a - z : a feasible, z >= 0}; the solvers keep the lifted variables rather
than the upper-bound-only relaxation of that set, which is strictly larger
and lets a maximizer launder row/column capacity through negative cells.
Utilitarian weights and the per-group 1/|G| normalization are folded into
the set parameters up front so all methods optimize plain inner products.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .instance import Allocation, Instance, WelfareSpec
from .kernels.ascent import AscentConfig, projected_subgradient_ascent
from .kernels.lp import LinearProgram, solve_lp
from .kernels.projection import polytope_rows, project_onto, relaxed_polytope
from .kernels.qp import ConcaveQuadraticProgram, solve_concave_qp
from .uncertainty import (
    EllipsoidSet,
    GroupProductSet,
    PolyhedralSet,
    scale_set,
    worst_case_linear,
)

__all__ = [
    "DualState",
    "SolveReport",
    "RobustConfig",
    "robust_usw_polyhedral",
    "robust_usw_ellipsoid_iqp",
    "robust_usw_general",
    "robust_gesw_polyhedral",
    "robust_gesw_ellipsoid_iqp",
    "robust_gesw_general",
    "adversarial_psga_baseline",
    "recover_allocation",
    "fold_usw_weights",
    "fold_gesw_scaling",
    "report_to_dict",
    "save_report",
]

LAMBDA_MIN = 1e-8


@dataclass
class DualState:
    """Dual variables at termination: xi = a - zeta, lambda, beta."""

    xi: np.ndarray
    lam: np.ndarray | None = None
    beta: np.ndarray | None = None


@dataclass
class SolveReport:
    """Solver output: allocation, achieved objective, certificates, trace.

    ``objective`` is the exact worst-case welfare of ``allocation``;
    ``meta['dual_objective']`` carries the dual value reached by the method,
    and ``meta['duality_gap']`` their absolute difference.
    """

    allocation: Allocation
    objective: float
    method: str
    status: str = "optimal"
    dual: DualState | None = None
    worst_case_valuation: np.ndarray | None = None
    trace: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)


@dataclass
class RobustConfig:
    """Knobs shared by the iterative robust methods."""

    max_outer: int = 100
    tol: float = 1e-6
    lambda_min: float = LAMBDA_MIN
    cut_rounds: int = 30
    inner_tol: float = 1e-9
    polish: bool = True
    polish_rounds: int = 40
    polish_size_cap: int = 900
    self_check_tol: float = 1e-3
    ascent: AscentConfig = field(default_factory=lambda: AscentConfig(max_iters=1000))


def fold_usw_weights(inst: Instance, weights=None):
    """Per-pair scaling d with d_j = w_G/|G| for the pair's group."""
    sizes = inst.group_sizes().astype(float)
    w = sizes.copy() if weights is None else np.asarray(weights, float)
    if w.shape[0] != inst.n_groups:
        raise ValueError("weight vector length does not match group count")
    if np.any(w <= 0):
        raise ValueError("robust solvers require strictly positive group weights")
    per_agent = (w / sizes)[inst.group_ids]
    return np.repeat(per_agent, inst.m)


def fold_gesw_scaling(inst: Instance):
    """Per-pair scaling 1/|G| folding the group normalization into the sets."""
    sizes = inst.group_sizes().astype(float)
    return np.repeat((1.0 / sizes)[inst.group_ids], inst.m)


def _maybe_scale(uset, d):
    if np.allclose(d, 1.0):
        return uset
    return scale_set(uset, d)


def _alloc_rows(inst):
    return polytope_rows(relaxed_polytope(inst))


def _alloc_rows_split(inst):
    """(A_ub, b_ub, A_eq, b_eq) over the allocation cells only."""
    A, senses, rhs = _alloc_rows(inst)
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
    A_eq = A[eq].tocsr() if eq else None
    b_eq = rhs[eq] if eq else None
    return A_ub, b_ub, A_eq, b_eq


def _trace_row(it, objective, t0, step=0.0, grad_norm=0.0):
    return {
        "iter": it,
        "objective": float(objective),
        "step": step,
        "grad_norm": grad_norm,
        "wall_ms": (time.perf_counter() - t0) * 1e3,
    }


def _nominal_point(inst, objective_vec):
    """argmax objective over the relaxed feasible set (used to seed duals)."""
    A, senses, rhs = _alloc_rows(inst)
    sol = solve_lp(LinearProgram(objective_vec, A, senses, rhs, lower=np.zeros(inst.nm), upper=inst.caps_vector()))
    if not sol.optimal:
        raise ValueError(f"instance appears infeasible ({sol.status})")
    return sol.x


def _finalize(inst, xi_or_alloc, scaled_set, d, method, dual, dual_objective, trace, cfg_tol, meta=None, combine="sum"):
    """Recover the allocation, evaluate it exactly, and assemble the report."""
    if isinstance(xi_or_alloc, Allocation):
        alloc = xi_or_alloc
    else:
        alloc = recover_allocation(xi_or_alloc, inst)
    if combine == "min":
        vals = []
        v_scaled = np.zeros(inst.nm)
        for sub, idx in zip(scaled_set.sets, scaled_set.group_indices):
            val_g, v_g = worst_case_linear(alloc.vector[idx], sub)
            vals.append(val_g)
            v_scaled[idx] = v_g
        value = float(min(vals))
    else:
        value, v_scaled = worst_case_linear(alloc.vector, scaled_set)
    gap = abs(value - dual_objective)
    status = "optimal" if gap <= cfg_tol * max(1.0, abs(value)) else "not_converged"
    meta = dict(meta or {})
    meta.update({"dual_objective": float(dual_objective), "duality_gap": float(gap)})
    return SolveReport(
        allocation=alloc,
        objective=float(value),
        method=method,
        status=status,
        dual=dual,
        worst_case_valuation=v_scaled / d,
        trace=trace,
        meta=meta,
    )


def recover_allocation(xi_star, inst: Instance) -> Allocation:
    """Feasible fractional allocation dominating xi* elementwise.

    Solves min sum(a) over the relaxed feasible set with a >= max(xi*, 0);
    feasible whenever xi* = a0 - zeta for some feasible a0 and zeta >= 0.
    A slightly decreasing cost profile makes the minimizer deterministic
    and biased toward lexicographically small allocations.
    """
    xi = np.asarray(xi_star, float).reshape(-1)
    nm = inst.nm
    if xi.size != nm:
        raise ValueError("xi dimension does not match instance")
    caps = inst.caps_vector()
    lower = np.minimum(np.maximum(xi, 0.0), caps)
    A, senses, rhs = _alloc_rows(inst)
    cost = 1.0 + 1e-7 * np.linspace(1.0, 0.0, nm)
    sol = solve_lp(LinearProgram(-cost, A, senses, rhs, lower=lower, upper=caps))
    if not sol.optimal:
        raise ValueError(f"allocation recovery failed ({sol.status}); xi* is not dominated by any feasible allocation")
    return Allocation(sol.x.reshape(inst.n, inst.m), mode="fractional")


# -- covariance helpers --------------------------------------------------------


def _floored(cov):
    if np.ndim(cov) == 1:
        return np.maximum(np.asarray(cov, float), 1e-12)
    cov = np.asarray(cov, float)
    return cov + 1e-12 * np.eye(cov.shape[0])


def _cov_quad(cov, x):
    if np.ndim(cov) == 1:
        return float(np.asarray(cov, float) @ (x * x))
    return float(x @ (np.asarray(cov, float) @ x))


def _cov_matvec(cov, x):
    if np.ndim(cov) == 1:
        return np.asarray(cov, float) * x
    return np.asarray(cov, float) @ x


class _EllipsoidDual:
    """Dual objective machinery for one block of ellipsoids + linear rows.

    Value, gradient and auxiliary quantities of
      g(xi, lam, beta) = p'Tq + beta'e - p'Tp/4
                         + sum_i lam_i (vbar_i' Sinv_i vbar_i - r_i^2) - q'Tq
    with p = xi - Q'beta, q = sum_i lam_i Sinv_i vbar_i,
    T = (sum_i lam_i Sinv_i)^{-1}.
    """

    def __init__(self, uset: EllipsoidSet):
        self.centers = [np.asarray(c.center, float) for c in uset.constraints]
        self.radii = np.array([c.radius for c in uset.constraints], float)
        self.diag = all(c.diagonal for c in uset.constraints)
        self.dim = uset.dim
        self.ell = uset.n_ellipsoids
        self.covs = [_floored(c.cov) for c in uset.constraints]
        if self.diag:
            self.sinv = [1.0 / c for c in self.covs]
        else:
            self.sinv = []
            for c in self.covs:
                cov = c if np.ndim(c) == 2 else np.diag(c)
                self.sinv.append(np.linalg.inv(cov))
        self.center_quads = np.array(
            [float(v @ _cov_matvec(si, v)) for v, si in zip(self.centers, self.sinv)]
        )
        if uset.Q is not None:
            self.Q = uset.Q.toarray() if sp.issparse(uset.Q) else np.asarray(uset.Q, float)
            self.e = np.asarray(uset.e, float)
            self.k = self.Q.shape[0]
        else:
            self.Q = None
            self.e = np.zeros(0)
            self.k = 0

    def _weighted(self, lam):
        if self.diag:
            s = np.zeros(self.dim)
            q = np.zeros(self.dim)
            for lam_i, si, c in zip(lam, self.sinv, self.centers):
                s += lam_i * si
                q += lam_i * si * c
            return s, q
        S = np.zeros((self.dim, self.dim))
        q = np.zeros(self.dim)
        for lam_i, si, c in zip(lam, self.sinv, self.centers):
            S += lam_i * si
            q += lam_i * (si @ c)
        return S, q

    def _t_apply(self, S, x):
        if self.diag:
            return x / S
        return np.linalg.solve(S + 1e-12 * np.eye(self.dim), x)

    def value_grad(self, xi, lam, beta):
        """Returns (g, grad_xi, grad_lam, grad_beta, v_star)."""
        lam = np.maximum(lam, LAMBDA_MIN)
        p = xi if self.k == 0 else xi - self.Q.T @ beta
        S, q = self._weighted(lam)
        Tq = self._t_apply(S, q)
        Tp = self._t_apply(S, p)
        v_star = Tq - 0.5 * Tp
        g = float(p @ Tq) - 0.25 * float(p @ Tp) - float(q @ Tq)
        g += float(lam @ (self.center_quads - self.radii**2))
        if self.k:
            g += float(beta @ self.e)
        grad_xi = v_star
        grad_lam = np.array(
            [
                float((v_star - c) @ _cov_matvec(si, v_star - c)) - r * r
                for c, si, r in zip(self.centers, self.sinv, self.radii)
            ]
        )
        grad_beta = self.e - self.Q @ v_star if self.k else np.zeros(0)
        return g, grad_xi, grad_lam, grad_beta, v_star

    def quad_parts(self, lam):
        """(T as dense matrix, Tq vector, const) of g at fixed lam."""
        lam = np.maximum(lam, LAMBDA_MIN)
        S, q = self._weighted(lam)
        T = np.diag(1.0 / S) if self.diag else np.linalg.inv(S + 1e-12 * np.eye(self.dim))
        Tq = T @ q
        const = -float(q @ Tq) + float(lam @ (self.center_quads - self.radii**2))
        return T, Tq, const


def _golden_max(fun, lo, hi, iters=80):
    phi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - phi * (b - a)
    d_ = a + phi * (b - a)
    fc, fd = fun(c), fun(d_)
    for _ in range(iters):
        if fc >= fd:
            b, d_, fd = d_, c, fc
            c = b - phi * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d_, fd
            d_ = a + phi * (b - a)
            fd = fun(d_)
        if b - a < 1e-14 * max(1.0, abs(a)):
            break
    return (a + b) / 2.0


def _lambda_line_searches(lam, eval_at, lambda_min):
    """Coordinate-wise golden-section maximization of a concave profile."""
    for i in range(lam.size):
        def f(L, i=i):
            trial = lam.copy()
            trial[i] = L
            return eval_at(trial)

        hi = max(10.0 * lam[i], 1.0)
        while f(hi) > f(hi / 1.5) and hi < 1e12:
            hi *= 4.0
        lam[i] = max(_golden_max(f, lambda_min, hi), lambda_min)
    return lam


# -- utilitarian solvers --------------------------------------------------------


def robust_usw_polyhedral(inst: Instance, uset: PolyhedralSet, weights=None) -> SolveReport:
    """Exact robust weighted-USW via a single LP (polyhedral uncertainty)."""
    d = fold_usw_weights(inst, weights)
    s = _maybe_scale(uset, d)
    nm, k = inst.nm, s.k
    has_box = s.upper is not None
    n_tau = nm if has_box else 0
    Q = sp.csr_matrix(s.Q) if not sp.issparse(s.Q) else s.Q.tocsr()

    # variables: a (nm), beta (k), tau (n_tau); maximize beta'e - tau'u
    blocks = [-sp.eye(nm, format="csr"), Q.T.tocsr()]
    if has_box:
        blocks.append(-sp.eye(nm, format="csr"))
    coupling = sp.hstack(blocks).tocsr()
    A_poly, senses_poly, rhs_poly = _alloc_rows(inst)
    pad = sp.csr_matrix((A_poly.shape[0], k + n_tau))
    A = sp.vstack([coupling, sp.hstack([A_poly, pad])]).tocsr()
    senses = ["<="] * nm + list(senses_poly)
    rhs = np.concatenate([np.zeros(nm), rhs_poly])
    objective = np.concatenate([np.zeros(nm), s.e, -np.asarray(s.upper, float) if has_box else np.zeros(0)])
    lower = np.concatenate([np.zeros(nm), np.zeros(k + n_tau)])
    upper = np.concatenate([inst.caps_vector(), np.full(k + n_tau, np.inf)])
    sol = solve_lp(LinearProgram(objective, A, senses, rhs, lower, upper))
    if not sol.optimal:
        raise ValueError(f"robust USW LP failed: {sol.status}")
    a = sol.x[:nm]
    beta = sol.x[nm : nm + k]
    alloc = Allocation(a.reshape(inst.n, inst.m), mode="fractional")
    return _finalize(
        inst,
        alloc,
        s,
        d,
        "robust-usw-lp",
        DualState(xi=a.copy(), beta=beta),
        sol.objective,
        [],
        1e-5,
    )


def _lifted_qp_constraints(inst):
    """Rows and bounds for variables (a, xi) with xi <= a and a feasible."""
    nm = inst.nm
    A_ub, b_ub, A_eq, b_eq = _alloc_rows_split(inst)
    blocks = [sp.hstack([-sp.eye(nm, format="csr"), sp.eye(nm, format="csr")])]
    rhs = [np.zeros(nm)]
    if A_ub is not None:
        blocks.append(sp.hstack([A_ub, sp.csr_matrix((A_ub.shape[0], nm))]))
        rhs.append(b_ub)
    A_ub_full = sp.vstack(blocks).tocsr()
    b_ub_full = np.concatenate(rhs)
    A_eq_full = sp.hstack([A_eq, sp.csr_matrix((A_eq.shape[0], nm))]).tocsr() if A_eq is not None else None
    caps = inst.caps_vector()
    lower = np.concatenate([np.zeros(nm), np.full(nm, -np.inf)])
    upper = np.concatenate([caps, caps])
    return A_ub_full, b_ub_full, A_eq_full, b_eq, lower, upper


def robust_usw_ellipsoid_iqp(inst: Instance, uset: EllipsoidSet, weights=None, cfg: RobustConfig | None = None) -> SolveReport:
    """Iterated QP for a single truncated ellipsoid: alternate the closed-form
    lambda update with a concave QP over the shifted feasible set until the
    objective stabilizes."""
    cfg = cfg or RobustConfig()
    if uset.n_ellipsoids != 1 or uset.Q is not None:
        raise ValueError("iterated QP needs exactly one ellipsoid and no linear rows")
    d = fold_usw_weights(inst, weights)
    s = _maybe_scale(uset, d)
    ell = s.constraints[0]
    vbar = np.asarray(ell.center, float)
    cov = ell.cov
    r = float(ell.radius)
    if r < 0:
        raise ValueError("ellipsoid radius must be nonnegative")
    nm = inst.nm
    t0 = time.perf_counter()
    trace = []

    xi = _nominal_point(inst, vbar)
    if r == 0.0:
        obj = float(xi @ vbar)
        trace.append(_trace_row(0, obj, t0))
        return _finalize(inst, xi, s, d, "robust-usw-iqp", DualState(xi=xi), obj, trace, cfg.self_check_tol)

    A_ub, b_ub, A_eq, b_eq, lower, upper = _lifted_qp_constraints(inst)
    lam = max(np.sqrt(max(_cov_quad(cov, xi), 0.0)) / (2.0 * r), cfg.lambda_min)

    def objective(xi, lam):
        return float(xi @ vbar) - _cov_quad(cov, xi) / (4.0 * lam) - lam * r * r

    prev = -np.inf
    obj = objective(xi, lam)
    for it in range(1, cfg.max_outer + 1):
        trace.append(_trace_row(it, obj, t0))
        if abs(obj - prev) < cfg.tol * max(1.0, abs(obj)):
            break
        prev = obj
        if np.ndim(cov) == 1:
            quad = np.concatenate([np.zeros(nm), -np.asarray(cov, float) / (4.0 * lam)])
        else:
            quad = np.zeros((2 * nm, 2 * nm))
            quad[nm:, nm:] = -np.asarray(cov, float) / (4.0 * lam)
        qp = ConcaveQuadraticProgram(
            quad=quad,
            lin=np.concatenate([np.zeros(nm), vbar]),
            A_ub=A_ub,
            b_ub=b_ub,
            A_eq=A_eq,
            b_eq=b_eq,
            lower=lower,
            upper=upper,
        )
        qsol = solve_concave_qp(qp)
        if qsol.x is None:
            raise ValueError(f"xi-step QP failed: {qsol.status}")
        xi = qsol.x[nm:]
        quad_term = max(_cov_quad(cov, xi), 0.0)
        lam_new = max(np.sqrt(quad_term) / (2.0 * r), cfg.lambda_min)
        if objective(xi, lam_new) + 1e-12 < objective(xi, lam):
            # closed form should be the exact stationary point; fall back to a
            # golden-section search if numerics disagree
            lam_new = _golden_max(lambda L: objective(xi, L), cfg.lambda_min, max(10.0 * lam_new, 1.0))
        lam = lam_new
        obj = objective(xi, lam)
    return _finalize(
        inst,
        xi,
        s,
        d,
        "robust-usw-iqp",
        DualState(xi=xi.copy(), lam=np.array([lam])),
        obj,
        trace,
        cfg.self_check_tol,
        meta={"outer_iterations": len(trace)},
    )


def _dual_project(inst, n_lam, n_beta, lambda_min):
    """Projection for the stacked dual vector (a, zeta, lam, beta)."""
    nm = inst.nm
    poly = relaxed_polytope(inst)

    def project(z):
        a = project_onto(z[:nm], poly)
        zeta = np.maximum(z[nm : 2 * nm], 0.0)
        lam = np.maximum(z[2 * nm : 2 * nm + n_lam], lambda_min)
        beta = np.maximum(z[2 * nm + n_lam :], 0.0)
        return np.concatenate([a, zeta, lam, beta])

    return project


def robust_usw_general(inst: Instance, uset: EllipsoidSet, weights=None, cfg: RobustConfig | None = None) -> SolveReport:
    """Projected supergradient ascent on the multi-ellipsoid robust USW dual
    over (a, zeta, lambda, beta), then an exact coordinate polish (QP in
    (a, zeta, beta) at fixed lambda plus lambda line searches)."""
    cfg = cfg or RobustConfig()
    d = fold_usw_weights(inst, weights)
    s = _maybe_scale(uset, d)
    term = _EllipsoidDual(s)
    nm, ell, k = inst.nm, term.ell, term.k

    a0 = _nominal_point(inst, term.centers[0])
    lam0 = np.array(
        [
            max(np.sqrt(max(_cov_quad(cov, a0), 0.0)) / (2.0 * max(r, 1e-6)), cfg.lambda_min)
            for cov, r in zip(term.covs, term.radii)
        ]
    )
    z0 = np.concatenate([a0, np.zeros(nm), lam0, np.zeros(k)])

    def oracle(z):
        xi = z[:nm] - z[nm : 2 * nm]
        lam = z[2 * nm : 2 * nm + ell]
        beta = z[2 * nm + ell :]
        g, gx, gl, gb, _ = term.value_grad(xi, lam, beta)
        return g, np.concatenate([gx, -gx, gl, gb])

    project = _dual_project(inst, ell, k, cfg.lambda_min)
    res = projected_subgradient_ascent(oracle, project, z0, cfg.ascent)
    z = res.x
    best = res.objective
    if cfg.polish and 2 * nm + k <= cfg.polish_size_cap:
        z, best = _polish_usw(inst, term, z, best, cfg)
    xi = z[:nm] - z[nm : 2 * nm]
    lam = z[2 * nm : 2 * nm + ell]
    beta = z[2 * nm + ell :]
    return _finalize(
        inst,
        xi,
        s,
        d,
        "robust-usw-dual",
        DualState(xi=xi.copy(), lam=lam.copy(), beta=beta.copy()),
        best,
        res.trace,
        cfg.self_check_tol,
        meta={"ascent_converged": res.converged},
    )


def _polish_usw(inst, term, z, best, cfg):
    """Alternate exact (a, zeta, beta) QP steps with lambda line searches."""
    nm, ell, k = inst.nm, term.ell, term.k
    a = z[:nm].copy()
    zeta = z[nm : 2 * nm].copy()
    lam = z[2 * nm : 2 * nm + ell].copy()
    beta = z[2 * nm + ell :].copy()

    A_ub, b_ub, A_eq, b_eq = _alloc_rows_split(inst)
    nv = 2 * nm + k
    pad_cols = nm + k
    A_ub_full = sp.hstack([A_ub, sp.csr_matrix((A_ub.shape[0], pad_cols))]).tocsr() if A_ub is not None else None
    A_eq_full = sp.hstack([A_eq, sp.csr_matrix((A_eq.shape[0], pad_cols))]).tocsr() if A_eq is not None else None
    lower = np.concatenate([np.zeros(nm), np.zeros(nm), np.zeros(k)])
    upper = np.concatenate([inst.caps_vector(), np.full(nm + k, np.inf)])

    def value(a, zeta, lam, beta):
        return term.value_grad(a - zeta, lam, beta)[0]

    for _ in range(cfg.polish_rounds):
        prev = best
        T, Tq, const = term.quad_parts(lam)
        # p = a - zeta - Q' beta = J z
        if k:
            J = np.hstack([np.eye(nm), -np.eye(nm), -term.Q.T])
        else:
            J = np.hstack([np.eye(nm), -np.eye(nm)])
        TJ = T @ J
        quad = -0.25 * J.T @ TJ
        lin = J.T @ Tq
        if k:
            lin = lin + np.concatenate([np.zeros(2 * nm), term.e])
        qp = ConcaveQuadraticProgram(
            quad=quad, lin=lin, const=const, A_ub=A_ub_full, b_ub=b_ub, A_eq=A_eq_full, b_eq=b_eq, lower=lower, upper=upper
        )
        qsol = solve_concave_qp(qp)
        if qsol.x is not None:
            cand = qsol.x
            val = value(cand[:nm], cand[nm : 2 * nm], lam, cand[2 * nm :])
            if val > best:
                a, zeta, beta = cand[:nm], cand[nm : 2 * nm], cand[2 * nm :]
                best = val
        lam = _lambda_line_searches(lam, lambda L: value(a, zeta, L, beta), cfg.lambda_min)
        best = value(a, zeta, lam, beta)
        if best - prev < cfg.tol * max(1.0, abs(best)):
            break
    return np.concatenate([a, zeta, lam, beta]), best


# -- egalitarian solvers ---------------------------------------------------------


def _require_group_product(uset):
    if not isinstance(uset, GroupProductSet):
        raise TypeError("GESW solvers need a GroupProductSet (independent groups)")


def robust_gesw_polyhedral(inst: Instance, uset: GroupProductSet) -> SolveReport:
    """Exact robust GESW via one epigraph LP over per-group polyhedral duals."""
    _require_group_product(uset)
    d = fold_gesw_scaling(inst)
    s = _maybe_scale(uset, d)
    nm = inst.nm
    for sub in s.sets:
        if not isinstance(sub, PolyhedralSet):
            raise TypeError("robust_gesw_polyhedral needs polyhedral group sets")

    # variables: a (nm), t (1), then per group beta_G (k_G) and tau_G (if boxed)
    col_offsets = []
    n_cols = nm + 1
    for sub in s.sets:
        n_tau = sub.dim if sub.upper is not None else 0
        col_offsets.append((n_cols, sub.k, n_tau))
        n_cols += sub.k + n_tau

    rows, senses, rhs = [], [], []
    objective = np.zeros(n_cols)
    objective[nm] = 1.0
    lower = np.concatenate([np.zeros(nm), [-np.inf], np.zeros(n_cols - nm - 1)])
    upper = np.concatenate([inst.caps_vector(), np.full(n_cols - nm, np.inf)])

    for g, (sub, idx) in enumerate(zip(s.sets, uset.group_indices)):
        off, k_g, n_tau = col_offsets[g]
        Qg = sub.Q.toarray() if sp.issparse(sub.Q) else np.asarray(sub.Q, float)
        # epigraph: t - beta'e + tau'u <= 0
        row = sp.lil_matrix((1, n_cols))
        row[0, nm] = 1.0
        row[0, off : off + k_g] = -sub.e
        if n_tau:
            row[0, off + k_g : off + k_g + n_tau] = np.asarray(sub.upper, float)
        rows.append(row.tocsr())
        senses.append("<=")
        rhs.append(0.0)
        # coupling: Q_G' beta_G - tau_G - a_G <= 0
        blk = sp.lil_matrix((sub.dim, n_cols))
        blk[:, off : off + k_g] = Qg.T
        if n_tau:
            blk[:, off + k_g : off + k_g + n_tau] = -np.eye(n_tau)
        for local, j in enumerate(idx):
            blk[local, j] = -1.0
        rows.append(blk.tocsr())
        senses += ["<="] * sub.dim
        rhs += [0.0] * sub.dim

    A_poly, senses_poly, rhs_poly = _alloc_rows(inst)
    rows.append(sp.hstack([A_poly, sp.csr_matrix((A_poly.shape[0], n_cols - nm))]).tocsr())
    senses += list(senses_poly)
    rhs += list(rhs_poly)

    sol = solve_lp(LinearProgram(objective, sp.vstack(rows).tocsr(), senses, np.asarray(rhs), lower, upper))
    if not sol.optimal:
        raise ValueError(f"robust GESW LP failed: {sol.status}")
    a = sol.x[:nm]
    alloc = Allocation(a.reshape(inst.n, inst.m), mode="fractional")
    value = _gesw_worst(alloc.vector, s, uset.group_indices)
    gap = abs(value - sol.objective)
    return SolveReport(
        allocation=alloc,
        objective=float(value),
        method="robust-gesw-lp",
        status="optimal" if gap <= 1e-5 * max(1.0, abs(value)) else "not_converged",
        dual=DualState(xi=a.copy()),
        trace=[],
        meta={"dual_objective": float(sol.objective), "duality_gap": float(gap)},
    )


def _gesw_worst(avec, scaled_gset, group_indices):
    vals = []
    for sub, idx in zip(scaled_gset.sets, group_indices):
        val, _ = worst_case_linear(avec[idx], sub)
        vals.append(val)
    return float(min(vals))


def robust_gesw_ellipsoid_iqp(inst: Instance, uset: GroupProductSet, cfg: RobustConfig | None = None) -> SolveReport:
    """Iterated QP for GESW: per-group closed-form lambda updates alternate
    with an epigraph cutting-plane step in (a, zeta) for the max-min of the
    per-group concave quadratics."""
    cfg = cfg or RobustConfig()
    _require_group_product(uset)
    d = fold_gesw_scaling(inst)
    s = _maybe_scale(uset, d)
    groups = []
    for sub, idx in zip(s.sets, uset.group_indices):
        if not isinstance(sub, EllipsoidSet) or sub.n_ellipsoids != 1 or sub.Q is not None:
            raise TypeError("robust_gesw_ellipsoid_iqp needs one ellipsoid per group")
        ell = sub.constraints[0]
        groups.append((np.asarray(idx, int), np.asarray(ell.center, float), ell.cov, float(ell.radius)))

    nm = inst.nm
    vbar_full = np.zeros(nm)
    for idx, c, _, _ in groups:
        vbar_full[idx] = c
    a = _nominal_point(inst, vbar_full)
    zeta = np.zeros(nm)
    xi = a - zeta

    def f_group(g, xi, lam_g):
        idx, c, cov, r = groups[g]
        x = xi[idx]
        if r == 0.0:
            return float(x @ c)
        return float(x @ c) - _cov_quad(cov, x) / (4.0 * lam_g) - lam_g * r * r

    def grad_group(g, xi, lam_g):
        idx, c, cov, r = groups[g]
        x = xi[idx]
        if r == 0.0:
            return c
        return c - _cov_matvec(cov, x) / (2.0 * lam_g)

    def update_lams(xi):
        out = np.empty(len(groups))
        for g, (idx, _, cov, r) in enumerate(groups):
            if r == 0.0:
                out[g] = np.inf
            else:
                out[g] = max(np.sqrt(max(_cov_quad(cov, xi[idx]), 0.0)) / (2.0 * r), cfg.lambda_min)
        return out

    def objective(xi, lam):
        return min(f_group(g, xi, lam[g]) for g in range(len(groups)))

    A_ub, b_ub, A_eq, b_eq = _alloc_rows_split(inst)
    n_ub = A_ub.shape[0] if A_ub is not None else 0
    n_eq = A_eq.shape[0] if A_eq is not None else 0
    caps = inst.caps_vector()
    # LP variables: a (nm), zeta (nm), t (1)
    nv = 2 * nm + 1
    base_rows, base_senses, base_rhs = [], [], []
    if n_ub:
        base_rows.append(sp.hstack([A_ub, sp.csr_matrix((n_ub, nm + 1))]).tocsr())
        base_senses += ["<="] * n_ub
        base_rhs.append(b_ub)
    if n_eq:
        base_rows.append(sp.hstack([A_eq, sp.csr_matrix((n_eq, nm + 1))]).tocsr())
        base_senses += ["="] * n_eq
        base_rhs.append(b_eq)
    lower = np.concatenate([np.zeros(nm), np.zeros(nm), [-np.inf]])
    upper = np.concatenate([caps, np.full(nm, np.inf), [np.inf]])

    lam = update_lams(xi)
    t0 = time.perf_counter()
    trace = []
    prev = -np.inf
    obj = objective(xi, lam)
    for it in range(1, cfg.max_outer + 1):
        trace.append(_trace_row(it, obj, t0))
        if abs(obj - prev) < cfg.tol * max(1.0, abs(obj)):
            break
        prev = obj
        cuts_A, cuts_b = [], []

        def add_cut(g, xi_pt):
            grad = grad_group(g, xi_pt, lam[g])
            idx = groups[g][0]
            val = f_group(g, xi_pt, lam[g])
            row = np.zeros(nv)
            row[idx] = -grad
            row[nm + idx] = grad
            row[-1] = 1.0
            cuts_A.append(row)
            cuts_b.append(val - float(grad @ xi_pt[idx]))

        for g in range(len(groups)):
            add_cut(g, xi)
        for _ in range(cfg.cut_rounds):
            A_all = sp.vstack(base_rows + [sp.csr_matrix(np.array(cuts_A))]).tocsr()
            senses = base_senses + ["<="] * len(cuts_b)
            rhs = np.concatenate(base_rhs + [np.asarray(cuts_b)])
            c_obj = np.zeros(nv)
            c_obj[-1] = 1.0
            sol = solve_lp(LinearProgram(c_obj, A_all, senses, rhs, lower, upper))
            if not sol.optimal:
                raise ValueError(f"cutting-plane LP failed: {sol.status}")
            cand_xi = sol.x[:nm] - sol.x[nm : 2 * nm]
            t_val = sol.x[-1]
            true_val = objective(cand_xi, lam)
            if true_val > objective(xi, lam):
                xi = cand_xi
            if t_val - true_val <= max(cfg.inner_tol, cfg.tol * 1e-2) * max(1.0, abs(t_val)):
                xi = cand_xi
                break
            for g in range(len(groups)):
                if f_group(g, cand_xi, lam[g]) < t_val:
                    add_cut(g, cand_xi)
        lam = update_lams(xi)
        obj = objective(xi, lam)
    finite_lam = np.where(np.isfinite(lam), lam, 0.0)
    return _finalize(
        inst,
        xi,
        s,
        d,
        "robust-gesw-iqp",
        DualState(xi=xi.copy(), lam=finite_lam),
        obj,
        trace,
        cfg.self_check_tol,
        meta={"outer_iterations": len(trace)},
        combine="min",
    )


def robust_gesw_general(inst: Instance, uset: GroupProductSet, cfg: RobustConfig | None = None) -> SolveReport:
    """Projected supergradient ascent on the per-group multi-ellipsoid GESW dual
    (supergradient of the active group), followed by a cutting-plane polish."""
    cfg = cfg or RobustConfig()
    _require_group_product(uset)
    d = fold_gesw_scaling(inst)
    s = _maybe_scale(uset, d)
    terms, idx_blocks = [], []
    for sub, idx in zip(s.sets, uset.group_indices):
        if not isinstance(sub, EllipsoidSet):
            raise TypeError("robust_gesw_general needs ellipsoidal group sets")
        terms.append(_EllipsoidDual(sub))
        idx_blocks.append(np.asarray(idx, int))
    nm = inst.nm
    n_groups = len(terms)
    lam_off = np.cumsum([0] + [t.ell for t in terms])
    beta_off = np.cumsum([0] + [t.k for t in terms])
    n_lam, n_beta = int(lam_off[-1]), int(beta_off[-1])

    def split(z):
        xi = z[:nm] - z[nm : 2 * nm]
        lam = z[2 * nm : 2 * nm + n_lam]
        beta = z[2 * nm + n_lam :]
        return xi, lam, beta

    def group_eval(g, xi, lam, beta, with_grad=False):
        t = terms[g]
        out = t.value_grad(xi[idx_blocks[g]], lam[lam_off[g] : lam_off[g + 1]], beta[beta_off[g] : beta_off[g + 1]])
        return out if with_grad else out[0]

    def oracle(z):
        xi, lam, beta = split(z)
        vals = [group_eval(g, xi, lam, beta) for g in range(n_groups)]
        g_min = int(np.argmin(vals))
        _, gx, gl, gb, _ = group_eval(g_min, xi, lam, beta, with_grad=True)
        grad = np.zeros_like(z)
        grad[idx_blocks[g_min]] = gx
        grad[nm + idx_blocks[g_min]] = -gx
        grad[2 * nm + lam_off[g_min] : 2 * nm + lam_off[g_min + 1]] = gl
        grad[2 * nm + n_lam + beta_off[g_min] : 2 * nm + n_lam + beta_off[g_min + 1]] = gb
        return min(vals), grad

    vbar_full = np.zeros(nm)
    for t, idx in zip(terms, idx_blocks):
        vbar_full[idx] = t.centers[0]
    a0 = _nominal_point(inst, vbar_full)
    z0 = np.concatenate([a0, np.zeros(nm), np.full(n_lam, 0.1), np.zeros(n_beta)])
    project = _dual_project(inst, n_lam, n_beta, cfg.lambda_min)
    res = projected_subgradient_ascent(oracle, project, z0, cfg.ascent)
    z = res.x
    best = res.objective
    if cfg.polish and 2 * nm + n_beta <= cfg.polish_size_cap:
        z, best = _polish_gesw(inst, terms, idx_blocks, z, best, cfg, (nm, n_lam, n_beta), (lam_off, beta_off))
    xi, lam, beta = split(z)
    return _finalize(
        inst,
        xi,
        s,
        d,
        "robust-gesw-dual",
        DualState(xi=xi.copy(), lam=lam.copy(), beta=beta.copy()),
        best,
        res.trace,
        cfg.self_check_tol,
        meta={"ascent_converged": res.converged},
        combine="min",
    )


def _polish_gesw(inst, terms, idx_blocks, z, best, cfg, dims, offs):
    """Cutting-plane epigraph polish over (a, zeta, beta, t) + lambda searches."""
    nm, n_lam, n_beta = dims
    lam_off, beta_off = offs
    n_groups = len(terms)
    a = z[:nm].copy()
    zeta = z[nm : 2 * nm].copy()
    lam = z[2 * nm : 2 * nm + n_lam].copy()
    beta = z[2 * nm + n_lam :].copy()
    A_ub, b_ub, A_eq, b_eq = _alloc_rows_split(inst)
    n_ub = A_ub.shape[0] if A_ub is not None else 0
    n_eq = A_eq.shape[0] if A_eq is not None else 0
    caps = inst.caps_vector()
    nv = 2 * nm + n_beta + 1  # a, zeta, beta, t
    base_rows, base_senses, base_rhs = [], [], []
    if n_ub:
        base_rows.append(sp.hstack([A_ub, sp.csr_matrix((n_ub, nv - nm))]).tocsr())
        base_senses += ["<="] * n_ub
        base_rhs.append(b_ub)
    if n_eq:
        base_rows.append(sp.hstack([A_eq, sp.csr_matrix((n_eq, nv - nm))]).tocsr())
        base_senses += ["="] * n_eq
        base_rhs.append(b_eq)
    lower = np.concatenate([np.zeros(2 * nm + n_beta), [-np.inf]])
    upper = np.concatenate([caps, np.full(nm + n_beta, np.inf), [np.inf]])

    def group_value(g, a, zeta, lam, beta):
        t = terms[g]
        xi_g = (a - zeta)[idx_blocks[g]]
        return t.value_grad(xi_g, lam[lam_off[g] : lam_off[g + 1]], beta[beta_off[g] : beta_off[g + 1]])

    def current():
        return min(group_value(g, a, zeta, lam, beta)[0] for g in range(n_groups))

    for _ in range(cfg.polish_rounds):
        prev = best
        cuts_A, cuts_b = [], []

        def add_cut(g, a_pt, zeta_pt, beta_pt):
            val, gx, _, gb, _ = group_value(g, a_pt, zeta_pt, lam, beta_pt)
            row = np.zeros(nv)
            row[idx_blocks[g]] = -gx
            row[nm + idx_blocks[g]] = gx
            row[2 * nm + beta_off[g] : 2 * nm + beta_off[g + 1]] = -gb
            row[-1] = 1.0
            xi_pt = (a_pt - zeta_pt)[idx_blocks[g]]
            const = val - float(gx @ xi_pt) - float(gb @ beta_pt[beta_off[g] : beta_off[g + 1]])
            cuts_A.append(row)
            cuts_b.append(const)

        for g in range(n_groups):
            add_cut(g, a, zeta, beta)
        for _ in range(cfg.cut_rounds):
            A_all = sp.vstack(base_rows + [sp.csr_matrix(np.array(cuts_A))]).tocsr()
            senses = base_senses + ["<="] * len(cuts_b)
            rhs = np.concatenate(base_rhs + [np.asarray(cuts_b)])
            c_obj = np.zeros(nv)
            c_obj[-1] = 1.0
            sol = solve_lp(LinearProgram(c_obj, A_all, senses, rhs, lower, upper))
            if not sol.optimal:
                break
            a_c = sol.x[:nm]
            zeta_c = sol.x[nm : 2 * nm]
            beta_c = sol.x[2 * nm : 2 * nm + n_beta]
            t_val = sol.x[-1]
            vals = [group_value(g, a_c, zeta_c, lam, beta_c)[0] for g in range(n_groups)]
            true_val = min(vals)
            if true_val > current():
                a, zeta, beta = a_c.copy(), zeta_c.copy(), beta_c.copy()
            if t_val - true_val <= max(cfg.inner_tol, cfg.tol * 1e-2) * max(1.0, abs(t_val)):
                break
            for g in range(n_groups):
                if vals[g] < t_val:
                    add_cut(g, a_c, zeta_c, beta_c)
        for g in range(n_groups):
            lam_slice = slice(lam_off[g], lam_off[g + 1])
            lam_g = lam[lam_slice].copy()
            lam[lam_slice] = _lambda_line_searches(
                lam_g,
                lambda L, g=g: group_value(g, a, zeta, np.concatenate([lam[: lam_off[g]], L, lam[lam_off[g + 1] :]]), beta)[0],
                cfg.lambda_min,
            )
        best = current()
        if best - prev < cfg.tol * max(1.0, abs(best)):
            break
    return np.concatenate([a, zeta, lam, beta]), best


# -- generic adversarial baseline -------------------------------------------------


def adversarial_psga_baseline(inst: Instance, uset, welfare_spec: WelfareSpec, cfg: RobustConfig | None = None) -> SolveReport:
    """Generic max-min baseline: exact inner minimization, supergradient step
    on the allocation, Euclidean projection back onto the feasible set."""
    cfg = cfg or RobustConfig()
    nm = inst.nm
    if welfare_spec.kind == "utilitarian":
        d = fold_usw_weights(inst, welfare_spec.weights)
        s = _maybe_scale(uset, d)

        def oracle(a):
            val, v = worst_case_linear(a, s)
            return val, v

    else:
        _require_group_product(uset)
        d = fold_gesw_scaling(inst)
        s = _maybe_scale(uset, d)

        def oracle(a):
            vals, vees = [], []
            for sub, idx in zip(s.sets, s.group_indices):
                val, v = worst_case_linear(a[idx], sub)
                vals.append(val)
                vees.append(v)
            g_min = int(np.argmin(vals))
            grad = np.zeros(nm)
            grad[s.group_indices[g_min]] = vees[g_min]
            return min(vals), grad

    poly = relaxed_polytope(inst)

    def project(a):
        return project_onto(a, poly)

    res = projected_subgradient_ascent(oracle, project, np.zeros(nm), cfg.ascent)
    alloc = Allocation(res.x.reshape(inst.n, inst.m), mode="fractional")
    return SolveReport(
        allocation=alloc,
        objective=float(res.objective),
        method="psga-baseline",
        status="optimal" if res.converged else "not_converged",
        trace=res.trace,
        meta={"iterations": res.iterations, "ascent_converged": res.converged, "dual_objective": float(res.objective), "duality_gap": 0.0},
    )


# -- report serialization ----------------------------------------------------------


def report_to_dict(report: SolveReport):
    doc = {
        "method": report.method,
        "status": report.status,
        "objective": report.objective,
        "allocation": report.allocation.values.tolist(),
        "allocation_mode": report.allocation.mode,
        "meta": report.meta,
    }
    if report.worst_case_valuation is not None:
        doc["worst_case_valuation"] = np.asarray(report.worst_case_valuation).tolist()
    if report.dual is not None:
        doc["dual"] = {
            "xi": report.dual.xi.tolist(),
            "lam": None if report.dual.lam is None else np.asarray(report.dual.lam).tolist(),
            "beta": None if report.dual.beta is None else np.asarray(report.dual.beta).tolist(),
        }
    return doc


def save_report(report: SolveReport, path, trace_path=None):
    with open(path, "w") as fh:
        json.dump(report_to_dict(report), fh, indent=2)
    if trace_path is not None and report.trace:
        from .kernels.ascent import write_trace_csv

        write_trace_csv(report.trace, trace_path)
