"""Conditional-value-at-risk optimization and estimation.

The sampling solvers implement the variational form of CVaR: maximize
b - (1/alpha) * E[(b - welfare)_+], with the expectation replaced by an
empirical (or exhaustive scenario-weighted) average and the positive parts
handled by slack variables. For Gaussian valuations the utilitarian
objective has the closed form a.mean - (phi(Phi^{-1}(alpha))/alpha) *
sqrt(a' Cov a), maximized by projected gradient ascent.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.stats import norm

from .instance import Allocation, Instance, group_pair_indices
from .kernels.ascent import AscentConfig, projected_gradient_ascent
from .kernels.lp import LinearProgram, solve_lp
from .kernels.projection import polytope_rows, project_onto, relaxed_polytope
from .robust import SolveReport, fold_gesw_scaling, fold_usw_weights
from .uncertainty import Gaussian

__all__ = [
    "CvarConfig",
    "empirical_cvar",
    "cvar_usw_sampling",
    "cvar_gesw_sampling",
    "cvar_usw_gaussian",
    "gaussian_cvar_coefficient",
    "sample_complexity_bound",
    "log_allocation_count_upper",
]

_BNB_MAX_CELLS = 30


@dataclass
class CvarConfig:
    """Risk level and sample budgets for CVaR optimization and evaluation."""

    alpha: float = 0.01
    h_train: int = 4000
    h_eval: int = 10000
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.alpha < 0.5:
            raise ValueError("alpha must lie in (0, 0.5)")
        min_h = int(np.ceil(1.0 / self.alpha))
        if self.h_train < min_h or self.h_eval < min_h:
            raise ValueError(f"sample counts must be at least ceil(1/alpha) = {min_h}")


def empirical_cvar(samples, alpha, weights=None):
    """Exact maximizer of the variational CVaR form over a finite sample.

    With equal weights and k = ceil(alpha * h), the optimum is attained at
    b = w_(k) and equals w_(k) - sum_{j<=k} (w_(k) - w_(j)) / (alpha h).
    ``weights`` turns the estimator into an exhaustive scenario-weighted one.
    """
    w = np.asarray(samples, float).reshape(-1)
    if w.size == 0:
        raise ValueError("empirical CVaR of an empty sample")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    order = np.argsort(w, kind="stable")
    w = w[order]
    if weights is None:
        h = w.size
        k = int(np.ceil(alpha * h))
        b = w[k - 1]
        return float(b - np.sum(b - w[:k]) / (alpha * h))
    pi = np.asarray(weights, float).reshape(-1)[order]
    if pi.size != w.size or np.any(pi < 0):
        raise ValueError("scenario weights must be nonnegative and match the samples")
    pi = pi / pi.sum()
    cum = np.cumsum(pi)
    k = int(np.searchsorted(cum, alpha - 1e-15) )
    k = min(k, w.size - 1)
    b = w[k]
    return float(b - np.sum(pi[: k + 1] * np.maximum(b - w[: k + 1], 0.0)) / alpha)


def gaussian_cvar_coefficient(alpha):
    """phi(Phi^{-1}(alpha)) / alpha, the Gaussian lower-tail penalty weight."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    return float(norm.pdf(norm.ppf(alpha)) / alpha)


# -- sampling LPs ---------------------------------------------------------------


def _sampling_lp(inst, welfare_rows, alpha, scenario_probs, lower=None, upper=None):
    """Assemble and solve the CVaR LP for precomputed per-scenario welfare rows.

    welfare_rows: (h, nm) matrix W with scenario welfare = W[j] @ a, or a list
    of (h_G rows per group) for the egalitarian variant (pass stacked rows and
    matching probs). Variables: a (nm), y (h), b.
    """
    W = np.asarray(welfare_rows, float)
    h = W.shape[0]
    nm = inst.nm
    if scenario_probs is None:
        pi = np.full(h, 1.0 / h)
    else:
        pi = np.asarray(scenario_probs, float)
        pi = pi / pi.sum()
    # y_j >= pi_j * (b - W_j a):  pi_j b - pi_j W_j a - y_j <= 0
    A_w = sp.hstack(
        [
            sp.csr_matrix(-pi[:, None] * W),
            -sp.eye(h, format="csr"),
            sp.csr_matrix(pi[:, None]),
        ]
    ).tocsr()
    A_poly, senses_poly, rhs_poly = polytope_rows(relaxed_polytope(inst))
    A = sp.vstack([A_w, sp.hstack([A_poly, sp.csr_matrix((A_poly.shape[0], h + 1))])]).tocsr()
    senses = ["<="] * h + list(senses_poly)
    rhs = np.concatenate([np.zeros(h), rhs_poly])
    objective = np.concatenate([np.zeros(nm), np.full(h, -1.0 / alpha), [1.0]])
    lo = np.concatenate([np.zeros(nm) if lower is None else lower, np.zeros(h), [-np.inf]])
    hi = np.concatenate([inst.caps_vector() if upper is None else upper, np.full(h, np.inf), [np.inf]])
    sol = solve_lp(LinearProgram(objective, A, senses, rhs, lo, hi))
    if not sol.optimal:
        raise ValueError(f"CVaR sampling LP failed: {sol.status}")
    return sol


def _usw_scenario_rows(inst, samples, weights):
    d = fold_usw_weights(inst, weights)
    return np.asarray(samples, float) * d[None, :]


def _gesw_scenario_rows(inst, samples):
    """Stacked per-(scenario, group) utility rows plus bookkeeping.

    The egalitarian LP needs y_j >= pi_j (b - u_G(a, v^j)) for every group,
    so each scenario contributes g rows tied to the same slack variable.
    """
    d = fold_gesw_scaling(inst)
    V = np.asarray(samples, float) * d[None, :]
    h = V.shape[0]
    g = inst.n_groups
    rows = np.zeros((h * g, inst.nm))
    for gid in range(g):
        idx = group_pair_indices(inst, gid)
        rows[gid * h : (gid + 1) * h][:, idx] = V[:, idx]
    return rows, h, g


def _solve_gesw_lp(inst, samples, alpha, scenario_probs, lower=None, upper=None):
    rows, h, g = _gesw_scenario_rows(inst, samples)
    nm = inst.nm
    if scenario_probs is None:
        pi = np.full(h, 1.0 / h)
    else:
        pi = np.asarray(scenario_probs, float)
        pi = pi / pi.sum()
    pi_full = np.tile(pi, g)
    A_w = sp.hstack(
        [
            sp.csr_matrix(-pi_full[:, None] * rows),
            sp.vstack([-sp.eye(h, format="csr")] * g),
            sp.csr_matrix(pi_full[:, None]),
        ]
    ).tocsr()
    A_poly, senses_poly, rhs_poly = polytope_rows(relaxed_polytope(inst))
    A = sp.vstack([A_w, sp.hstack([A_poly, sp.csr_matrix((A_poly.shape[0], h + 1))])]).tocsr()
    senses = ["<="] * (h * g) + list(senses_poly)
    rhs = np.concatenate([np.zeros(h * g), rhs_poly])
    objective = np.concatenate([np.zeros(nm), np.full(h, -1.0 / alpha), [1.0]])
    lo = np.concatenate([np.zeros(nm) if lower is None else lower, np.zeros(h), [-np.inf]])
    hi = np.concatenate([inst.caps_vector() if upper is None else upper, np.full(h, np.inf), [np.inf]])
    sol = solve_lp(LinearProgram(objective, A, senses, rhs, lo, hi))
    if not sol.optimal:
        raise ValueError(f"CVaR GESW sampling LP failed: {sol.status}")
    return sol


def _branch_and_bound(solve_relaxed, inst):
    """Best-first search over floor/ceil cell bounds for an integral optimum."""
    nm = inst.nm
    if nm > _BNB_MAX_CELLS:
        raise ValueError(f"exact integral mode is limited to nm <= {_BNB_MAX_CELLS} cells")
    root_lo = np.zeros(nm)
    root_hi = inst.caps_vector().astype(float)
    counter = itertools.count()
    sol = solve_relaxed(root_lo, root_hi)
    heap = [(-sol.objective, next(counter), root_lo, root_hi, sol)]
    best_val, best_x = -np.inf, None
    while heap:
        neg_bound, _, lo, hi, sol = heapq.heappop(heap)
        if -neg_bound <= best_val + 1e-9:
            break
        a = sol.x[:nm]
        frac = np.abs(a - np.round(a))
        j = int(np.argmax(frac))
        if frac[j] <= 1e-6:
            if sol.objective > best_val:
                best_val, best_x = sol.objective, sol
            continue
        for lo_j, hi_j in ((lo[j], np.floor(a[j])), (np.ceil(a[j]), hi[j])):
            if lo_j > hi_j:
                continue
            lo2, hi2 = lo.copy(), hi.copy()
            lo2[j], hi2[j] = lo_j, hi_j
            try:
                child = solve_relaxed(lo2, hi2)
            except ValueError:
                continue
            if child.objective > best_val + 1e-9:
                heapq.heappush(heap, (-child.objective, next(counter), lo2, hi2, child))
    if best_x is None:
        raise ValueError("branch and bound found no integral solution")
    return best_x


def cvar_usw_sampling(
    inst: Instance,
    samples,
    weights=None,
    alpha=0.01,
    scenario_probs=None,
    integral=False,
) -> SolveReport:
    """CVaR of weighted USW over valuation scenarios via one LP.

    ``scenario_probs`` switches to the exhaustive weighted variant (exact for
    finite outcome spaces); ``integral`` requests the branch-and-bound mode.
    """
    rows = _usw_scenario_rows(inst, samples, weights)

    def solve(lo, hi):
        return _sampling_lp(inst, rows, alpha, scenario_probs, lo, hi)

    sol = _branch_and_bound(solve, inst) if integral else solve(None, None)
    nm = inst.nm
    a = sol.x[:nm]
    mode = "integral" if integral else "fractional"
    alloc = Allocation(np.round(a).reshape(inst.n, inst.m) if integral else a.reshape(inst.n, inst.m), mode=mode)
    welfare_samples = rows @ alloc.vector
    check = empirical_cvar(welfare_samples, alpha, weights=scenario_probs)
    return SolveReport(
        allocation=alloc,
        objective=float(check),
        method="cvar-usw-lp",
        status="optimal",
        meta={
            "lp_objective": float(sol.objective),
            "estimator_gap": float(abs(check - sol.objective)),
            "alpha": alpha,
            "h": int(np.asarray(samples).shape[0]),
        },
    )


def cvar_gesw_sampling(inst: Instance, samples, alpha=0.01, scenario_probs=None, integral=False) -> SolveReport:
    """CVaR of the per-scenario minimum group utility via one LP (g*h rows)."""

    def solve(lo, hi):
        return _solve_gesw_lp(inst, samples, alpha, scenario_probs, lo, hi)

    sol = _branch_and_bound(solve, inst) if integral else solve(None, None)
    nm = inst.nm
    a = sol.x[:nm]
    mode = "integral" if integral else "fractional"
    alloc = Allocation(np.round(a).reshape(inst.n, inst.m) if integral else a.reshape(inst.n, inst.m), mode=mode)
    d = fold_gesw_scaling(inst)
    V = np.asarray(samples, float) * d[None, :]
    group_u = np.stack(
        [V[:, group_pair_indices(inst, g)] @ alloc.vector[group_pair_indices(inst, g)] for g in range(inst.n_groups)],
        axis=1,
    )
    check = empirical_cvar(group_u.min(axis=1), alpha, weights=scenario_probs)
    return SolveReport(
        allocation=alloc,
        objective=float(check),
        method="cvar-gesw-lp",
        status="optimal",
        meta={
            "lp_objective": float(sol.objective),
            "estimator_gap": float(abs(check - sol.objective)),
            "alpha": alpha,
            "h": int(np.asarray(samples).shape[0]),
        },
    )


def cvar_usw_gaussian(
    inst: Instance,
    dist: Gaussian,
    weights=None,
    alpha=0.01,
    cfg: AscentConfig | None = None,
) -> SolveReport:
    """Closed-form Gaussian CVaR objective maximized by projected gradient ascent."""
    cfg = cfg or AscentConfig(max_iters=2000, tol_objective=1e-10)
    d = fold_usw_weights(inst, weights)
    mean = np.asarray(dist.mean, float) * d
    diag = np.ndim(dist.cov) == 1
    cov = np.asarray(dist.cov, float) * d**2 if diag else d[:, None] * np.asarray(dist.cov, float) * d[None, :]
    coeff = gaussian_cvar_coefficient(alpha)

    def cov_mv(a):
        return cov * a if diag else cov @ a

    def oracle(a):
        ca = cov_mv(a)
        quad = float(a @ ca)
        sd = np.sqrt(max(quad, 0.0))
        f = float(a @ mean) - coeff * sd
        grad = mean - coeff * ca / max(sd, 1e-12)
        return f, grad

    poly = relaxed_polytope(inst)

    def project(a):
        return project_onto(a, poly)

    res = projected_gradient_ascent(oracle, project, np.zeros(inst.nm), cfg)
    alloc = Allocation(res.x.reshape(inst.n, inst.m), mode="fractional")
    return SolveReport(
        allocation=alloc,
        objective=float(res.objective),
        method="cvar-usw-gaussian",
        status="optimal" if res.converged else "not_converged",
        trace=res.trace,
        meta={"alpha": alpha, "penalty_coefficient": coeff, "iterations": res.iterations},
    )


# -- sample complexity ------------------------------------------------------------


def sample_complexity_bound(max_quad, log_num_allocs, alpha, epsilon, delta, eta, gamma):
    """Sample count guaranteeing uniform epsilon-accurate CVaR estimates.

    Ceiling of 8 * max(max_quad, 8) * ln(6 |A| / delta) divided by
    min(eps^2, 16 gamma^2) * alpha^2 * min(eta^2, 1); log_num_allocs = ln|A|.
    """
    for name, val in (("max_quad", max_quad), ("epsilon", epsilon), ("eta", eta), ("gamma", gamma)):
        if val <= 0:
            raise ValueError(f"{name} must be positive")
    if not 0 < alpha < 0.5:
        raise ValueError("alpha must lie in (0, 0.5)")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    log_term = np.log(6.0) + log_num_allocs - np.log(delta)
    numer = 8.0 * max(max_quad, 8.0) * log_term
    denom = min(epsilon**2, 16.0 * gamma**2) * alpha**2 * min(eta**2, 1.0)
    return int(np.ceil(numer / denom))


def log_allocation_count_upper(inst: Instance):
    """ln |A| upper bound from the per-agent product relaxation.

    Counts, for each agent independently, the integer rows 0 <= x <= caps
    with row sum within the load bounds (ignoring supply coupling), and sums
    the logs.
    """
    total = 0.0
    for a in range(inst.n):
        caps = inst.pair_caps[a].astype(int)
        hi = int(inst.load_upper[a])
        lo = int(np.ceil(inst.load_lower[a]))
        counts = np.zeros(hi + 1, dtype=float)
        counts[0] = 1.0
        for c in caps:
            new = np.zeros_like(counts)
            for s in range(hi + 1):
                if counts[s] == 0:
                    continue
                top = min(c, hi - s)
                new[s : s + top + 1] += counts[s]
            counts = new
        n_rows = counts[lo : hi + 1].sum()
        if n_rows <= 0:
            raise ValueError(f"agent {a} has no feasible integer row")
        total += float(np.log(n_rows))
    return total
