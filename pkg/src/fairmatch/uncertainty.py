"""Uncertainty sets and valuation distributions.

Sets describe where the true valuation vector may live (polyhedra,
truncated ellipsoids, per-group products); distributions describe a full
probability model. Construction routines turn fitted prediction models
into sets; ``worst_case_linear`` performs the exact inner minimization
used by every robust method and by robust-welfare evaluation.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from cvxopt import matrix as cvx_matrix
from cvxopt import solvers as cvx_solvers
from scipy.optimize import brentq
from scipy.stats import chi2, norm

_CVX_OPTIONS_LOCK = threading.Lock()

from .instance import Instance, group_pair_indices
from .kernels.lp import LinearProgram, solve_lp

__all__ = [
    "PolyhedralSet",
    "EllipsoidConstraint",
    "EllipsoidSet",
    "GroupProductSet",
    "Gaussian",
    "Bernoulli",
    "SkewNormal",
    "Empirical",
    "GroupLossStats",
    "group_loss_stats",
    "build_cross_entropy_polyhedron",
    "build_cross_entropy_group_sets",
    "build_gaussian_ellipsoid",
    "build_gaussian_group_ellipsoids",
    "worst_case_linear",
    "worst_case_group_utilities",
    "contains",
    "scale_set",
    "sample",
    "set_to_dict",
    "set_from_dict",
    "save_samples",
    "load_samples",
    "samples_to_csv",
]

cvx_solvers.options["show_progress"] = False


# -- sets --------------------------------------------------------------------


@dataclass(frozen=True)
class PolyhedralSet:
    """{v : Q v >= e, 0 <= v (<= upper)}; Q is k x d, dense or sparse.

    Construction certifies nonemptiness with an LP feasibility solve.
    """

    Q: object
    e: np.ndarray
    upper: np.ndarray | None = None

    def __post_init__(self):
        Q = self.Q.toarray() if sp.issparse(self.Q) else np.asarray(self.Q, float)
        if not np.all(np.isfinite(Q)) or not np.all(np.isfinite(self.e)):
            raise ValueError("polyhedral set needs finite coefficients")
        upper = np.full(self.dim, np.inf) if self.upper is None else np.asarray(self.upper, float)
        lp = LinearProgram(np.zeros(self.dim), self.Q, [">="] * self.k, self.e, lower=np.zeros(self.dim), upper=upper)
        if not solve_lp(lp).optimal:
            raise ValueError("polyhedral uncertainty set is empty")

    @property
    def dim(self):
        return self.Q.shape[1]

    @property
    def k(self):
        return self.Q.shape[0]


@dataclass(frozen=True)
class EllipsoidConstraint:
    """(v - center)' cov^{-1} (v - center) <= radius^2; cov may be a 1-D diagonal."""

    center: np.ndarray
    cov: np.ndarray
    radius: float

    def __post_init__(self):
        if self.radius < 0:
            raise ValueError("ellipsoid radius must be nonnegative")

    @property
    def diagonal(self):
        return np.ndim(self.cov) == 1

    def quad(self, v):
        """(v - center)' cov^{-1} (v - center), with zero-variance coordinates pinned."""
        d = np.asarray(v, float) - self.center
        if self.diagonal:
            s = np.asarray(self.cov, float)
            pos = s > 0
            if np.any(np.abs(d[~pos]) > 1e-9):
                return np.inf
            return float(np.sum(d[pos] ** 2 / s[pos]))
        sol = np.linalg.lstsq(np.asarray(self.cov, float), d, rcond=None)[0]
        return float(d @ sol)


@dataclass(frozen=True)
class EllipsoidSet:
    """Intersection of truncated ellipsoids, optional linear rows, and v >= 0.

    Construction certifies nonemptiness: the clamped first center is tried
    first, then a cone feasibility solve decides.
    """

    constraints: tuple
    Q: object = None
    e: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "constraints", tuple(self.constraints))
        if not self.constraints:
            raise ValueError("EllipsoidSet needs at least one ellipsoid")
        witness = np.maximum(self.constraints[0].center, 0.0)
        if not contains(self, witness, tol=1e-9):
            try:
                _worst_case_conelp(np.zeros(self.dim), self)
            except ValueError as exc:
                raise ValueError("ellipsoidal uncertainty set is empty") from exc

    @property
    def dim(self):
        return self.constraints[0].center.size

    @property
    def n_ellipsoids(self):
        return len(self.constraints)


@dataclass(frozen=True)
class GroupProductSet:
    """One independent uncertainty set per group, over that group's pair coords."""

    sets: tuple
    group_indices: tuple  # flat pair indices per group, in vector order

    def __post_init__(self):
        object.__setattr__(self, "sets", tuple(self.sets))
        object.__setattr__(self, "group_indices", tuple(np.asarray(ix, dtype=int) for ix in self.group_indices))
        seen = np.concatenate(self.group_indices)
        if len(np.unique(seen)) != seen.size:
            raise ValueError("group index blocks overlap")

    @property
    def dim(self):
        return sum(ix.size for ix in self.group_indices)

    @property
    def n_groups(self):
        return len(self.sets)

    @classmethod
    def for_instance(cls, inst: Instance, sets):
        idx = [group_pair_indices(inst, g) for g in range(inst.n_groups)]
        return cls(tuple(sets), tuple(idx))


# -- distributions ------------------------------------------------------------


@dataclass(frozen=True)
class Gaussian:
    mean: np.ndarray
    cov: np.ndarray  # 1-D diagonal or full PSD matrix

    @property
    def dim(self):
        return self.mean.size


@dataclass(frozen=True)
class Bernoulli:
    probs: np.ndarray
    levels: tuple = (0.0, 1.0)

    def __post_init__(self):
        p = np.asarray(self.probs, float)
        if np.any(p < 0) or np.any(p > 1):
            raise ValueError("Bernoulli probabilities must lie in [0, 1]")

    @property
    def dim(self):
        return np.asarray(self.probs).size


@dataclass(frozen=True)
class SkewNormal:
    """Mean-matched skew normal: x = mean + stdev * (z - E[z]) with z standard."""

    mean: np.ndarray
    stdev: np.ndarray
    skew: np.ndarray

    @property
    def dim(self):
        return np.asarray(self.mean).size


@dataclass(frozen=True)
class Empirical:
    samples: np.ndarray  # (h0, d), resampled with replacement

    @property
    def dim(self):
        return self.samples.shape[1]


# -- construction from fitted models ------------------------------------------


@dataclass(frozen=True)
class GroupLossStats:
    mean: float
    stderr: float
    count: int


def _binary_cross_entropy(labels, probs):
    p = np.clip(probs, 1e-12, 1 - 1e-12)
    return -labels * np.log(p) - (1 - labels) * np.log(1 - p)


def group_loss_stats(predicted_probs, labels, test_mask, inst: Instance):
    """Per-group test cross-entropy statistics {mean, spread, count}.

    The test set is segmented by the group of the pair's agent. The spread
    is the plain standard deviation of the per-pair losses: dividing by
    sqrt(count) makes the resulting bound fail to budget the fluctuation of
    the problem pairs' own mean loss and the set no longer covers the truth
    at the nominal level.
    """
    losses = _binary_cross_entropy(np.asarray(labels, float), np.asarray(predicted_probs, float))
    out = {}
    for g in range(inst.n_groups):
        rows = inst.group_members(g)
        mask_g = np.zeros_like(test_mask, dtype=bool)
        mask_g[rows] = test_mask[rows]
        vals = losses[mask_g]
        if vals.size == 0:
            raise ValueError(f"group {g} has an empty test set")
        out[g] = GroupLossStats(float(vals.mean()), float(vals.std(ddof=0)), int(vals.size))
    return out


def _ce_row(probs_flat, idx, bound, restrict=None):
    """One 'mean cross-entropy <= bound' constraint in Q v >= e form."""
    if restrict is not None:
        idx = idx[restrict[idx]]
    if idx.size == 0:
        raise ValueError("cross-entropy row has no unrestricted pairs")
    p = np.clip(probs_flat[idx], 1e-12, 1 - 1e-12)
    coef = np.log(p / (1 - p)) / idx.size
    rhs = -bound - np.sum(np.log(1 - p)) / idx.size
    return idx, coef, rhs


def build_cross_entropy_polyhedron(
    predicted_probs,
    stats,
    alpha,
    inst: Instance,
    restrict_by_caps=False,
):
    """Polyhedral set from a bounded-cross-entropy binary predictor.

    One row per group: the mean binary cross-entropy of the group's pairs,
    which is affine in the (binary) valuations, is bounded by the Gaussian
    quantile at 1 - alpha/g of the group's test-loss statistics. Valuations
    carry the box 0 <= v <= 1.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    probs = np.asarray(predicted_probs, float)
    if np.any(probs <= 0) or np.any(probs >= 1):
        raise ValueError("predicted probabilities must lie strictly inside (0, 1)")
    nm = inst.nm
    flat = probs.reshape(-1)
    restrict = (inst.pair_caps.reshape(-1) > 0) if restrict_by_caps else None
    g = inst.n_groups
    z = norm.ppf(1 - alpha / g)
    rows, e = [], []
    for gid in range(g):
        st = stats[gid]
        bound = st.mean + z * st.stderr
        idx, coef, rhs = _ce_row(flat, group_pair_indices(inst, gid), bound, restrict)
        row = np.zeros(nm)
        row[idx] = coef
        rows.append(row)
        e.append(rhs)
    return PolyhedralSet(np.array(rows), np.array(e), upper=np.ones(nm))


def build_cross_entropy_group_sets(predicted_probs, stats, alpha, inst, restrict_by_caps=False):
    """Per-group split of the cross-entropy polyhedron (product structure)."""
    joint = build_cross_entropy_polyhedron(predicted_probs, stats, alpha, inst, restrict_by_caps)
    Q = np.asarray(joint.Q)
    sets = []
    idx_blocks = []
    for gid in range(inst.n_groups):
        idx = group_pair_indices(inst, gid)
        sets.append(PolyhedralSet(Q[gid : gid + 1, idx], joint.e[gid : gid + 1], upper=np.ones(idx.size)))
        idx_blocks.append(idx)
    return GroupProductSet(tuple(sets), tuple(idx_blocks))


def build_gaussian_ellipsoid(dist: Gaussian, alpha):
    """Truncated ellipsoid at the 1-alpha confidence level of a Gaussian.

    Radius^2 is the chi-square quantile with (dim - 1) degrees of freedom.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    dof = dist.dim - 1
    r2 = float(chi2.ppf(1 - alpha, dof)) if dof > 0 else 0.0
    return EllipsoidSet((EllipsoidConstraint(np.asarray(dist.mean, float), np.asarray(dist.cov, float), np.sqrt(r2)),))


def build_gaussian_group_ellipsoids(dist: Gaussian, alpha, inst: Instance):
    """Per-group truncated ellipsoids at level 1 - alpha/g (union bound)."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    mean = np.asarray(dist.mean, float)
    diag = np.ndim(dist.cov) == 1
    sets, blocks = [], []
    g = inst.n_groups
    for gid in range(g):
        idx = group_pair_indices(inst, gid)
        cov_g = np.asarray(dist.cov)[idx] if diag else np.asarray(dist.cov)[np.ix_(idx, idx)]
        dof = idx.size - 1
        r2 = float(chi2.ppf(1 - alpha / g, dof)) if dof > 0 else 0.0
        sets.append(EllipsoidSet((EllipsoidConstraint(mean[idx], cov_g, np.sqrt(r2)),)))
        blocks.append(idx)
    return GroupProductSet(tuple(sets), tuple(blocks))


# -- worst-case linear functionals --------------------------------------------


def _worst_case_polyhedral(a, s: PolyhedralSet):
    upper = np.full(s.dim, np.inf) if s.upper is None else s.upper
    lp = LinearProgram(
        objective=-np.asarray(a, float),
        A=s.Q,
        senses=[">="] * s.k,
        rhs=s.e,
        lower=np.zeros(s.dim),
        upper=upper,
    )
    sol = solve_lp(lp)
    if not sol.optimal:
        raise ValueError(f"polyhedral inner minimization failed: {sol.status}")
    return float(-sol.objective), sol.x


def _worst_case_single_diag(a, ell: EllipsoidConstraint):
    """Exact KKT solve of min a.v over a diagonal ellipsoid intersected with v >= 0."""
    a = np.asarray(a, float)
    vbar = ell.center
    svar = np.asarray(ell.cov, float)
    free = svar > 0
    v = vbar.copy()
    value_fixed = float(a[~free] @ vbar[~free])
    af, vf, sf = a[free], vbar[free], svar[free]
    r2 = ell.radius**2
    if np.all(np.abs(af) < 1e-15) or r2 == 0.0:
        return value_fixed + float(af @ vf), v

    def g(t):
        w = np.maximum(0.0, vf - sf * af * t)
        return float(np.sum((w - vf) ** 2 / sf))

    if np.any(af < 0):
        g_cap = np.inf
    else:
        g_cap = float(np.sum(vf[af > 0] ** 2 / sf[af > 0]))
    if g_cap <= r2:
        w = vf.copy()
        w[af > 0] = 0.0
    else:
        t_hi = 1.0
        while g(t_hi) < r2:
            t_hi *= 2.0
            if t_hi > 1e18:
                raise ValueError("ellipsoid worst case failed to bracket")
        t_star = brentq(lambda t: g(t) - r2, 0.0, t_hi, xtol=1e-14, rtol=1e-13)
        w = np.maximum(0.0, vf - sf * af * t_star)
    v[free] = w
    return value_fixed + float(af @ w), v


def _cov_inv_sqrt(cov, d):
    if np.ndim(cov) == 1:
        s = np.maximum(np.asarray(cov, float), 1e-12)
        return sp.diags(1.0 / np.sqrt(s)).toarray()
    w, U = np.linalg.eigh(np.asarray(cov, float))
    w = np.maximum(w, 1e-12)
    return (U / np.sqrt(w)) @ U.T


def _worst_case_conelp(a, s: EllipsoidSet):
    """General cone solve: linear objective over ellipsoids + rows + orthant."""
    d = s.dim
    a = np.asarray(a, float)
    G_l = [-np.eye(d)]
    h_l = [np.zeros(d)]
    if s.Q is not None:
        Qd = s.Q.toarray() if sp.issparse(s.Q) else np.asarray(s.Q, float)
        G_l.append(-Qd)
        h_l.append(-np.asarray(s.e, float))
    G_blocks = [np.vstack(G_l)]
    h_blocks = [np.concatenate(h_l)]
    q_dims = []
    for ell in s.constraints:
        A = _cov_inv_sqrt(ell.cov, d)
        G_soc = np.vstack([np.zeros((1, d)), -A])
        h_soc = np.concatenate([[ell.radius], -A @ ell.center])
        G_blocks.append(G_soc)
        h_blocks.append(h_soc)
        q_dims.append(d + 1)
    G = cvx_matrix(np.vstack(G_blocks))
    h = cvx_matrix(np.concatenate(h_blocks))
    dims = {"l": G_blocks[0].shape[0], "q": q_dims, "s": []}
    sol = None
    for opts in ({"show_progress": False, "abstol": 1e-10, "reltol": 1e-10, "feastol": 1e-9},
                 {"show_progress": False, "abstol": 1e-7, "reltol": 1e-7, "feastol": 1e-7, "maxiters": 200}):
        with _CVX_OPTIONS_LOCK:
            saved = dict(cvx_solvers.options)
            cvx_solvers.options.update(opts)
            try:
                sol = cvx_solvers.conelp(cvx_matrix(a), G, h, dims=dims)
            except (ValueError, ArithmeticError, ZeroDivisionError):
                sol = None
            finally:
                cvx_solvers.options.clear()
                cvx_solvers.options.update(saved)
        if sol is not None and sol["status"] == "optimal":
            break
    if sol is None or sol["status"] != "optimal":
        status = "numerical" if sol is None else sol["status"]
        raise ValueError(f"ellipsoidal inner minimization failed: {status}")
    v = np.asarray(sol["x"]).reshape(-1)
    return float(a @ v), np.maximum(v, 0.0)


def worst_case_linear(a_vec, uset):
    """min over the set of a_vec . v; returns (value, minimizer v*)."""
    a = np.asarray(a_vec, float).reshape(-1)
    if isinstance(uset, PolyhedralSet):
        if a.size != uset.dim:
            raise ValueError("dimension mismatch")
        return _worst_case_polyhedral(a, uset)
    if isinstance(uset, EllipsoidSet):
        if a.size != uset.dim:
            raise ValueError("dimension mismatch")
        if uset.n_ellipsoids == 1 and uset.Q is None and uset.constraints[0].diagonal:
            return _worst_case_single_diag(a, uset.constraints[0])
        return _worst_case_conelp(a, uset)
    if isinstance(uset, GroupProductSet):
        value = 0.0
        v = np.zeros(a.size)
        for sub, idx in zip(uset.sets, uset.group_indices):
            val_g, v_g = worst_case_linear(a[idx], sub)
            value += val_g
            v[idx] = v_g
        return value, v
    raise TypeError(f"unsupported uncertainty set type {type(uset).__name__}")


def worst_case_group_utilities(alloc, uset: GroupProductSet, inst: Instance):
    """Per-group worst-case size-normalized utilities.

    Because groups' sets are independent, minimizing each group separately
    and plugging the results into any monotone welfare equals the joint
    inner minimum for the fixed allocation.
    """
    avec = alloc.vector if hasattr(alloc, "vector") else np.asarray(alloc, float).reshape(-1)
    sizes = inst.group_sizes()
    out = np.zeros(inst.n_groups)
    for g, (sub, idx) in enumerate(zip(uset.sets, uset.group_indices)):
        val, _ = worst_case_linear(avec[idx], sub)
        out[g] = val / sizes[g]
    return out


def contains(uset, v, tol=1e-7):
    """Set membership up to tolerance (used by coverage checks)."""
    v = np.asarray(v, float).reshape(-1)
    if isinstance(uset, PolyhedralSet):
        Q = uset.Q.toarray() if sp.issparse(uset.Q) else np.asarray(uset.Q, float)
        ok = np.all(Q @ v >= uset.e - tol) and np.all(v >= -tol)
        if uset.upper is not None:
            ok = ok and np.all(v <= uset.upper + tol)
        return bool(ok)
    if isinstance(uset, EllipsoidSet):
        if np.any(v < -tol):
            return False
        if uset.Q is not None:
            Q = uset.Q.toarray() if sp.issparse(uset.Q) else np.asarray(uset.Q, float)
            if not np.all(Q @ v >= uset.e - tol):
                return False
        return all(ell.quad(v) <= ell.radius**2 + tol for ell in uset.constraints)
    if isinstance(uset, GroupProductSet):
        return all(contains(sub, v[idx], tol) for sub, idx in zip(uset.sets, uset.group_indices))
    raise TypeError(f"unsupported uncertainty set type {type(uset).__name__}")


def scale_set(uset, d):
    """Reparameterize the set for scaled valuations w = d * v (d > 0).

    Used to fold utilitarian weights and the per-group 1/|G| factor into
    the set parameters so solvers can work with plain inner products.
    """
    d = np.asarray(d, float).reshape(-1)
    if np.any(d <= 0):
        raise ValueError("scaling vector must be strictly positive")
    if isinstance(uset, PolyhedralSet):
        Q = uset.Q.multiply(sp.diags(1.0 / d)) if sp.issparse(uset.Q) else np.asarray(uset.Q, float) / d[None, :]
        upper = None if uset.upper is None else uset.upper * d
        return PolyhedralSet(Q, uset.e, upper)
    if isinstance(uset, EllipsoidSet):
        cons = []
        for ell in uset.constraints:
            cov = ell.cov * d**2 if ell.diagonal else d[:, None] * np.asarray(ell.cov, float) * d[None, :]
            cons.append(EllipsoidConstraint(ell.center * d, cov, ell.radius))
        Q = None
        if uset.Q is not None:
            Q = uset.Q.multiply(sp.diags(1.0 / d)) if sp.issparse(uset.Q) else np.asarray(uset.Q, float) / d[None, :]
        return EllipsoidSet(tuple(cons), Q, uset.e)
    if isinstance(uset, GroupProductSet):
        return GroupProductSet(
            tuple(scale_set(sub, d[idx]) for sub, idx in zip(uset.sets, uset.group_indices)),
            uset.group_indices,
        )
    raise TypeError(f"unsupported uncertainty set type {type(uset).__name__}")


# -- sampling -----------------------------------------------------------------


def sample(dist, h, seed):
    """h i.i.d. draws, one row each; deterministic given the seed."""
    if h <= 0:
        raise ValueError("sample count must be positive")
    rng = np.random.default_rng(seed)
    if isinstance(dist, Gaussian):
        mean = np.asarray(dist.mean, float)
        if np.ndim(dist.cov) == 1:
            std = np.sqrt(np.asarray(dist.cov, float))
            return mean[None, :] + rng.standard_normal((h, mean.size)) * std[None, :]
        cov = np.asarray(dist.cov, float)
        L = np.linalg.cholesky(cov + 1e-12 * np.eye(cov.shape[0]))
        return mean[None, :] + rng.standard_normal((h, mean.size)) @ L.T
    if isinstance(dist, Bernoulli):
        p = np.asarray(dist.probs, float).reshape(-1)
        lo, hi = dist.levels
        draws = rng.random((h, p.size)) < p[None, :]
        return np.where(draws, hi, lo).astype(float)
    if isinstance(dist, SkewNormal):
        mean = np.broadcast_to(np.asarray(dist.mean, float), (np.asarray(dist.mean).size,))
        d = mean.size
        stdev = np.broadcast_to(np.asarray(dist.stdev, float), (d,))
        skew = np.broadcast_to(np.asarray(dist.skew, float), (d,))
        delta = skew / np.sqrt(1.0 + skew**2)
        u0 = rng.standard_normal((h, d))
        u1 = rng.standard_normal((h, d))
        z = delta[None, :] * np.abs(u0) + np.sqrt(1.0 - delta[None, :] ** 2) * u1
        return mean[None, :] + stdev[None, :] * (z - delta[None, :] * np.sqrt(2.0 / np.pi))
    if isinstance(dist, Empirical):
        rows = rng.integers(0, dist.samples.shape[0], size=h)
        return np.asarray(dist.samples, float)[rows]
    raise TypeError(f"unsupported distribution type {type(dist).__name__}")


# -- serialization -------------------------------------------------------------


def _q_to_doc(Q):
    if Q is None:
        return None
    if sp.issparse(Q):
        coo = Q.tocoo()
        return {
            "sparse": {
                "shape": list(coo.shape),
                "rows": coo.row.tolist(),
                "cols": coo.col.tolist(),
                "data": coo.data.tolist(),
            }
        }
    return {"dense": np.asarray(Q, float).tolist()}


def _q_from_doc(doc):
    if doc is None:
        return None
    if "sparse" in doc:
        s = doc["sparse"]
        return sp.coo_matrix((s["data"], (s["rows"], s["cols"])), shape=tuple(s["shape"])).tocsr()
    return np.asarray(doc["dense"], float)


def set_to_dict(uset):
    if isinstance(uset, PolyhedralSet):
        return {
            "kind": "polyhedral",
            "Q": _q_to_doc(uset.Q),
            "e": uset.e.tolist(),
            "upper": None if uset.upper is None else np.asarray(uset.upper).tolist(),
        }
    if isinstance(uset, EllipsoidSet):
        return {
            "kind": "ellipsoid",
            "constraints": [
                {
                    "center": ell.center.tolist(),
                    "cov": {"diag": np.asarray(ell.cov).tolist()} if ell.diagonal else {"dense": np.asarray(ell.cov).tolist()},
                    "radius": float(ell.radius),
                }
                for ell in uset.constraints
            ],
            "Q": _q_to_doc(uset.Q),
            "e": None if uset.e is None else np.asarray(uset.e).tolist(),
        }
    if isinstance(uset, GroupProductSet):
        return {
            "kind": "group_product",
            "sets": [set_to_dict(s) for s in uset.sets],
            "group_indices": [ix.tolist() for ix in uset.group_indices],
        }
    raise TypeError(f"unsupported uncertainty set type {type(uset).__name__}")


def set_from_dict(doc):
    kind = doc["kind"]
    if kind == "polyhedral":
        upper = None if doc["upper"] is None else np.asarray(doc["upper"], float)
        return PolyhedralSet(_q_from_doc(doc["Q"]), np.asarray(doc["e"], float), upper)
    if kind == "ellipsoid":
        cons = tuple(
            EllipsoidConstraint(
                np.asarray(c["center"], float),
                np.asarray(c["cov"]["diag"], float) if "diag" in c["cov"] else np.asarray(c["cov"]["dense"], float),
                float(c["radius"]),
            )
            for c in doc["constraints"]
        )
        e = None if doc["e"] is None else np.asarray(doc["e"], float)
        return EllipsoidSet(cons, _q_from_doc(doc["Q"]), e)
    if kind == "group_product":
        return GroupProductSet(
            tuple(set_from_dict(s) for s in doc["sets"]),
            tuple(np.asarray(ix, int) for ix in doc["group_indices"]),
        )
    raise ValueError(f"unknown uncertainty set kind {kind!r}")


_SAMPLE_MAGIC = np.int64(0x46414D53)  # "FAMS"


def save_samples(samples, path, seed=0):
    """Binary sample file: int64 header {magic, h, nm, seed}, column-major float64."""
    arr = np.asarray(samples, float)
    h, nm = arr.shape
    with open(path, "wb") as fh:
        np.array([_SAMPLE_MAGIC, h, nm, seed], dtype=np.int64).tofile(fh)
        np.asfortranarray(arr).T.tofile(fh)  # column-major payload


def load_samples(path):
    with open(path, "rb") as fh:
        header = np.fromfile(fh, dtype=np.int64, count=4)
        if header.size != 4 or header[0] != _SAMPLE_MAGIC:
            raise ValueError(f"{path}: not a sample file")
        _, h, nm, seed = header
        data = np.fromfile(fh, dtype=np.float64, count=h * nm)
    if data.size != h * nm:
        raise ValueError(f"{path}: truncated sample file")
    return data.reshape(nm, h).T.copy(), int(seed)


def samples_to_csv(samples, path_or_buf):
    arr = np.asarray(samples, float)
    if isinstance(path_or_buf, (str, bytes)):
        np.savetxt(path_or_buf, arr, delimiter=",")
    else:
        np.savetxt(path_or_buf, arr, delimiter=",")
