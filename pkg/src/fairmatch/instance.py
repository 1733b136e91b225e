"""Problem data: agents, item types, groups, constraints, allocations, welfare.

Index convention used everywhere: an n x m matrix is vectorized row-major,
so the pair (agent a, item i) sits at flat index a*m + i. Group slices of a
vectorized quantity gather the rows of the group's agents in agent order.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Instance",
    "Allocation",
    "WelfareSpec",
    "pair_index",
    "vectorize",
    "devectorize",
    "group_pair_indices",
    "group_utilities",
    "welfare",
    "validate_instance",
    "instance_to_dict",
    "instance_from_dict",
    "save_instance",
    "load_instance",
    "allocation_to_csv",
    "allocation_from_csv",
]


def _as_array(x, n, dtype=float):
    arr = np.broadcast_to(np.asarray(x, dtype=dtype), (n,)).copy()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Instance:
    """An allocation problem: n agents, m item types, groups, and bounds.

    Feasible allocations A satisfy, elementwise and per line,
    load_lower <= row sums <= load_upper, supply_lower <= column sums <=
    supply_upper and 0 <= A <= pair_caps. ``group_ids[a]`` is the group of
    agent a; groups must partition the agents into nonempty blocks.
    """

    load_lower: np.ndarray
    load_upper: np.ndarray
    supply_lower: np.ndarray
    supply_upper: np.ndarray
    pair_caps: np.ndarray
    group_ids: np.ndarray
    group_weights: np.ndarray

    @classmethod
    def build(
        cls,
        n,
        m,
        load_lower=0,
        load_upper=None,
        supply_lower=0,
        supply_upper=None,
        pair_caps=1,
        group_ids=None,
        group_weights=None,
    ):
        """Convenience constructor with broadcasting and default weights |G|."""
        if load_upper is None:
            load_upper = m
        if supply_upper is None:
            supply_upper = n
        caps = np.broadcast_to(np.asarray(pair_caps, dtype=float), (n, m)).copy()
        caps.setflags(write=False)
        if group_ids is None:
            group_ids = np.zeros(n, dtype=int)
        gids = np.asarray(group_ids, dtype=int).copy()
        gids.setflags(write=False)
        g = int(gids.max()) + 1 if n else 0
        if group_weights is None:
            group_weights = np.bincount(gids, minlength=g).astype(float)
        return cls(
            load_lower=_as_array(load_lower, n),
            load_upper=_as_array(load_upper, n),
            supply_lower=_as_array(supply_lower, m),
            supply_upper=_as_array(supply_upper, m),
            pair_caps=caps,
            group_ids=gids,
            group_weights=_as_array(group_weights, g),
        )

    @property
    def n(self):
        return self.load_lower.shape[0]

    @property
    def m(self):
        return self.supply_lower.shape[0]

    @property
    def nm(self):
        return self.n * self.m

    @property
    def n_groups(self):
        return self.group_weights.shape[0]

    def group_members(self, gid):
        """Agent indices of group gid, ascending."""
        return np.flatnonzero(self.group_ids == gid)

    def group_sizes(self):
        return np.bincount(self.group_ids, minlength=self.n_groups)

    def caps_vector(self):
        return self.pair_caps.reshape(-1)


@dataclass(frozen=True)
class Allocation:
    """A nonnegative n x m assignment matrix, fractional or integral."""

    values: np.ndarray
    mode: str = "fractional"

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float).copy()
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        if self.mode not in ("fractional", "integral"):
            raise ValueError(f"unknown allocation mode {self.mode!r}")
        if np.any(vals < -1e-12):
            raise ValueError("allocation has negative entries")
        if self.mode == "integral" and np.any(np.abs(vals - np.round(vals)) > 1e-9):
            raise ValueError("integral allocation has non-integer entries")

    @property
    def vector(self):
        return self.values.reshape(-1)

    def feasible(self, inst: Instance, tol=1e-7):
        """True iff rows, columns and cells lie within the instance bounds."""
        v = self.values
        if v.shape != (inst.n, inst.m):
            raise ValueError("allocation shape does not match instance")
        rows = v.sum(axis=1)
        cols = v.sum(axis=0)
        return bool(
            np.all(rows >= inst.load_lower - tol)
            and np.all(rows <= inst.load_upper + tol)
            and np.all(cols >= inst.supply_lower - tol)
            and np.all(cols <= inst.supply_upper + tol)
            and np.all(v <= inst.pair_caps + tol)
            and np.all(v >= -tol)
        )

    def violations(self, inst: Instance, tol=1e-7):
        """Human-readable list of violated constraints (empty when feasible)."""
        v = self.values
        out = []
        rows = v.sum(axis=1)
        cols = v.sum(axis=0)
        for a in np.flatnonzero(rows > inst.load_upper + tol):
            out.append(f"agent {a}: load {rows[a]:.6g} > {inst.load_upper[a]:.6g}")
        for a in np.flatnonzero(rows < inst.load_lower - tol):
            out.append(f"agent {a}: load {rows[a]:.6g} < {inst.load_lower[a]:.6g}")
        for i in np.flatnonzero(cols > inst.supply_upper + tol):
            out.append(f"item {i}: supply {cols[i]:.6g} > {inst.supply_upper[i]:.6g}")
        for i in np.flatnonzero(cols < inst.supply_lower - tol):
            out.append(f"item {i}: supply {cols[i]:.6g} < {inst.supply_lower[i]:.6g}")
        if np.any(v > inst.pair_caps + tol):
            out.append("pair cap exceeded")
        if np.any(v < -tol):
            out.append("negative entry")
        return out


@dataclass(frozen=True)
class WelfareSpec:
    """Which welfare to compute: utilitarian (weighted) or group egalitarian.

    ``weights`` applies to the utilitarian kind only; None means the default
    w_G = |G|, under which utilitarian welfare equals the plain sum a.v.
    """

    kind: str = "utilitarian"
    weights: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("utilitarian", "group_egalitarian"):
            raise ValueError(f"unknown welfare kind {self.kind!r}")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float).copy()
            if np.any(w < 0):
                raise ValueError("welfare weights must be nonnegative")
            w.setflags(write=False)
            object.__setattr__(self, "weights", w)

    def resolved_weights(self, inst: Instance):
        if self.weights is not None:
            if self.weights.shape[0] != inst.n_groups:
                raise ValueError("weight vector length does not match group count")
            return self.weights
        return inst.group_sizes().astype(float)


def pair_index(a, i, m):
    """Flat row-major index of pair (agent a, item i)."""
    return a * m + i


def vectorize(matrix):
    """n x m matrix -> length-nm vector, row-major."""
    return np.asarray(matrix, dtype=float).reshape(-1)


def devectorize(vec, n, m):
    """Length-nm vector -> n x m matrix, row-major."""
    vec = np.asarray(vec, dtype=float)
    if vec.size != n * m:
        raise ValueError(f"vector of size {vec.size} is not {n}x{m}")
    return vec.reshape(n, m)


def group_pair_indices(inst: Instance, gid):
    """Flat indices of all (agent, item) pairs whose agent is in group gid."""
    members = inst.group_members(gid)
    return (members[:, None] * inst.m + np.arange(inst.m)[None, :]).reshape(-1)


def _alloc_vector(alloc, inst):
    vec = alloc.vector if isinstance(alloc, Allocation) else np.asarray(alloc, dtype=float).reshape(-1)
    if vec.size != inst.nm:
        raise ValueError("allocation size does not match instance")
    return vec


def group_utilities(alloc, v, inst: Instance):
    """Size-normalized group utilities u_G = (a_G . v_G) / |G|."""
    avec = _alloc_vector(alloc, inst)
    vvec = np.asarray(v, dtype=float).reshape(-1)
    if vvec.size != inst.nm:
        raise ValueError("valuation size does not match instance")
    if not np.all(np.isfinite(vvec)):
        raise ValueError("valuation vector has non-finite entries")
    prod = (avec * vvec).reshape(inst.n, inst.m).sum(axis=1)
    totals = np.bincount(inst.group_ids, weights=prod, minlength=inst.n_groups)
    return totals / inst.group_sizes()


def welfare(alloc, v, inst: Instance, spec: WelfareSpec | None = None):
    """Scalar welfare of an allocation under valuation vector v."""
    spec = spec or WelfareSpec()
    u = group_utilities(alloc, v, inst)
    if spec.kind == "utilitarian":
        return float(spec.resolved_weights(inst) @ u)
    return float(u.min())


def validate_instance(inst: Instance, check_feasibility=True):
    """Report structural problems; empty list means the instance is valid.

    With ``check_feasibility`` a relaxed LP feasibility solve certifies that
    the constraint polytope is nonempty (the aggregate counting checks are
    necessary but not sufficient).
    """
    problems = []
    n, m = inst.n, inst.m
    if n < 1 or m < 1:
        problems.append("instance must have at least one agent and one item")
        return problems
    if inst.pair_caps.shape != (n, m):
        problems.append("pair_caps shape does not match (n, m)")
        return problems
    if inst.group_ids.shape != (n,):
        problems.append("group_ids length does not match agent count")
        return problems
    if np.any(inst.load_lower < 0) or np.any(inst.supply_lower < 0):
        problems.append("lower bounds must be nonnegative")
    if np.any(inst.load_lower > inst.load_upper):
        problems.append("load_lower exceeds load_upper for some agent")
    if np.any(inst.supply_lower > inst.supply_upper):
        problems.append("supply_lower exceeds supply_upper for some item")
    if np.any(inst.pair_caps < 0):
        problems.append("pair_caps must be nonnegative")
    if np.any(inst.group_weights < 0):
        problems.append("group weights must be nonnegative")
    gids = inst.group_ids
    if np.any(gids < 0) or np.any(gids >= inst.n_groups):
        problems.append("group ids out of range")
    elif np.bincount(gids, minlength=inst.n_groups).min() == 0:
        problems.append("empty group block")
    if inst.load_lower.sum() > inst.supply_upper.sum():
        problems.append("aggregate supply < aggregate demand")
    if inst.supply_lower.sum() > inst.load_upper.sum():
        problems.append("aggregate load capacity < required supply")
    if np.any(inst.pair_caps.sum(axis=1) < inst.load_lower):
        problems.append("row caps cannot meet load_lower for some agent")
    if np.any(inst.pair_caps.sum(axis=0) < inst.supply_lower):
        problems.append("column caps cannot meet supply_lower for some item")
    if problems or not check_feasibility:
        return problems
    from .kernels.projection import feasibility_point, relaxed_polytope

    if feasibility_point(relaxed_polytope(inst)) is None:
        problems.append("constraint polytope is empty (LP feasibility failed)")
    return problems


# -- serialization ----------------------------------------------------------


def instance_to_dict(inst: Instance):
    caps = inst.pair_caps
    if np.count_nonzero(caps) <= caps.size // 4:
        rows, cols = np.nonzero(caps)
        caps_repr = {
            "sparse": [[int(r), int(c), float(caps[r, c])] for r, c in zip(rows, cols)]
        }
    else:
        caps_repr = {"dense": caps.tolist()}
    return {
        "n": inst.n,
        "m": inst.m,
        "load_lower": inst.load_lower.tolist(),
        "load_upper": inst.load_upper.tolist(),
        "supply_lower": inst.supply_lower.tolist(),
        "supply_upper": inst.supply_upper.tolist(),
        "pair_caps": caps_repr,
        "groups": {str(a): int(g) for a, g in enumerate(inst.group_ids)},
        "group_weights": inst.group_weights.tolist(),
    }


def instance_from_dict(doc):
    n, m = int(doc["n"]), int(doc["m"])
    caps_repr = doc["pair_caps"]
    if isinstance(caps_repr, dict) and "sparse" in caps_repr:
        caps = np.zeros((n, m))
        for r, c, val in caps_repr["sparse"]:
            caps[int(r), int(c)] = float(val)
    else:
        dense = caps_repr["dense"] if isinstance(caps_repr, dict) else caps_repr
        caps = np.asarray(dense, dtype=float)
    group_ids = np.zeros(n, dtype=int)
    for a, g in doc["groups"].items():
        group_ids[int(a)] = int(g)
    return Instance.build(
        n,
        m,
        load_lower=doc["load_lower"],
        load_upper=doc["load_upper"],
        supply_lower=doc["supply_lower"],
        supply_upper=doc["supply_upper"],
        pair_caps=caps,
        group_ids=group_ids,
        group_weights=doc.get("group_weights"),
    )


def save_instance(inst: Instance, path):
    with open(path, "w") as fh:
        json.dump(instance_to_dict(inst), fh, indent=2)


def load_instance(path):
    with open(path) as fh:
        return instance_from_dict(json.load(fh))


def allocation_to_csv(alloc: Allocation, path_or_buf):
    if isinstance(path_or_buf, (str, bytes)):
        with open(path_or_buf, "w", newline="") as fh:
            _write_alloc(alloc, fh)
    else:
        _write_alloc(alloc, path_or_buf)


def _write_alloc(alloc, fh):
    writer = csv.writer(fh)
    for row in alloc.values:
        writer.writerow([repr(float(x)) for x in row])


def allocation_from_csv(path_or_buf, mode="fractional"):
    if isinstance(path_or_buf, (str, bytes)):
        with open(path_or_buf, newline="") as fh:
            rows = [[float(x) for x in row] for row in csv.reader(fh) if row]
    else:
        rows = [[float(x) for x in row] for row in csv.reader(path_or_buf) if row]
    return Allocation(np.asarray(rows), mode=mode)
