"""Randomized rounding of fractional allocations (generalized Birkhoff-von Neumann).

A feasible fractional allocation is decomposed into a lottery over feasible
integral allocations whose expectation is the input. Each step locates a
cycle of fractional cells in the agent-item bipartite graph (or, when the
fractional cells form a tree, a path between two leaf nodes, whose endpoint
sums are necessarily fractional and hence strictly inside their integer
slabs) and shifts +/- delta along it with the expectation-preserving
two-point lottery; every step makes at least one cell integral.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .instance import Allocation, Instance

__all__ = ["RoundingPlan", "decompose", "round_once"]

# Cells are quantized to a dyadic grid so that sums, integrality tests and
# shift distances are computed exactly in float64; the cycle-canceling
# invariants (a degree-1 node's sum is fractional iff its cell is) only hold
# in exact arithmetic.
_GRID = 2.0**-34
_FRAC_TOL = 1e-12


@dataclass(frozen=True)
class RoundingPlan:
    """Lottery over integral allocations: probabilities sum to 1, expectation
    equals the decomposed fractional allocation."""

    support: tuple
    probabilities: np.ndarray
    seed: int

    def expectation(self):
        out = np.zeros_like(self.support[0].values)
        for alloc, p in zip(self.support, self.probabilities):
            out = out + p * alloc.values
        return out

    def draw(self, rng_or_seed):
        rng = np.random.default_rng(rng_or_seed) if not isinstance(rng_or_seed, np.random.Generator) else rng_or_seed
        i = rng.choice(len(self.support), p=self.probabilities)
        return self.support[i]


def _fractional_cells(A):
    frac = np.abs(A - np.round(A)) > _FRAC_TOL
    return sorted(zip(*np.nonzero(frac)))


def _snap(A):
    near = np.abs(A - np.round(A)) <= _FRAC_TOL
    A[near] = np.round(A[near])
    return A


def _quantize(A, inst):
    Aq = np.round(np.asarray(A, float) * (1.0 / _GRID)) * _GRID
    return np.clip(Aq, 0.0, inst.pair_caps)


def _repair(A, inst, max_passes=None):
    """Make the quantized matrix exactly feasible.

    Solves a minimum-L1-correction LP in integer grid units: the slab+box
    constraint matrix is totally unimodular, so the vertex optimum lies on
    the dyadic grid and all subsequent arithmetic stays exact.
    """
    from .instance import Allocation

    if A.min() >= 0 and Allocation(A).feasible(inst, tol=0.0):
        return A

    import scipy.sparse as sp

    from .kernels.lp import LinearProgram, solve_lp
    from .kernels.projection import polytope_rows, relaxed_polytope

    n, m = A.shape
    nm = n * m
    scale = 1.0 / _GRID
    target = np.round(A.reshape(-1) * scale)
    rows, senses, rhs = polytope_rows(relaxed_polytope(inst))
    rhs = rhs * scale
    # variables: x (cells, grid units), t (L1 slack); minimize sum t
    pad = sp.csr_matrix((rows.shape[0], nm))
    blocks = [sp.hstack([rows, pad])]
    all_senses = list(senses)
    all_rhs = [rhs]
    eye = sp.eye(nm, format="csr")
    blocks.append(sp.hstack([eye, -eye]))       # x - t <= target
    all_senses += ["<="] * nm
    all_rhs.append(target)
    blocks.append(sp.hstack([-eye, -eye]))      # -x - t <= -target
    all_senses += ["<="] * nm
    all_rhs.append(-target)
    lower = np.concatenate([np.zeros(nm), np.zeros(nm)])
    upper = np.concatenate([inst.caps_vector() * scale, np.full(nm, np.inf)])
    objective = np.concatenate([np.zeros(nm), -np.ones(nm)])
    sol = solve_lp(LinearProgram(objective, sp.vstack(blocks).tocsr(), all_senses, np.concatenate(all_rhs), lower, upper))
    if not sol.optimal:
        raise ValueError("could not repair the input allocation onto the feasible set")
    fixed = np.round(sol.x[:nm]).reshape(n, m) * _GRID
    if not Allocation(fixed).feasible(inst, tol=0.0):
        raise ValueError("could not repair the input allocation onto the feasible set")
    return fixed


def _find_cycle_or_path(cells, n, m):
    """Deterministic cycle (preferred) or leaf-to-leaf path of fractional cells.

    Nodes are rows 0..n-1 and columns n..n+m-1; each fractional cell is an
    edge. Returns (walk, is_cycle) where walk lists cells [(a, i), ...] in
    order; consecutive cells share alternating row/column nodes.
    """
    adj = {}
    for (a, i) in cells:
        adj.setdefault(a, []).append((n + i, (a, i)))
        adj.setdefault(n + i, []).append((a, (a, i)))
    for node in adj:
        adj[node].sort()

    # prune leaves; any edge surviving lies in the 2-core, i.e. on a cycle
    degree = {node: len(nbrs) for node, nbrs in adj.items()}
    removed_edges = set()
    stack = sorted(node for node, deg in degree.items() if deg == 1)
    alive = dict(degree)
    while stack:
        node = stack.pop()
        if alive.get(node, 0) != 1:
            continue
        for other, cell in adj[node]:
            if cell in removed_edges:
                continue
            removed_edges.add(cell)
            alive[node] -= 1
            alive[other] -= 1
            if alive[other] == 1:
                stack.append(other)
            break

    core_nodes = sorted(node for node, deg in alive.items() if deg >= 2)
    if core_nodes:
        start = core_nodes[0]
        walk_cells = []
        prev_cell = None
        node = start
        seen = {start: 0}
        while True:
            for other, cell in adj[node]:
                if cell in removed_edges or cell == prev_cell:
                    continue
                break
            else:
                raise AssertionError("2-core walk found no continuation")
            walk_cells.append(cell)
            node = other
            prev_cell = cell
            if node in seen:
                return walk_cells[seen[node] :], True
            seen[node] = len(walk_cells)

    # tree: walk from the smallest leaf until another leaf is reached
    leaves = sorted(node for node, deg in degree.items() if deg == 1)
    start = leaves[0]
    path = []
    prev_cell = None
    node = start
    while True:
        nbrs = [(other, cell) for other, cell in adj[node] if cell != prev_cell]
        if not nbrs:
            return path, False
        other, cell = nbrs[0]
        path.append(cell)
        prev_cell = cell
        node = other
        if degree[other] == 1:
            return path, False


def _shift_options(A, walk, inst, is_cycle):
    """Max shift in each direction before a cell or an endpoint sum hits an integer."""
    signs = [1.0 if t % 2 == 0 else -1.0 for t in range(len(walk))]
    up, down = np.inf, np.inf
    for (a, i), s in zip(walk, signs):
        v = A[a, i]
        dist_up = np.ceil(v - _FRAC_TOL) - v
        dist_down = v - np.floor(v + _FRAC_TOL)
        if s > 0:
            up, down = min(up, dist_up), min(down, dist_down)
        else:
            up, down = min(up, dist_down), min(down, dist_up)
    if not is_cycle:
        # path endpoints change their row/column sums by +/- delta
        n = inst.n
        first, last = walk[0], walk[-1]
        ends = [(first, signs[0], True), (last, signs[-1], False)]
        for (a, i), s, is_first in ends:
            node_is_row = True
            # identify which endpoint node the walk dangles from: for the first
            # cell the free node is the one not shared with the next cell
            if len(walk) == 1:
                pass  # both endpoints free; handle row and column below
            if is_first and len(walk) > 1:
                shared_row = walk[1][0] == a
                node_is_row = not shared_row
            if not is_first and len(walk) > 1:
                shared_row = walk[-2][0] == a
                node_is_row = not shared_row
            sums = [A[a, :].sum()] if node_is_row else [A[:, i].sum()]
            if len(walk) == 1:
                sums = [A[a, :].sum(), A[:, i].sum()]
            for ssum in sums:
                dist_up = np.ceil(ssum - _FRAC_TOL) - ssum
                dist_down = ssum - np.floor(ssum + _FRAC_TOL)
                if s > 0:
                    up, down = min(up, dist_up), min(down, dist_down)
                else:
                    up, down = min(up, dist_down), min(down, dist_up)
    return signs, up, down


def _apply(A, walk, signs, delta):
    out = A.copy()
    for (a, i), s in zip(walk, signs):
        out[a, i] += s * delta
    return _snap(out)


def _rounding_step(A, inst):
    """One lottery step: returns [(matrix, prob), (matrix, prob)] children."""
    cells = _fractional_cells(A)
    if not cells:
        return None
    walk, is_cycle = _find_cycle_or_path(cells, inst.n, inst.m)
    signs, up, down = _shift_options(A, walk, inst, is_cycle)
    if not np.isfinite(up) or not np.isfinite(down) or up <= 0 or down <= 0:
        raise AssertionError("rounding step found no feasible shift")
    p_up = down / (up + down)
    return [(_apply(A, walk, signs, up), p_up), (_apply(A, walk, signs, -down), 1.0 - p_up)]


def _require_integer_bounds(inst):
    for arr in (inst.load_lower, inst.load_upper, inst.supply_lower, inst.supply_upper, inst.pair_caps):
        if np.any(np.abs(arr - np.round(arr)) > 1e-9):
            raise ValueError("rounding requires integer load, supply and cap bounds")


def round_once(alloc: Allocation, inst: Instance, seed) -> Allocation:
    """A single lottery draw: integral, feasible, expectation-preserving."""
    _require_integer_bounds(inst)
    if not alloc.feasible(inst, tol=1e-6):
        raise ValueError("input allocation violates the instance constraints")
    rng = np.random.default_rng(seed)
    A = _repair(_quantize(alloc.values, inst), inst)
    while True:
        children = _rounding_step(A, inst)
        if children is None:
            break
        (up_A, p_up), (down_A, _) = children
        A = up_A if rng.random() < p_up else down_A
    rounded = Allocation(np.round(A), mode="integral")
    if not rounded.feasible(inst):
        raise AssertionError("rounded allocation left the feasible set")
    return rounded


def _deterministic_leaf(A, inst):
    """An integral vertex of the minimal face containing A: cycle shifts keep
    tight constraints tight, so repeatedly taking the 'up' branch lands on one."""
    X = A.copy()
    while True:
        children = _rounding_step(X, inst)
        if children is None:
            return np.round(X)
        X = children[0][0]


def _max_stretch(X, D, inst):
    """Largest s >= 0 with X + s D still feasible (D a recession-free direction)."""
    s_max = np.inf

    def bound(vals, dirs, lo, hi):
        nonlocal s_max
        pos = dirs > 1e-12
        neg = dirs < -1e-12
        if np.any(pos):
            s_max = min(s_max, np.min((hi[pos] - vals[pos]) / dirs[pos]))
        if np.any(neg):
            s_max = min(s_max, np.min((lo[neg] - vals[neg]) / dirs[neg]))

    bound(X.reshape(-1), D.reshape(-1), np.zeros(X.size), inst.pair_caps.reshape(-1))
    bound(X.sum(axis=1), D.sum(axis=1), inst.load_lower, inst.load_upper)
    bound(X.sum(axis=0), D.sum(axis=0), inst.supply_lower, inst.supply_upper)
    return s_max


def decompose(alloc: Allocation, inst: Instance, seed=0) -> RoundingPlan:
    """Full lottery: integral support allocations with their probabilities.

    Caratheodory-style peeling: at each round an integral vertex P of the
    minimal face containing the current point X is split off with the largest
    weight keeping the remainder feasible, so the support stays small (capped
    at 10 * n * m components; ``round_once`` has no such cap).
    """
    _require_integer_bounds(inst)
    if not alloc.feasible(inst, tol=1e-6):
        raise ValueError("input allocation violates the instance constraints")
    cap = 10 * inst.nm
    X = _repair(_quantize(alloc.values, inst), inst)
    weight = 1.0
    pieces = {}

    def add(mat, p):
        key = mat.astype(np.int64).tobytes()
        if key in pieces:
            pieces[key] = (pieces[key][0], pieces[key][1] + p)
        else:
            pieces[key] = (mat, p)

    while weight > 1e-15:
        if not _fractional_cells(X):
            add(np.round(X), weight)
            break
        P = _deterministic_leaf(X, inst)
        D = X - P
        if np.abs(D).max() < _FRAC_TOL:
            add(P, weight)
            break
        s = _max_stretch(X, D, inst)
        if not np.isfinite(s) or s <= 0:
            raise AssertionError("peeling found no feasible stretch")
        gamma = s / (1.0 + s)
        add(P, weight * gamma)
        X = _repair(_quantize(X + s * D, inst), inst)
        weight *= 1.0 - gamma
        if len(pieces) > cap:
            raise ValueError(f"decomposition support exceeds the {cap}-component cap; use round_once")
    support = []
    probs = []
    for mat, p in pieces.values():
        support.append(Allocation(mat, mode="integral"))
        probs.append(p)
        if not support[-1].feasible(inst):
            raise AssertionError("decomposition produced an infeasible support point")
    return RoundingPlan(tuple(support), np.asarray(probs), seed)


def plan_to_dict(plan: RoundingPlan):
    out = {"seed": plan.seed, "components": []}
    for alloc, p in zip(plan.support, plan.probabilities):
        rows, cols = np.nonzero(alloc.values)
        out["components"].append(
            {
                "probability": float(p),
                "shape": list(alloc.values.shape),
                "cells": [[int(r), int(c), float(alloc.values[r, c])] for r, c in zip(rows, cols)],
            }
        )
    return out


def save_plan(plan: RoundingPlan, path):
    with open(path, "w") as fh:
        json.dump(plan_to_dict(plan), fh, indent=2)


def load_plan(path):
    with open(path) as fh:
        doc = json.load(fh)
    support = []
    probs = []
    for comp in doc["components"]:
        mat = np.zeros(tuple(comp["shape"]))
        for r, c, v in comp["cells"]:
            mat[int(r), int(c)] = v
        support.append(Allocation(mat, mode="integral"))
        probs.append(float(comp["probability"]))
    return RoundingPlan(tuple(support), np.asarray(probs), doc.get("seed", 0))
