"""Evaluation metrics and the canned experiment protocols.

Each allocation is scored on six metrics (USW, GESW, their empirical CVaRs,
and the two robust welfares); a run's metrics are normalized by the best
value any allocation achieved on them in that run. The table protocol
repeats subsample -> fit -> solve -> cross-evaluate over seeded runs and
aggregates mean and sample standard deviation.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .cvar import CvarConfig, cvar_gesw_sampling, cvar_usw_gaussian, cvar_usw_sampling, empirical_cvar
from .instance import Allocation, Instance, group_pair_indices, welfare, WelfareSpec
from .nominal import nominal_gesw, nominal_usw
from .pipeline import (
    BalancedSpectralClustering,
    GaussianPairsModel,
    LogisticMatrixFactorization,
    split_train_test,
)
from .robust import (
    robust_gesw_ellipsoid_iqp,
    robust_gesw_polyhedral,
    robust_usw_ellipsoid_iqp,
    robust_usw_polyhedral,
)
from .uncertainty import (
    Bernoulli,
    EllipsoidSet,
    Gaussian,
    GroupProductSet,
    PolyhedralSet,
    build_cross_entropy_group_sets,
    build_cross_entropy_polyhedron,
    build_gaussian_ellipsoid,
    build_gaussian_group_ellipsoids,
    group_loss_stats,
    sample,
    worst_case_group_utilities,
    worst_case_linear,
)

__all__ = [
    "GroundTruth",
    "EvaluationRecord",
    "RunContext",
    "evaluate",
    "normalize_records",
    "run_table_protocol",
    "TableResult",
    "noise_sweep",
    "gesw_stress_synthesis",
    "bid_experiment_builder",
    "STANDARD_METHODS",
]

EVAL_SEED_OFFSET = 7919  # evaluation draws never reuse training seeds

METRICS = ("usw", "gesw", "cvar_usw", "cvar_gesw", "robust_usw", "robust_gesw")


@dataclass
class GroundTruth:
    """Whatever ground-truth artifacts the requested metrics need."""

    expectation: np.ndarray | None = None
    distribution: object | None = None
    usw_set: object | None = None
    gesw_sets: GroupProductSet | None = None


@dataclass
class EvaluationRecord:
    allocation_tag: str
    metrics: dict
    normalized: dict | None = None
    run_id: int = 0
    seed: int = 0


def evaluate(alloc: Allocation, inst: Instance, ground: GroundTruth, cfg: CvarConfig, metrics=METRICS, run_id=0) -> EvaluationRecord:
    """Score one allocation on the requested metrics.

    CVaR metrics are estimated from ``cfg.h_eval`` fresh samples drawn with
    an offset seed so evaluation never reuses the training draws.
    """
    out = {}
    avec = alloc.vector
    for metric in metrics:
        if metric in ("usw", "gesw"):
            if ground.expectation is None:
                raise ValueError(f"metric {metric} needs an expectation vector")
            spec = WelfareSpec("utilitarian" if metric == "usw" else "group_egalitarian")
            out[metric] = welfare(alloc, ground.expectation, inst, spec)
        elif metric in ("cvar_usw", "cvar_gesw"):
            if ground.distribution is None:
                raise ValueError(f"metric {metric} needs a valuation distribution")
            V = sample(ground.distribution, cfg.h_eval, seed=cfg.seed + EVAL_SEED_OFFSET)
            if metric == "cvar_usw":
                w = V @ avec
            else:
                sizes = inst.group_sizes()
                per_group = np.stack(
                    [V[:, group_pair_indices(inst, g)] @ avec[group_pair_indices(inst, g)] / sizes[g] for g in range(inst.n_groups)],
                    axis=1,
                )
                w = per_group.min(axis=1)
            out[metric] = empirical_cvar(w, cfg.alpha)
        elif metric == "robust_usw":
            if ground.usw_set is None:
                raise ValueError("metric robust_usw needs an uncertainty set")
            val, _ = worst_case_linear(avec, ground.usw_set)
            out[metric] = float(val)
        elif metric == "robust_gesw":
            if ground.gesw_sets is None:
                raise ValueError("metric robust_gesw needs per-group uncertainty sets")
            out[metric] = float(worst_case_group_utilities(alloc, ground.gesw_sets, inst).min())
        else:
            raise ValueError(f"unknown metric {metric!r}")
    return EvaluationRecord(allocation_tag="", metrics=out, run_id=run_id, seed=cfg.seed)


def normalize_records(records):
    """Per-metric normalization by the run's max; missing cells excluded."""
    if not records:
        return records
    metrics = records[0].metrics.keys()
    for metric in metrics:
        vals = [r.metrics[metric] for r in records if r.metrics.get(metric) is not None]
        top = max(vals) if vals else None
        for r in records:
            raw = r.metrics.get(metric)
            if r.normalized is None:
                r.normalized = {}
            if raw is None or top is None or top <= 0:
                r.normalized[metric] = None
            else:
                r.normalized[metric] = raw / top
    return records


# -- the cross-evaluation table protocol -------------------------------------------


@dataclass
class RunContext:
    """Everything one experiment run needs: instance, truth, solver inputs."""

    inst: Instance
    ground: GroundTruth
    train_seed: int = 0


def _train_samples(ctx: RunContext, cfg: CvarConfig):
    return sample(ctx.ground.distribution, cfg.h_train, seed=cfg.seed)


def _solve_robust_usw(ctx, cfg):
    s = ctx.ground.usw_set
    if isinstance(s, PolyhedralSet):
        return robust_usw_polyhedral(ctx.inst, s)
    if isinstance(s, EllipsoidSet) and s.n_ellipsoids == 1 and s.Q is None:
        return robust_usw_ellipsoid_iqp(ctx.inst, s)
    from .robust import robust_usw_general

    return robust_usw_general(ctx.inst, s)


def _solve_robust_gesw(ctx, cfg):
    s = ctx.ground.gesw_sets
    first = s.sets[0]
    if isinstance(first, PolyhedralSet):
        return robust_gesw_polyhedral(ctx.inst, s)
    if isinstance(first, EllipsoidSet) and first.n_ellipsoids == 1 and first.Q is None:
        return robust_gesw_ellipsoid_iqp(ctx.inst, s)
    from .robust import robust_gesw_general

    return robust_gesw_general(ctx.inst, s)


STANDARD_METHODS = {
    "naive-usw": lambda ctx, cfg: nominal_usw(ctx.inst, ctx.ground.expectation),
    "naive-gesw": lambda ctx, cfg: nominal_gesw(ctx.inst, ctx.ground.expectation),
    "cvar-usw": lambda ctx, cfg: cvar_usw_sampling(ctx.inst, _train_samples(ctx, cfg), alpha=cfg.alpha),
    "cvar-gesw": lambda ctx, cfg: cvar_gesw_sampling(ctx.inst, _train_samples(ctx, cfg), alpha=cfg.alpha),
    "robust-usw": _solve_robust_usw,
    "robust-gesw": _solve_robust_gesw,
}


@dataclass
class TableResult:
    methods: list
    metrics: tuple
    mean: np.ndarray  # methods x metrics
    std: np.ndarray
    n_runs: int
    failures: list = field(default_factory=list)

    def format_text(self):
        out = io.StringIO()
        width = max(len(m) for m in self.methods) + 2
        out.write(" " * width + "  ".join(f"{m:>11s}" for m in self.metrics) + "\n")
        for i, method in enumerate(self.methods):
            cells = []
            for j in range(len(self.metrics)):
                if np.isnan(self.mean[i, j]):
                    cells.append(f"{'--':>11s}")
                else:
                    cells.append(f"{self.mean[i, j]:.2f} ± {self.std[i, j]:.2f}".rjust(11))
            out.write(method.ljust(width) + "  ".join(cells) + "\n")
        return out.getvalue()

    def to_csv(self, path_or_buf):
        def _write(fh):
            writer = csv.writer(fh)
            writer.writerow(["method"] + [f"{m}_mean" for m in self.metrics] + [f"{m}_std" for m in self.metrics])
            for i, method in enumerate(self.methods):
                writer.writerow([method] + list(self.mean[i]) + list(self.std[i]))

        if isinstance(path_or_buf, (str, bytes)):
            with open(path_or_buf, "w", newline="") as fh:
                _write(fh)
        else:
            _write(path_or_buf)


def run_table_protocol(builder, methods, n_runs, base_cvar: CvarConfig | None = None, seeds=None, n_jobs=1) -> TableResult:
    """Cross-evaluation: per run, solve every method and evaluate it on every
    metric, normalize within the run, then aggregate mean and sample stdev.

    Runs are independent; ``n_jobs`` bounds a thread pool fanning them out.
    """
    if n_runs < 1:
        raise ValueError("need at least one run")
    base_cvar = base_cvar or CvarConfig()
    seeds = list(seeds) if seeds is not None else list(range(n_runs))
    method_items = list(methods.items()) if isinstance(methods, dict) else [(name, STANDARD_METHODS[name]) for name in methods]
    names = [name for name, _ in method_items]
    per_run = np.full((n_runs, len(names), len(METRICS)), np.nan)
    failures = []

    def one_run(run_id, seed):
        ctx = builder(seed)
        cfg = CvarConfig(alpha=base_cvar.alpha, h_train=base_cvar.h_train, h_eval=base_cvar.h_eval, seed=seed)
        records = []
        run_failures = []
        for name, solve in method_items:
            try:
                report = solve(ctx, cfg)
                rec = evaluate(report.allocation, ctx.inst, ctx.ground, cfg, run_id=run_id)
                rec.allocation_tag = name
            except Exception as exc:  # a failed solve yields an explicit gap
                run_failures.append({"run": run_id, "method": name, "error": str(exc)})
                rec = EvaluationRecord(allocation_tag=name, metrics={m: None for m in METRICS}, run_id=run_id, seed=seed)
            records.append(rec)
        normalize_records(records)
        return records, run_failures

    tasks = list(enumerate(seeds[:n_runs]))
    if n_jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(lambda t: one_run(*t), tasks))
    else:
        results = [one_run(*t) for t in tasks]
    for (run_id, _), (records, run_failures) in zip(tasks, results):
        failures.extend(run_failures)
        for i, rec in enumerate(records):
            for j, metric in enumerate(METRICS):
                val = rec.normalized.get(metric)
                if val is not None:
                    per_run[run_id, i, j] = val
    present = ~np.isnan(per_run)
    counts = present.sum(axis=0)
    sums = np.where(present, per_run, 0.0).sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
        sq = np.where(present, (per_run - mean[None]) ** 2, 0.0).sum(axis=0)
        std = np.where(counts > 1, np.sqrt(sq / np.maximum(counts - 1, 1)), 0.0)
        std = np.where(counts > 0, std, np.nan)
    return TableResult(names, METRICS, mean, std, n_runs, failures)


# -- noise sweep ---------------------------------------------------------------------


def noise_sweep(inst: Instance, dist: Gaussian, multipliers, cfg: CvarConfig, seeds=(0,)):
    """CVaR at increasing noise: rescale the stdevs, re-solve, score CVaR.

    Returns long-format rows {multiplier, method, cvar, seed}; methods are the
    Gaussian CVaR optimizer and the two uncertainty-unaware baselines.
    """
    diag = np.ndim(dist.cov) == 1
    rows = []
    for seed in seeds:
        for mult in multipliers:
            cov = dist.cov * mult**2 if diag else np.asarray(dist.cov) * mult**2
            scaled = Gaussian(dist.mean, cov)
            eval_cfg = CvarConfig(alpha=cfg.alpha, h_train=cfg.h_train, h_eval=cfg.h_eval, seed=seed)
            solved = {
                "cvar": cvar_usw_gaussian(inst, scaled, alpha=cfg.alpha).allocation,
                "naive-usw": nominal_usw(inst, dist.mean).allocation,
                "naive-gesw": nominal_gesw(inst, dist.mean).allocation,
            }
            ground = GroundTruth(expectation=dist.mean, distribution=scaled)
            for name, alloc in solved.items():
                rec = evaluate(alloc, inst, ground, eval_cfg, metrics=("cvar_usw",))
                rows.append({"multiplier": mult, "method": name, "cvar": rec.metrics["cvar_usw"], "seed": seed})
    return rows


def sweep_rows_to_csv(rows, path_or_buf):
    def _write(fh):
        writer = csv.DictWriter(fh, fieldnames=["multiplier", "method", "cvar", "seed"])
        writer.writeheader()
        writer.writerows(rows)

    if isinstance(path_or_buf, (str, bytes)):
        with open(path_or_buf, "w", newline="") as fh:
            _write(fh)
    else:
        _write(path_or_buf)


# -- GESW vs USW stress synthesis ---------------------------------------------------


def gesw_stress_synthesis(inst: Instance, values, minority_size, divisor=2.0, nonzero_keep=5, seed=0):
    """Two-group synthetic variant: copy a minority of agents with damped,
    sparsified valuations, and report the relative GESW loss of the
    USW-optimal solution: 1 - GESW(USW-opt) / GESW(GESW-opt)."""
    values = np.asarray(values, float).reshape(inst.n, inst.m)
    if inst.n_groups != 1:
        raise ValueError("stress synthesis starts from a single-group instance")
    if not 0 < minority_size < inst.n:
        raise ValueError("minority_size must lie strictly between 0 and n")
    rng = np.random.default_rng(seed)
    chosen = rng.choice(inst.n, size=minority_size, replace=False)
    extra = values[chosen] / divisor
    keep = min(nonzero_keep, inst.m)
    for row in extra:
        cut = np.sort(row)[-keep]
        row[row < cut] = 0.0
    new_values = np.vstack([values, extra])
    new_inst = Instance.build(
        inst.n + minority_size,
        inst.m,
        load_lower=np.concatenate([inst.load_lower, inst.load_lower[chosen]]),
        load_upper=np.concatenate([inst.load_upper, inst.load_upper[chosen]]),
        supply_lower=inst.supply_lower,
        supply_upper=inst.supply_upper,
        pair_caps=np.vstack([inst.pair_caps, inst.pair_caps[chosen]]),
        group_ids=np.concatenate([np.zeros(inst.n, int), np.ones(minority_size, int)]),
    )
    from .instance import validate_instance

    problems = validate_instance(new_inst)
    if problems:
        raise ValueError("synthetic instance is infeasible: " + "; ".join(problems))
    usw_opt = nominal_usw(new_inst, new_values).allocation
    gesw_opt = nominal_gesw(new_inst, new_values).allocation
    spec = WelfareSpec("group_egalitarian")
    g_usw = welfare(usw_opt, new_values.reshape(-1), new_inst, spec)
    g_gesw = welfare(gesw_opt, new_values.reshape(-1), new_inst, spec)
    rel_loss = 1.0 - g_usw / g_gesw if g_gesw > 0 else 0.0
    return new_inst, new_values, float(rel_loss)


# -- standard bid-data experiment builder --------------------------------------------


def bid_experiment_builder(
    values,
    mask,
    kind,
    paper_load=3,
    reviewer_supply=15,
    subsample_fraction=0.2,
    alpha_robust=0.3,
    n_clusters=4,
    embed_dim=5,
    test_fraction=0.2,
    stratified=False,
    mf_params=None,
):
    """Factory for the table protocol's per-run builder on bid data.

    Per run: subsample papers and reviewers uniformly, refit the prediction
    model, rebuild groups and uncertainty sets, and assemble the run context.
    ``kind`` is "binary" (logistic model, cross-entropy polyhedra, Bernoulli
    samples) or "gaussian" (squared-error model, ellipsoids, Gaussian samples).
    """
    values = np.asarray(values, float)
    mask = np.asarray(mask, bool)
    n_all, m_all = values.shape
    mf_params = dict(mf_params or {})

    def builder(seed):
        rng = np.random.default_rng(seed)
        n_sub = max(2 * n_clusters, int(np.ceil(subsample_fraction * n_all)))
        m_sub = max(2 * n_clusters, int(np.ceil(subsample_fraction * m_all)))
        papers = np.sort(rng.choice(n_all, size=min(n_sub, n_all), replace=False))
        reviewers = np.sort(rng.choice(m_all, size=min(m_sub, m_all), replace=False))
        V = values[np.ix_(papers, reviewers)]
        M = mask[np.ix_(papers, reviewers)]
        if not M.any():
            raise ValueError("subsample contains no observed bids")

        cluster_model = BalancedSpectralClustering(n_clusters=n_clusters, embed_dim=embed_dim, seed=seed)
        paper_groups, _ = cluster_model.fit_predict(V * M)

        inst = Instance.build(
            len(papers),
            len(reviewers),
            load_lower=paper_load,
            load_upper=paper_load,
            supply_lower=0,
            supply_upper=reviewer_supply,
            pair_caps=1,
            group_ids=paper_groups,
        )
        from .instance import validate_instance

        problems = validate_instance(inst)
        if problems:
            raise ValueError("subsampled instance invalid: " + "; ".join(problems))

        train_mask, test_mask = split_train_test(M, test_fraction, seed=seed, group_ids=paper_groups if stratified else None)
        if kind == "binary":
            model = LogisticMatrixFactorization(seed=seed, **mf_params).fit(V * M, train_mask)
            probs = model.predict_proba()
            stats = group_loss_stats(probs, V, test_mask, inst)
            usw_set = build_cross_entropy_polyhedron(probs, stats, alpha_robust, inst)
            gesw_sets = build_cross_entropy_group_sets(probs, stats, alpha_robust, inst)
            expectation = probs.reshape(-1)
            dist = Bernoulli(expectation)
        elif kind == "gaussian":
            model = GaussianPairsModel(seed=seed, **mf_params).fit(V, train_mask | test_mask)
            dist = model.to_distribution()
            expectation = dist.mean
            usw_set = build_gaussian_ellipsoid(dist, alpha_robust)
            gesw_sets = build_gaussian_group_ellipsoids(dist, alpha_robust, inst)
        else:
            raise ValueError(f"unknown experiment kind {kind!r}")
        ground = GroundTruth(expectation=expectation, distribution=dist, usw_set=usw_set, gesw_sets=gesw_sets)
        return RunContext(inst=inst, ground=ground, train_seed=seed)

    return builder
