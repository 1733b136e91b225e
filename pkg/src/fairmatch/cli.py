"""Batch command-line front end.

Wires the pipeline end to end: fit prediction models from bid files, build
uncertainty sets, cluster papers and reviewers into groups, run any solver,
round fractional allocations, evaluate allocations, and drive the canned
experiment suites. Every command is deterministic given its config and
seed, and drops an effective-config JSON next to its outputs.

Exit codes: 0 optimal, 2 usage or input error, 3 feasible but not
converged, 4 numerical failure.
"""

from __future__ import annotations

import json
import os
import sys

import click
import numpy as np

from . import __version__
from .cvar import CvarConfig, cvar_gesw_sampling, cvar_usw_gaussian, cvar_usw_sampling, empirical_cvar
from .evaluation import (
    GroundTruth,
    bid_experiment_builder,
    evaluate,
    gesw_stress_synthesis,
    noise_sweep,
    run_table_protocol,
    sweep_rows_to_csv,
)
from .instance import (
    Instance,
    WelfareSpec,
    allocation_from_csv,
    allocation_to_csv,
    load_instance,
    validate_instance,
)
from .kernels.ascent import write_trace_csv
from .nominal import nominal_gesw, nominal_usw
from .pipeline import (
    BalancedSpectralClustering,
    FactorModel,
    GaussianPairsModel,
    LogisticMatrixFactorization,
    binarize,
    drop_no_bids,
    load_bids,
    save_bids,
    scorize,
    split_train_test,
)
from .robust import (
    RobustConfig,
    adversarial_psga_baseline,
    robust_gesw_ellipsoid_iqp,
    robust_gesw_polyhedral,
    robust_usw_ellipsoid_iqp,
    robust_usw_general,
    robust_gesw_general,
    robust_usw_polyhedral,
    save_report,
)
from .rounding import decompose, round_once, save_plan
from .uncertainty import (
    Bernoulli,
    Gaussian,
    SkewNormal,
    build_cross_entropy_group_sets,
    build_cross_entropy_polyhedron,
    build_gaussian_ellipsoid,
    build_gaussian_group_ellipsoids,
    group_loss_stats,
    sample,
    set_from_dict,
    set_to_dict,
    worst_case_linear,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NOT_CONVERGED = 3
EXIT_NUMERICAL = 4


def _fail(message, code=EXIT_USAGE):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _load_config(path):
    if path is None:
        return {}
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        _fail(f"cannot read config {path}: {exc}")


def _dump_effective(out_path, command, params):
    doc = {"command": command, "version": __version__, "params": {k: v for k, v in params.items() if v is not None}}
    cfg_path = f"{out_path}.config.json"
    with open(cfg_path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)


def _load_model_distribution(model_path):
    model = FactorModel.load(model_path)
    scores = model.X @ model.Y.T
    if model.kind == "logistic":
        probs = np.clip(1.0 / (1.0 + np.exp(-scores)), 1e-6, 1 - 1e-6)
        return model, Bernoulli(probs.reshape(-1)), probs.reshape(-1)
    mean = np.clip(scores, 0.0, None).reshape(-1)
    var = np.full(mean.size, float(model.noise_variance or 0.0))
    return model, Gaussian(mean, var), mean


@click.group()
@click.option("--config", type=click.Path(exists=True), default=None, help="JSON config with per-command sections.")
@click.version_option(__version__)
@click.pass_context
def main(ctx, config):
    """Fair constrained multi-matching under uncertainty."""
    # config sections become per-command defaults; explicit flags still win
    ctx.default_map = _load_config(config)


@main.command("demo-data")
@click.option("--papers", type=int, default=40, show_default=True)
@click.option("--reviewers", type=int, default=30, show_default=True)
@click.option("--density", type=float, default=0.5, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", required=True, type=click.Path())
def demo_data(papers, reviewers, density, seed, out):
    """Generate a synthetic bid triples CSV for demos and smoke tests."""
    rng = np.random.default_rng(seed)
    quality = rng.beta(2.0, 2.0, (papers, 1)) @ rng.beta(2.0, 2.0, (1, reviewers)) * 4.0
    triples = []
    for p in range(papers):
        for r in range(reviewers):
            if rng.random() < density:
                q = quality[p, r] + rng.normal(0, 0.35)
                bid = "yes" if q > 1.1 else ("maybe" if q > 0.8 else "no")
                triples.append((p, r, bid))
    from .pipeline import BidDataset

    save_bids(BidDataset(papers, reviewers, tuple(triples)), out)
    _dump_effective(out, "demo-data", {"papers": papers, "reviewers": reviewers, "density": density, "seed": seed})
    click.echo(f"wrote {len(triples)} bids to {out}")


@main.command()
@click.option("--bids", required=True, type=click.Path(exists=True))
@click.option("--format", "fmt", type=click.Choice(["triples_csv", "preflib_categorical"]), default="triples_csv", show_default=True)
@click.option("--kind", type=click.Choice(["logistic", "gaussian"]), default="logistic", show_default=True)
@click.option("--factors", type=int, default=20, show_default=True)
@click.option("--epochs", type=int, default=200, show_default=True)
@click.option("--learning-rate", type=float, default=0.05, show_default=True)
@click.option("--l2", type=float, default=1e-4, show_default=True)
@click.option("--test-fraction", type=float, default=0.2, show_default=True)
@click.option("--drop-no-fraction", type=float, default=None, help="Convert this fraction of 'no' bids to no-response first.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", required=True, type=click.Path())
def fit(bids, fmt, kind, factors, epochs, learning_rate, l2, test_fraction, drop_no_fraction, seed, out):
    """Fit a prediction model on bid data and write the factor-model file."""
    try:
        ds = load_bids(bids, fmt)
        if drop_no_fraction:
            ds = drop_no_bids(ds, drop_no_fraction, seed=seed)
        if kind == "logistic":
            values, mask = binarize(ds)
            train, test = split_train_test(mask, test_fraction, seed=seed)
            model = LogisticMatrixFactorization(
                n_factors=factors, learning_rate=learning_rate, epochs=epochs, l2=l2, seed=seed
            ).fit(values, train)
            probs = np.clip(model.predict_proba(), 1e-12, 1 - 1e-12)
            if test.any():
                held = -(values * np.log(probs) + (1 - values) * np.log(1 - probs))[test].mean()
            else:
                held = float("nan")
            fm = model.to_factor_model()
        else:
            values, mask = scorize(ds)
            model = GaussianPairsModel(
                n_factors=factors, learning_rate=learning_rate, epochs=epochs, l2=l2, seed=seed
            ).fit(values, mask)
            held = model.noise_variance_
            fm = model.to_factor_model()
        fm.save(out)
    except FloatingPointError as exc:
        _fail(str(exc), EXIT_NUMERICAL)
    except (OSError, ValueError) as exc:
        _fail(str(exc))
    _dump_effective(out, "fit", {
        "bids": bids, "format": fmt, "kind": kind, "factors": factors, "epochs": epochs,
        "learning_rate": learning_rate, "l2": l2, "test_fraction": test_fraction,
        "drop_no_fraction": drop_no_fraction, "seed": seed,
    })
    click.echo(f"held-out loss: {held:.6f}")
    click.echo(f"model written to {out}")


@main.command("build-uncertainty")
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--instance", "instance_path", required=True, type=click.Path(exists=True))
@click.option("--kind", type=click.Choice(["cross-entropy", "ellipsoid"]), required=True)
@click.option("--bids", type=click.Path(exists=True), default=None, help="Needed for cross-entropy test statistics.")
@click.option("--format", "fmt", type=click.Choice(["triples_csv", "preflib_categorical"]), default="triples_csv", show_default=True)
@click.option("--alpha", type=float, default=0.3, show_default=True)
@click.option("--per-group/--joint", default=False, show_default=True)
@click.option("--test-fraction", type=float, default=0.2, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", required=True, type=click.Path())
def build_uncertainty(model_path, instance_path, kind, bids, fmt, alpha, per_group, test_fraction, seed, out):
    """Build an uncertainty set from a fitted model (and bids, for test stats)."""
    try:
        inst = load_instance(instance_path)
        model, dist, _ = _load_model_distribution(model_path)
        if kind == "ellipsoid":
            if not isinstance(dist, Gaussian):
                raise ValueError("ellipsoid sets need a gaussian-pairs model")
            uset = build_gaussian_group_ellipsoids(dist, alpha, inst) if per_group else build_gaussian_ellipsoid(dist, alpha)
        else:
            if bids is None:
                raise ValueError("--bids is required for cross-entropy sets (test statistics)")
            ds = load_bids(bids, fmt)
            values, mask = binarize(ds)
            if values.shape != (inst.n, inst.m):
                raise ValueError("bid matrix shape does not match the instance")
            probs = np.clip(1.0 / (1.0 + np.exp(-(model.X @ model.Y.T))), 1e-6, 1 - 1e-6)
            _, test = split_train_test(mask, test_fraction, seed=seed)
            stats = group_loss_stats(probs, values, test, inst)
            build = build_cross_entropy_group_sets if per_group else build_cross_entropy_polyhedron
            uset = build(probs, stats, alpha, inst)
        with open(out, "w") as fh:
            json.dump(set_to_dict(uset), fh)
    except (OSError, ValueError) as exc:
        _fail(str(exc))
    _dump_effective(out, "build-uncertainty", {
        "model": model_path, "instance": instance_path, "kind": kind, "bids": bids,
        "alpha": alpha, "per_group": per_group, "test_fraction": test_fraction, "seed": seed,
    })
    click.echo(f"uncertainty set written to {out}")


@main.command()
@click.option("--bids", required=True, type=click.Path(exists=True))
@click.option("--format", "fmt", type=click.Choice(["triples_csv", "preflib_categorical"]), default="triples_csv", show_default=True)
@click.option("--clusters", type=int, default=4, show_default=True)
@click.option("--embed-dim", type=int, default=5, show_default=True)
@click.option("--min-papers", type=int, default=1, show_default=True)
@click.option("--min-reviewers", type=int, default=1, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", required=True, type=click.Path())
def cluster(bids, fmt, clusters, embed_dim, min_papers, min_reviewers, seed, out):
    """Group papers and reviewers by balanced spectral clustering; CSV output."""
    try:
        ds = load_bids(bids, fmt)
        scores, mask = scorize(ds)
        model = BalancedSpectralClustering(
            n_clusters=clusters, embed_dim=embed_dim, min_papers=min_papers, min_reviewers=min_reviewers, seed=seed
        )
        paper_labels, reviewer_labels = model.fit_predict(scores * mask)
        with open(out, "w") as fh:
            fh.write("kind,index,group_id\n")
            for i, g in enumerate(paper_labels):
                fh.write(f"paper,{i},{g}\n")
            for i, g in enumerate(reviewer_labels):
                fh.write(f"reviewer,{i},{g}\n")
    except (OSError, ValueError) as exc:
        _fail(str(exc))
    _dump_effective(out, "cluster", {
        "bids": bids, "clusters": clusters, "embed_dim": embed_dim,
        "min_papers": min_papers, "min_reviewers": min_reviewers, "seed": seed,
    })
    click.echo(f"groups written to {out}")


_METHOD_IDS = (
    "naive-usw",
    "naive-gesw",
    "robust-usw-lp",
    "robust-usw-iqp",
    "robust-usw-dual",
    "robust-gesw-lp",
    "robust-gesw-iqp",
    "robust-gesw-dual",
    "psga-baseline",
    "cvar-usw-lp",
    "cvar-gesw-lp",
    "cvar-usw-gaussian",
)


@main.command()
@click.option("--instance", "instance_path", required=True, type=click.Path(exists=True))
@click.option("--method", type=click.Choice(_METHOD_IDS), required=True)
@click.option("--uncertainty", "uncertainty_path", type=click.Path(exists=True), default=None)
@click.option("--model", "model_path", type=click.Path(exists=True), default=None)
@click.option("--values", "values_path", type=click.Path(exists=True), default=None, help="Expectation matrix CSV for the naive methods.")
@click.option("--welfare", type=click.Choice(["usw", "gesw"]), default="usw", show_default=True, help="For psga-baseline.")
@click.option("--alpha", type=float, default=0.01, show_default=True)
@click.option("--samples", "h_train", type=int, default=4000, show_default=True)
@click.option("--max-iters", type=int, default=None)
@click.option("--tol", type=float, default=None)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", required=True, type=click.Path())
@click.option("--trace", "trace_path", type=click.Path(), default=None)
def solve(instance_path, method, uncertainty_path, model_path, values_path, welfare, alpha, h_train, max_iters, tol, seed, out, trace_path):
    """Run one solver and write its report (allocation, objective, trace)."""
    try:
        inst = load_instance(instance_path)
        problems = validate_instance(inst)
        if problems:
            raise ValueError("invalid instance: " + "; ".join(problems))
        uset = None
        if uncertainty_path:
            with open(uncertainty_path) as fh:
                uset = set_from_dict(json.load(fh))
        dist = expectation = None
        if model_path:
            _, dist, expectation = _load_model_distribution(model_path)
        if values_path:
            expectation = allocation_from_csv(values_path).vector
        rcfg = RobustConfig()
        if max_iters:
            rcfg.ascent.max_iters = max_iters
            rcfg.max_outer = max_iters
        if tol:
            rcfg.tol = tol
            rcfg.ascent.tol_objective = tol

        if method == "naive-usw":
            report = nominal_usw(inst, _need(expectation, "--model or --values"))
        elif method == "naive-gesw":
            report = nominal_gesw(inst, _need(expectation, "--model or --values"))
        elif method == "robust-usw-lp":
            report = robust_usw_polyhedral(inst, _need(uset, "--uncertainty"))
        elif method == "robust-usw-iqp":
            report = robust_usw_ellipsoid_iqp(inst, _need(uset, "--uncertainty"), cfg=rcfg)
        elif method == "robust-usw-dual":
            report = robust_usw_general(inst, _need(uset, "--uncertainty"), cfg=rcfg)
        elif method == "robust-gesw-lp":
            report = robust_gesw_polyhedral(inst, _need(uset, "--uncertainty"))
        elif method == "robust-gesw-iqp":
            report = robust_gesw_ellipsoid_iqp(inst, _need(uset, "--uncertainty"), cfg=rcfg)
        elif method == "robust-gesw-dual":
            report = robust_gesw_general(inst, _need(uset, "--uncertainty"), cfg=rcfg)
        elif method == "psga-baseline":
            spec = WelfareSpec("utilitarian" if welfare == "usw" else "group_egalitarian")
            report = adversarial_psga_baseline(inst, _need(uset, "--uncertainty"), spec, cfg=rcfg)
        elif method == "cvar-usw-lp":
            V = sample(_need(dist, "--model"), h_train, seed=seed)
            report = cvar_usw_sampling(inst, V, alpha=alpha)
        elif method == "cvar-gesw-lp":
            V = sample(_need(dist, "--model"), h_train, seed=seed)
            report = cvar_gesw_sampling(inst, V, alpha=alpha)
        elif method == "cvar-usw-gaussian":
            if not isinstance(dist, Gaussian):
                raise ValueError("cvar-usw-gaussian needs a gaussian-pairs model")
            report = cvar_usw_gaussian(inst, dist, alpha=alpha)
        else:  # pragma: no cover
            raise ValueError(f"unhandled method {method}")
        save_report(report, out, trace_path)
        if trace_path is None and report.trace:
            write_trace_csv(report.trace, f"{out}.trace.csv")
    except FloatingPointError as exc:
        _fail(str(exc), EXIT_NUMERICAL)
    except (OSError, ValueError, TypeError) as exc:
        _fail(str(exc))
    _dump_effective(out, "solve", {
        "instance": instance_path, "method": method, "uncertainty": uncertainty_path,
        "model": model_path, "values": values_path, "welfare": welfare, "alpha": alpha,
        "samples": h_train, "seed": seed,
    })
    click.echo(f"{method}: objective {report.objective:.6f} status {report.status}")
    if report.status == "not_converged":
        sys.exit(EXIT_NOT_CONVERGED)
    if report.status not in ("optimal",):
        sys.exit(EXIT_NUMERICAL)


def _need(value, what):
    if value is None:
        raise ValueError(f"this method requires {what}")
    return value


@main.command("round")
@click.option("--instance", "instance_path", required=True, type=click.Path(exists=True))
@click.option("--allocation", "alloc_path", required=True, type=click.Path(exists=True))
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", required=True, type=click.Path())
@click.option("--plan", "plan_path", type=click.Path(), default=None, help="Also write the full lottery decomposition.")
def round_cmd(instance_path, alloc_path, seed, out, plan_path):
    """Round a fractional allocation into a feasible integral one."""
    try:
        inst = load_instance(instance_path)
        alloc = allocation_from_csv(alloc_path)
        rounded = round_once(alloc, inst, seed)
        allocation_to_csv(rounded, out)
        if plan_path:
            save_plan(decompose(alloc, inst, seed), plan_path)
    except (OSError, ValueError) as exc:
        _fail(str(exc))
    _dump_effective(out, "round", {"instance": instance_path, "allocation": alloc_path, "seed": seed})
    click.echo(f"integral allocation written to {out}")


@main.command("evaluate")
@click.option("--instance", "instance_path", required=True, type=click.Path(exists=True))
@click.option("--allocation", "alloc_path", required=True, type=click.Path(exists=True))
@click.option("--model", "model_path", type=click.Path(exists=True), default=None)
@click.option("--values", "values_path", type=click.Path(exists=True), default=None)
@click.option("--uncertainty", "uncertainty_path", type=click.Path(exists=True), default=None)
@click.option("--group-uncertainty", "gset_path", type=click.Path(exists=True), default=None)
@click.option("--alpha", type=float, default=0.01, show_default=True)
@click.option("--h-eval", type=int, default=10000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", required=True, type=click.Path())
def evaluate_cmd(instance_path, alloc_path, model_path, values_path, uncertainty_path, gset_path, alpha, h_eval, seed, out):
    """Score an allocation on every metric its ground-truth artifacts allow."""
    try:
        inst = load_instance(instance_path)
        alloc = allocation_from_csv(alloc_path)
        dist = expectation = None
        if model_path:
            _, dist, expectation = _load_model_distribution(model_path)
        if values_path:
            expectation = allocation_from_csv(values_path).vector
        uset = gset = None
        if uncertainty_path:
            with open(uncertainty_path) as fh:
                uset = set_from_dict(json.load(fh))
        if gset_path:
            with open(gset_path) as fh:
                gset = set_from_dict(json.load(fh))
        metrics = []
        if expectation is not None:
            metrics += ["usw", "gesw"]
        if dist is not None:
            metrics += ["cvar_usw", "cvar_gesw"]
        if uset is not None:
            metrics.append("robust_usw")
        if gset is not None:
            metrics.append("robust_gesw")
        if not metrics:
            raise ValueError("no ground-truth artifact supplied; nothing to evaluate")
        cfg = CvarConfig(alpha=alpha, h_train=max(int(np.ceil(1 / alpha)), 10), h_eval=h_eval, seed=seed)
        ground = GroundTruth(expectation=expectation, distribution=dist, usw_set=uset, gesw_sets=gset)
        rec = evaluate(alloc, inst, ground, cfg, metrics=tuple(metrics))
        with open(out, "w") as fh:
            json.dump({"metrics": rec.metrics, "seed": seed}, fh, indent=2, sort_keys=True)
    except (OSError, ValueError) as exc:
        _fail(str(exc))
    _dump_effective(out, "evaluate", {
        "instance": instance_path, "allocation": alloc_path, "model": model_path,
        "values": values_path, "uncertainty": uncertainty_path, "group_uncertainty": gset_path,
        "alpha": alpha, "h_eval": h_eval, "seed": seed,
    })
    click.echo(json.dumps(rec.metrics, indent=2, sort_keys=True))


@main.command()
@click.option("--suite", type=click.Choice(["table", "noise-sweep", "toy-example", "gesw-stress", "convergence"]), required=True)
@click.option("--bids", type=click.Path(exists=True), default=None)
@click.option("--format", "fmt", type=click.Choice(["triples_csv", "preflib_categorical"]), default="triples_csv", show_default=True)
@click.option("--kind", type=click.Choice(["binary", "gaussian"]), default="binary", show_default=True)
@click.option("--runs", type=int, default=5, show_default=True)
@click.option("--paper-load", type=int, default=3, show_default=True)
@click.option("--reviewer-supply", type=int, default=15, show_default=True)
@click.option("--subsample", type=float, default=0.2, show_default=True)
@click.option("--clusters", type=int, default=4, show_default=True)
@click.option("--alpha-robust", type=float, default=0.3, show_default=True)
@click.option("--alpha-cvar", type=float, default=0.01, show_default=True)
@click.option("--h-train", type=int, default=4000, show_default=True)
@click.option("--h-eval", type=int, default=10000, show_default=True)
@click.option("--multipliers", default="1,2,4,8", show_default=True)
@click.option("--mf-epochs", type=int, default=200, show_default=True)
@click.option("--mf-factors", type=int, default=20, show_default=True)
@click.option("--papers", type=int, default=40, show_default=True, help="Convergence-suite instance height.")
@click.option("--reviewers", type=int, default=60, show_default=True, help="Convergence-suite instance width.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--jobs", type=int, default=1, show_default=True, help="Worker threads for independent runs.")
@click.option("--outdir", required=True, type=click.Path())
def experiment(suite, bids, fmt, kind, runs, paper_load, reviewer_supply, subsample, clusters,
               alpha_robust, alpha_cvar, h_train, h_eval, multipliers, mf_epochs, mf_factors,
               papers, reviewers, seed, jobs, outdir):
    """Run a canned experiment suite and write its tables or curve data."""
    os.makedirs(outdir, exist_ok=True)
    params = {k: v for k, v in locals().items() if k not in ("outdir",)}
    try:
        if suite == "table":
            _suite_table(bids, fmt, kind, runs, paper_load, reviewer_supply, subsample, clusters,
                         alpha_robust, alpha_cvar, h_train, h_eval, mf_epochs, mf_factors, seed, jobs, outdir)
        elif suite == "noise-sweep":
            _suite_noise(bids, fmt, paper_load, reviewer_supply, alpha_cvar, h_train, h_eval,
                         multipliers, mf_epochs, mf_factors, runs, seed, outdir)
        elif suite == "toy-example":
            _suite_toy(h_eval if h_eval != 10000 else 20000, seed, outdir)
        elif suite == "gesw-stress":
            _suite_gesw_stress(bids, fmt, paper_load, reviewer_supply, seed, outdir)
        elif suite == "convergence":
            _suite_convergence(papers, reviewers, seed, outdir)
    except (OSError, ValueError) as exc:
        _fail(str(exc))
    _dump_effective(os.path.join(outdir, "experiment"), "experiment", params)
    click.echo(f"suite {suite} outputs in {outdir}")


def _suite_table(bids, fmt, kind, runs, paper_load, reviewer_supply, subsample, clusters,
                 alpha_robust, alpha_cvar, h_train, h_eval, mf_epochs, mf_factors, seed, jobs, outdir):

    if bids is None:
        raise ValueError("--bids is required for the table suite")
    ds = load_bids(bids, fmt)
    values, mask = (binarize if kind == "binary" else scorize)(ds)
    builder = bid_experiment_builder(
        values, mask, kind,
        paper_load=paper_load, reviewer_supply=reviewer_supply, subsample_fraction=subsample,
        alpha_robust=alpha_robust, n_clusters=clusters,
        mf_params={"epochs": mf_epochs, "n_factors": mf_factors},
    )
    cfg = CvarConfig(alpha=alpha_cvar, h_train=h_train, h_eval=h_eval, seed=seed)
    methods = ["naive-usw", "naive-gesw", "cvar-usw", "cvar-gesw", "robust-usw", "robust-gesw"]
    table = run_table_protocol(builder, methods, runs, cfg, seeds=[seed + r for r in range(runs)], n_jobs=jobs)
    table.to_csv(os.path.join(outdir, "table.csv"))
    with open(os.path.join(outdir, "table.txt"), "w") as fh:
        fh.write(table.format_text())
    with open(os.path.join(outdir, "failures.json"), "w") as fh:
        json.dump(table.failures, fh, indent=2)
    click.echo(table.format_text())


def _suite_noise(bids, fmt, paper_load, reviewer_supply, alpha_cvar, h_train, h_eval,
                 multipliers, mf_epochs, mf_factors, runs, seed, outdir):
    if bids is None:
        raise ValueError("--bids is required for the noise-sweep suite")
    ds = load_bids(bids, fmt)
    values, mask = scorize(ds)
    model = GaussianPairsModel(n_factors=mf_factors, epochs=mf_epochs, seed=seed).fit(values, mask)
    dist = model.to_distribution()
    inst = Instance.build(ds.n_papers, ds.n_reviewers, load_lower=paper_load, load_upper=paper_load,
                          supply_lower=0, supply_upper=reviewer_supply, pair_caps=1)
    problems = validate_instance(inst)
    if problems:
        raise ValueError("noise-sweep instance invalid: " + "; ".join(problems))
    mults = [float(x) for x in str(multipliers).split(",")]
    cfg = CvarConfig(alpha=alpha_cvar, h_train=h_train, h_eval=h_eval, seed=seed)
    rows = noise_sweep(inst, dist, mults, cfg, seeds=tuple(seed + r for r in range(runs)))
    sweep_rows_to_csv(rows, os.path.join(outdir, "noise_sweep.csv"))


# Constants of the two-agent, four-item skewed-Gaussian example.
TOY_MEANS = np.array([[0.39, 0.49, 0.51, 0.53], [0.52, 0.51, 0.53, 0.54]])
TOY_STDS = np.array([0.01, 0.04, 0.05, 0.09])
TOY_SKEW = 5.0
TOY_ALPHA = 0.04


def toy_example_results(h=20000, seed=0):
    """Naive / robust / CVaR selections and their CVaR scores on the toy.

    Allocations are enumerated exhaustively (each agent one item, items
    distinct). The robust selection scores allocations by the exact worst
    case over the Gaussian-derived ellipsoid at the toy's risk level; naive
    uses the means; CVaR uses the empirical estimator on skewed samples.
    """
    n, m = TOY_MEANS.shape
    inst = Instance.build(n, m, load_lower=1, load_upper=1, supply_lower=0, supply_upper=1, pair_caps=1)
    stdev = np.tile(TOY_STDS, (n, 1)).reshape(-1)
    dist = SkewNormal(TOY_MEANS.reshape(-1), stdev, np.full(n * m, TOY_SKEW))
    V = sample(dist, h, seed=seed)
    gauss_set = build_gaussian_ellipsoid(Gaussian(TOY_MEANS.reshape(-1), stdev**2), TOY_ALPHA)
    allocs = []
    for i in range(m):
        for j in range(m):
            if i == j:
                continue
            A = np.zeros((n, m))
            A[0, i] = 1.0
            A[1, j] = 1.0
            allocs.append(((i, j), A))

    def cvar_usw(A):
        return empirical_cvar(V @ A.reshape(-1), TOY_ALPHA)

    def cvar_gesw(A):
        per_agent = np.stack([V[:, :m] @ A[0], V[:, m:] @ A[1]], axis=1)
        return empirical_cvar(per_agent.min(axis=1), TOY_ALPHA)

    naive = max(allocs, key=lambda t: float(TOY_MEANS.reshape(-1) @ t[1].reshape(-1)))
    robust = max(allocs, key=lambda t: worst_case_linear(t[1].reshape(-1), gauss_set)[0])
    cvar = max(allocs, key=lambda t: cvar_usw(t[1]))
    out = {}
    for name, (items, A) in (("naive", naive), ("robust", robust), ("cvar", cvar)):
        out[name] = {
            "items": (items[0] + 1, items[1] + 1),  # 1-based, agent order
            "allocation": A.tolist(),
            "cvar_usw": float(cvar_usw(A)),
            "cvar_gesw": float(cvar_gesw(A)),
        }
    return out


def _suite_toy(h, seed, outdir):
    results = toy_example_results(h=h, seed=seed)
    with open(os.path.join(outdir, "toy_example.json"), "w") as fh:
        json.dump(results, fh, indent=2, sort_keys=True)
    lines = ["method,item_agent1,item_agent2,cvar_usw,cvar_gesw"]
    for name in ("naive", "robust", "cvar"):
        r = results[name]
        lines.append(f"{name},{r['items'][0]},{r['items'][1]},{r['cvar_usw']:.3f},{r['cvar_gesw']:.3f}")
    with open(os.path.join(outdir, "toy_example.csv"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    click.echo("\n".join(lines))


def _suite_gesw_stress(bids, fmt, paper_load, reviewer_supply, seed, outdir):
    if bids is None:
        raise ValueError("--bids is required for the gesw-stress suite")
    ds = load_bids(bids, fmt)
    values, mask = scorize(ds)
    inst = Instance.build(ds.n_papers, ds.n_reviewers, load_lower=paper_load, load_upper=paper_load,
                          supply_lower=0, supply_upper=reviewer_supply, pair_caps=1)
    rows = ["parameter,value,relative_loss"]
    minority = max(1, ds.n_papers // 5)
    for divisor in (1.0, 2.0, 4.0, 8.0):
        _, _, loss = gesw_stress_synthesis(inst, values * mask, minority, divisor=divisor, nonzero_keep=5, seed=seed)
        rows.append(f"divisor,{divisor},{loss:.6f}")
    for keep in (ds.n_reviewers, 10, 5, 2):
        _, _, loss = gesw_stress_synthesis(inst, values * mask, minority, divisor=2.0, nonzero_keep=keep, seed=seed)
        rows.append(f"nonzero_keep,{keep},{loss:.6f}")
    with open(os.path.join(outdir, "gesw_stress.csv"), "w") as fh:
        fh.write("\n".join(rows) + "\n")
    click.echo("\n".join(rows))


def _suite_convergence(papers, reviewers, seed, outdir):
    from .robust import RobustConfig
    from .uncertainty import EllipsoidConstraint, EllipsoidSet

    rng = np.random.default_rng(seed)
    nm = papers * reviewers
    inst = Instance.build(papers, reviewers, load_lower=2, load_upper=2, supply_lower=0,
                          supply_upper=max(2, int(np.ceil(2.5 * papers / reviewers)) + 2), pair_caps=1)
    mean = rng.uniform(0.2, 1.0, nm)
    var = rng.uniform(0.005, 0.05, nm)
    uset = EllipsoidSet((EllipsoidConstraint(mean, var, float(np.sqrt(nm / 8.0))),))
    iqp = robust_usw_ellipsoid_iqp(inst, uset)
    psga = adversarial_psga_baseline(inst, uset, WelfareSpec("utilitarian"))
    write_trace_csv(iqp.trace, os.path.join(outdir, "iqp_trace.csv"))
    write_trace_csv(psga.trace, os.path.join(outdir, "psga_trace.csv"))
    summary = {
        "iqp_objective": iqp.objective,
        "iqp_outer_iterations": iqp.meta.get("outer_iterations"),
        "psga_objective": psga.objective,
        "psga_iterations": psga.meta.get("iterations"),
        "psga_converged": psga.meta.get("ascent_converged"),
    }
    with open(os.path.join(outdir, "convergence.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    click.echo(json.dumps(summary, indent=2, sort_keys=True))


@main.command()
@click.option("--report", "report_path", required=True, type=click.Path(exists=True))
def report(report_path):
    """Summarize a solve report in human-readable form."""
    try:
        with open(report_path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        _fail(str(exc))
    alloc = np.asarray(doc["allocation"])
    click.echo(f"method:     {doc['method']}")
    click.echo(f"status:     {doc['status']}")
    click.echo(f"objective:  {doc['objective']:.6f}")
    click.echo(f"allocation: {alloc.shape[0]} x {alloc.shape[1]} ({doc['allocation_mode']}), mass {alloc.sum():.3f}")
    for key, val in sorted(doc.get("meta", {}).items()):
        click.echo(f"  {key}: {val}")


if __name__ == "__main__":
    main()
