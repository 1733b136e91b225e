import numpy as np
import pytest

from fairmatch.cvar import CvarConfig
from fairmatch.evaluation import (
    EvaluationRecord,
    GroundTruth,
    METRICS,
    RunContext,
    bid_experiment_builder,
    evaluate,
    gesw_stress_synthesis,
    noise_sweep,
    normalize_records,
    run_table_protocol,
)
from fairmatch.instance import Allocation, Instance
from fairmatch.nominal import nominal_usw
from fairmatch.uncertainty import (
    Bernoulli,
    EllipsoidConstraint,
    EllipsoidSet,
    Gaussian,
    GroupProductSet,
    PolyhedralSet,
)


def small_ctx():
    inst = Instance.build(2, 2, load_lower=1, load_upper=1, supply_upper=1, pair_caps=1, group_ids=[0, 1])
    mean = np.array([0.9, 0.4, 0.3, 0.8])
    ground = GroundTruth(
        expectation=mean,
        distribution=Gaussian(mean, np.full(4, 1e-12)),
        usw_set=EllipsoidSet((EllipsoidConstraint(mean, np.full(4, 0.01), 0.0),)),
        gesw_sets=GroupProductSet.for_instance(
            inst,
            (
                EllipsoidSet((EllipsoidConstraint(mean[:2], np.full(2, 0.01), 0.0),)),
                EllipsoidSet((EllipsoidConstraint(mean[2:], np.full(2, 0.01), 0.0),)),
            ),
        ),
    )
    return inst, ground


def test_deterministic_distribution_gives_nominal_cvar():
    inst, ground = small_ctx()
    alloc = Allocation(np.eye(2))
    cfg = CvarConfig(alpha=0.1, h_train=20, h_eval=500, seed=0)
    rec = evaluate(alloc, inst, ground, cfg)
    assert rec.metrics["cvar_usw"] == pytest.approx(rec.metrics["usw"], abs=1e-4)
    assert rec.metrics["cvar_gesw"] == pytest.approx(rec.metrics["gesw"], abs=1e-4)
    # degenerate sets: robust metrics equal the nominal ones
    assert rec.metrics["robust_usw"] == pytest.approx(rec.metrics["usw"], abs=1e-9)
    assert rec.metrics["robust_gesw"] == pytest.approx(rec.metrics["gesw"], abs=1e-9)


def test_evaluation_deterministic_under_seed():
    inst, ground = small_ctx()
    alloc = Allocation(np.eye(2))
    cfg = CvarConfig(alpha=0.1, h_train=20, h_eval=500, seed=3)
    r1 = evaluate(alloc, inst, ground, cfg)
    r2 = evaluate(alloc, inst, ground, cfg)
    assert r1.metrics == r2.metrics


def test_missing_artifact_raises():
    inst, ground = small_ctx()
    ground.distribution = None
    with pytest.raises(ValueError):
        evaluate(Allocation(np.eye(2)), inst, ground, CvarConfig(alpha=0.1, h_train=20, h_eval=100), metrics=("cvar_usw",))


def test_polyhedral_adversary_can_zero_out_concentrated_allocation():
    inst = Instance.build(2, 2, load_lower=1, load_upper=1, supply_upper=1, pair_caps=1, group_ids=[0, 1])
    # budget row: the adversary may zero two pairs entirely
    uset = PolyhedralSet(np.full((1, 4), 0.25), np.array([0.5]), upper=np.ones(4))
    ground = GroundTruth(expectation=np.full(4, 0.5), usw_set=uset)
    rec = evaluate(Allocation(np.eye(2)), inst, ground, CvarConfig(alpha=0.1, h_train=20, h_eval=100), metrics=("robust_usw",))
    assert rec.metrics["robust_usw"] == pytest.approx(0.0, abs=1e-9)


def test_normalization_idempotent_and_unit_max():
    records = [
        EvaluationRecord("a", {"usw": 2.0, "gesw": 1.0}),
        EvaluationRecord("b", {"usw": 1.0, "gesw": 4.0}),
        EvaluationRecord("c", {"usw": None, "gesw": 2.0}),
    ]
    normalize_records(records)
    assert records[0].normalized["usw"] == pytest.approx(1.0)
    assert records[1].normalized["gesw"] == pytest.approx(1.0)
    assert records[2].normalized["usw"] is None
    once = [EvaluationRecord(r.allocation_tag, dict(r.normalized)) for r in records[:2]]
    normalize_records(once)
    assert once[0].normalized["usw"] == pytest.approx(records[0].normalized["usw"])
    assert once[1].normalized["gesw"] == pytest.approx(records[1].normalized["gesw"])


def test_usw_is_allocation_linear():
    inst, ground = small_ctx()
    cfg = CvarConfig(alpha=0.1, h_train=20, h_eval=100)
    full = evaluate(Allocation(np.eye(2)), inst, ground, cfg, metrics=("usw",)).metrics["usw"]
    half = evaluate(Allocation(0.5 * np.eye(2)), inst, ground, cfg, metrics=("usw",)).metrics["usw"]
    assert half == pytest.approx(0.5 * full)


def _tiny_builder(seed):
    rng = np.random.default_rng(seed)
    inst = Instance.build(3, 3, load_lower=1, load_upper=1, supply_upper=1, pair_caps=1, group_ids=[0, 1, 1])
    mean = rng.uniform(0.3, 1.0, 9)
    ground = GroundTruth(
        expectation=mean,
        distribution=Gaussian(mean, rng.uniform(0.001, 0.01, 9)),
        usw_set=EllipsoidSet((EllipsoidConstraint(mean, rng.uniform(0.001, 0.01, 9), 0.3),)),
        gesw_sets=None,
    )
    ground.gesw_sets = GroupProductSet.for_instance(
        inst,
        (
            EllipsoidSet((EllipsoidConstraint(mean[:3], rng.uniform(0.001, 0.01, 3), 0.3),)),
            EllipsoidSet((EllipsoidConstraint(mean[3:], rng.uniform(0.001, 0.01, 6), 0.3),)),
        ),
    )
    return RunContext(inst=inst, ground=ground, train_seed=seed)


def test_table_protocol_diagonal_and_reproducibility():
    methods = ["naive-usw", "cvar-usw", "robust-usw"]
    cfg = CvarConfig(alpha=0.1, h_train=100, h_eval=400)
    t1 = run_table_protocol(_tiny_builder, methods, 2, cfg, seeds=[0, 1])
    t2 = run_table_protocol(_tiny_builder, methods, 2, cfg, seeds=[0, 1])
    assert np.allclose(t1.mean, t2.mean, equal_nan=True)
    assert not t1.failures
    by = {name: i for i, name in enumerate(t1.methods)}
    j_usw = METRICS.index("usw")
    j_cvar = METRICS.index("cvar_usw")
    j_rob = METRICS.index("robust_usw")
    assert t1.mean[by["naive-usw"], j_usw] == pytest.approx(1.0, abs=1e-9)
    assert t1.mean[by["robust-usw"], j_rob] == pytest.approx(1.0, abs=1e-9)
    # CVaR optimizer within two estimator stderr of the per-run max
    assert t1.mean[by["cvar-usw"], j_cvar] >= 0.97


def test_table_protocol_single_run_diagonal_cell():
    cfg = CvarConfig(alpha=0.1, h_train=100, h_eval=300)
    t = run_table_protocol(_tiny_builder, ["naive-usw"], 1, cfg, seeds=[5])
    assert t.mean[0, METRICS.index("usw")] == pytest.approx(1.0)
    assert np.all(t.std == 0)


def test_table_protocol_records_failures_as_gaps():
    def solver_that_fails(ctx, cfg):
        raise ValueError("deliberate")

    methods = {"naive-usw": lambda ctx, cfg: nominal_usw(ctx.inst, ctx.ground.expectation), "broken": solver_that_fails}
    cfg = CvarConfig(alpha=0.1, h_train=100, h_eval=200)
    t = run_table_protocol(_tiny_builder, methods, 1, cfg, seeds=[0])
    assert t.failures and t.failures[0]["method"] == "broken"
    assert np.isnan(t.mean[1]).all()
    text = t.format_text()
    assert "--" in text


def test_table_csv_export(tmp_path):
    cfg = CvarConfig(alpha=0.1, h_train=100, h_eval=200)
    t = run_table_protocol(_tiny_builder, ["naive-usw"], 1, cfg, seeds=[0])
    path = tmp_path / "table.csv"
    t.to_csv(str(path))
    lines = path.read_text().splitlines()
    assert lines[0].startswith("method,usw_mean")
    assert lines[1].startswith("naive-usw")


def test_noise_sweep_zero_multiplier_ties():
    inst = Instance.build(3, 3, load_lower=1, load_upper=1, supply_upper=1, pair_caps=1)
    rng = np.random.default_rng(2)
    dist = Gaussian(rng.uniform(0.4, 1.0, 9), rng.uniform(0.005, 0.02, 9))
    cfg = CvarConfig(alpha=0.1, h_train=50, h_eval=400)
    rows = noise_sweep(inst, dist, [0.0], cfg, seeds=(0,))
    by = {r["method"]: r["cvar"] for r in rows}
    assert by["cvar"] == pytest.approx(by["naive-usw"], abs=1e-6)


def test_noise_sweep_cvar_dominates_and_gap_widens():
    inst = Instance.build(4, 5, load_lower=1, load_upper=1, supply_upper=1, pair_caps=1)
    rng = np.random.default_rng(3)
    dist = Gaussian(rng.uniform(0.4, 1.0, 20), rng.uniform(0.005, 0.05, 20))
    cfg = CvarConfig(alpha=0.05, h_train=100, h_eval=2000)
    rows = noise_sweep(inst, dist, [1, 4], cfg, seeds=(0, 1, 2))
    med = {}
    for mult in (1, 4):
        for meth in ("cvar", "naive-usw"):
            med[(meth, mult)] = np.median([r["cvar"] for r in rows if r["method"] == meth and r["multiplier"] == mult])
    assert med[("cvar", 1)] >= med[("naive-usw", 1)] - 1e-6
    assert med[("cvar", 4)] >= med[("naive-usw", 4)] - 1e-6
    assert med[("cvar", 4)] - med[("naive-usw", 4)] >= med[("cvar", 1)] - med[("naive-usw", 1)] - 1e-6


def test_gesw_stress_identity_copy_is_lossless():
    inst = Instance.build(10, 8, load_lower=1, load_upper=1, supply_upper=4, pair_caps=1)
    rng = np.random.default_rng(4)
    vals = rng.uniform(0.2, 1.0, (10, 8))
    _, _, loss = gesw_stress_synthesis(inst, vals, minority_size=3, divisor=1.0, nonzero_keep=8, seed=0)
    assert loss <= 0.02


def test_gesw_stress_divisor_monotone_trend():
    inst = Instance.build(12, 10, load_lower=1, load_upper=1, supply_upper=4, pair_caps=1)
    rng = np.random.default_rng(5)
    vals = rng.uniform(0.2, 1.0, (12, 10))
    losses = []
    for divisor in (1.0, 2.0, 8.0):
        med = np.median([
            gesw_stress_synthesis(inst, vals, minority_size=3, divisor=divisor, nonzero_keep=4, seed=s)[2]
            for s in range(3)
        ])
        losses.append(med)
    assert losses[0] <= losses[1] + 1e-9
    assert losses[1] <= losses[2] + 1e-9
    # grouping is the two-block structure
    inst2, vals2, _ = gesw_stress_synthesis(inst, vals, minority_size=3, divisor=2.0, nonzero_keep=4, seed=0)
    assert inst2.n == 15 and inst2.n_groups == 2


def test_gesw_stress_validation():
    inst = Instance.build(4, 4, load_lower=1, load_upper=1, supply_upper=2, pair_caps=1)
    with pytest.raises(ValueError):
        gesw_stress_synthesis(inst, np.ones((4, 4)), minority_size=4)
    two_group = Instance.build(4, 4, load_lower=1, load_upper=1, supply_upper=2, pair_caps=1, group_ids=[0, 0, 1, 1])
    with pytest.raises(ValueError):
        gesw_stress_synthesis(two_group, np.ones((4, 4)), minority_size=1)


def test_bid_experiment_builder_binary_smoke():
    rng = np.random.default_rng(6)
    quality = rng.beta(2, 2, (40, 30))
    mask = rng.random((40, 30)) < 0.6
    values = (quality > 0.45).astype(float)
    builder = bid_experiment_builder(
        values, mask, "binary", paper_load=2, reviewer_supply=8, subsample_fraction=0.4,
        n_clusters=2, mf_params={"epochs": 60, "n_factors": 4},
    )
    ctx = builder(0)
    assert ctx.inst.n_groups == 2
    assert ctx.ground.usw_set is not None and ctx.ground.gesw_sets is not None
    assert isinstance(ctx.ground.distribution, Bernoulli)
    ctx2 = builder(0)
    assert np.array_equal(ctx2.ground.expectation, ctx.ground.expectation)


def test_bid_experiment_builder_gaussian_smoke():
    rng = np.random.default_rng(7)
    scores = np.clip(rng.normal(0.6, 0.25, (40, 30)), 0.01, 1.0)
    mask = rng.random((40, 30)) < 0.7
    builder = bid_experiment_builder(
        scores, mask, "gaussian", paper_load=2, reviewer_supply=8, subsample_fraction=0.4,
        n_clusters=2, mf_params={"epochs": 60, "n_factors": 4},
    )
    ctx = builder(1)
    assert isinstance(ctx.ground.distribution, Gaussian)
    assert isinstance(ctx.ground.usw_set, EllipsoidSet)
    assert ctx.ground.gesw_sets.n_groups == 2
