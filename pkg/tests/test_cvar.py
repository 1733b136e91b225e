import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from fairmatch.cvar import (
    CvarConfig,
    cvar_gesw_sampling,
    cvar_usw_gaussian,
    cvar_usw_sampling,
    empirical_cvar,
    gaussian_cvar_coefficient,
    log_allocation_count_upper,
    sample_complexity_bound,
)
from fairmatch.instance import Instance
from fairmatch.nominal import nominal_gesw, nominal_usw
from fairmatch.uncertainty import Gaussian, sample


def test_config_validation():
    with pytest.raises(ValueError):
        CvarConfig(alpha=0.7)
    with pytest.raises(ValueError):
        CvarConfig(alpha=0.01, h_train=10)
    CvarConfig(alpha=0.1, h_train=10, h_eval=10)


# -- empirical estimator -------------------------------------------------------


def test_cvar_constant_samples():
    assert empirical_cvar(np.full(7, 3.25), 0.2) == pytest.approx(3.25)


def test_cvar_matches_grid_search_on_integers():
    w = np.arange(10.0)
    alpha = 0.2
    got = empirical_cvar(w, alpha)
    grid = max(b - np.mean(np.maximum(b - w, 0)) / alpha for b in np.linspace(-2, 12, 20001))
    assert got == pytest.approx(grid, abs=1e-3)
    assert got == pytest.approx(0.5)


def test_cvar_standard_normal_tail():
    rng = np.random.default_rng(0)
    w = rng.standard_normal(50000)
    got = empirical_cvar(w, 0.01)
    exact = -norm.pdf(norm.ppf(0.01)) / 0.01
    assert got == pytest.approx(exact, abs=0.05)
    assert exact == pytest.approx(-2.665, abs=1e-3)


def test_weighted_cvar_variational_equivalence():
    rng = np.random.default_rng(1)
    w = rng.normal(size=12)
    pi = rng.random(12)
    pi /= pi.sum()
    alpha = 0.3
    got = empirical_cvar(w, alpha, weights=pi)
    grid = max(b - float(pi @ np.maximum(b - w, 0)) / alpha for b in np.linspace(w.min() - 1, w.max() + 1, 40001))
    assert got == pytest.approx(grid, abs=1e-3)


@settings(max_examples=150, deadline=None)
@given(st.integers(5, 60), st.integers(0, 2**31 - 1))
def test_cvar_properties(h, seed):
    rng = np.random.default_rng(seed)
    w = rng.normal(size=h) * rng.uniform(0.1, 3)
    a1, a2 = sorted(rng.uniform(0.02, 0.99, 2))
    # below the mean, monotone in alpha
    assert empirical_cvar(w, a2) <= w.mean() + 1e-12
    assert empirical_cvar(w, a1) <= empirical_cvar(w, a2) + 1e-12
    # translation equivariance and positive homogeneity
    c, gamma = rng.normal(), rng.uniform(0.1, 5)
    assert empirical_cvar(c + gamma * w, a1) == pytest.approx(c + gamma * empirical_cvar(w, a1), rel=1e-9, abs=1e-12)


# -- sampling LPs -----------------------------------------------------------------


def test_sampling_single_scenario_is_nominal():
    inst = Instance.build(2, 2, load_lower=1, load_upper=1, supply_upper=1, pair_caps=1)
    v = np.array([[0.9, 0.2, 0.3, 0.8]])
    rep = cvar_usw_sampling(inst, v, alpha=0.3)
    nom = nominal_usw(inst, v[0])
    assert rep.objective == pytest.approx(nom.objective, abs=1e-7)


def test_example_two_agent_bernoulli_exhaustive():
    # two agents, two items, each agent exactly one item, unit supply; the
    # exhaustive scenario-weighted estimator prefers the expectation-optimal
    # matching 13/15 over the alternative 5/6
    inst = Instance.build(2, 2, load_lower=1, load_upper=1, supply_upper=1, pair_caps=1, group_ids=[0, 1])
    p = np.array([0.8, 0.9, 0.5, 0.8])
    outcomes = np.array(list(itertools.product([0.0, 1.0], repeat=4)))
    probs = np.prod(np.where(outcomes > 0.5, p, 1 - p), axis=1)
    rep = cvar_usw_sampling(inst, outcomes, alpha=0.3, scenario_probs=probs, integral=True)
    assert np.allclose(rep.allocation.values, np.eye(2))
    assert rep.objective == pytest.approx(13 / 15, abs=1e-9)
    alt = np.array([0.0, 1.0, 1.0, 0.0])
    alt_val = empirical_cvar(outcomes @ alt, 0.3, weights=probs)
    assert alt_val == pytest.approx(5 / 6, abs=1e-9)


def test_gesw_sampling_single_group_matches_usw_normalized():
    inst = Instance.build(2, 2, load_lower=1, load_upper=1, supply_upper=1, pair_caps=1, group_ids=[0, 0])
    V = sample(Gaussian(np.array([0.9, 0.3, 0.4, 0.8]), np.full(4, 0.02)), 400, seed=3)
    gesw = cvar_gesw_sampling(inst, V, alpha=0.1)
    usw = cvar_usw_sampling(inst, V, alpha=0.1)
    assert gesw.objective == pytest.approx(usw.objective / 2.0, abs=1e-6)


def test_gesw_sampling_symmetric_groups_and_enumeration():
    inst = Instance.build(2, 2, load_lower=1, load_upper=1, supply_upper=1, pair_caps=1, group_ids=[0, 1])
    rng = np.random.default_rng(4)
    base = rng.uniform(0.4, 0.9, (60, 2))
    V = np.column_stack([base[:, 0], base[:, 1], base[:, 1], base[:, 0]])  # symmetric across groups
    rep = cvar_gesw_sampling(inst, V, alpha=0.2, integral=True)
    d = np.repeat(1.0, 4)
    per_group = np.stack([V[:, :2] @ rep.allocation.vector[:2], V[:, 2:] @ rep.allocation.vector[2:]], axis=1)
    u = per_group.mean(axis=0)
    assert abs(u[0] - u[1]) <= 0.05
    # brute force over the two feasible matchings
    best = -np.inf
    for A in (np.eye(2), np.array([[0.0, 1.0], [1.0, 0.0]])):
        group_min = np.minimum(V[:, :2] @ A.reshape(-1)[:2], V[:, 2:] @ A.reshape(-1)[2:])
        best = max(best, empirical_cvar(group_min, 0.2))
    assert rep.objective == pytest.approx(best, abs=1e-9)


def test_gesw_sampling_deterministic_rows_reduce_to_nominal():
    inst = Instance.build(2, 2, load_lower=1, load_upper=1, supply_upper=1, pair_caps=1, group_ids=[0, 1])
    v = np.array([0.7, 0.5, 0.2, 0.9])
    V = np.tile(v, (40, 1))
    rep = cvar_gesw_sampling(inst, V, alpha=0.2)
    nom = nominal_gesw(inst, v)
    assert rep.objective == pytest.approx(nom.objective, abs=1e-7)


def test_estimator_gap_self_consistency():
    inst = Instance.build(2, 3, load_lower=1, load_upper=1, supply_upper=1, pair_caps=1)
    V = sample(Gaussian(np.linspace(0.2, 0.9, 6), np.full(6, 0.01)), 300, seed=5)
    rep = cvar_usw_sampling(inst, V, alpha=0.1)
    assert rep.meta["estimator_gap"] <= 1e-6


# -- Gaussian closed form -----------------------------------------------------------


def test_gaussian_zero_covariance_is_nominal():
    inst = Instance.build(2, 2, load_lower=1, load_upper=1, supply_upper=1, pair_caps=1)
    mean = np.array([0.9, 0.2, 0.3, 0.8])
    rep = cvar_usw_gaussian(inst, Gaussian(mean, np.zeros(4)), alpha=0.1)
    nom = nominal_usw(inst, mean)
    assert rep.objective == pytest.approx(nom.objective, abs=1e-6)


def test_gaussian_penalty_coefficients():
    assert gaussian_cvar_coefficient(0.5) == pytest.approx(np.sqrt(2 / np.pi), abs=1e-9)
    assert gaussian_cvar_coefficient(0.5) == pytest.approx(0.79788, abs=1e-5)
    assert gaussian_cvar_coefficient(0.01) == pytest.approx(2.6652, abs=1e-4)


def test_gaussian_gradient_matches_finite_differences():
    rng = np.random.default_rng(6)
    mean = rng.uniform(0.3, 1.0, 6)
    var = rng.uniform(0.01, 0.05, 6)
    coeff = gaussian_cvar_coefficient(0.05)

    def value(a):
        return float(a @ mean) - coeff * np.sqrt(float(a @ (var * a)))

    def grad(a):
        sd = np.sqrt(float(a @ (var * a)))
        return mean - coeff * var * a / max(sd, 1e-12)

    for _ in range(20):
        a = rng.uniform(0.1, 1.0, 6)
        g = grad(a)
        num = np.zeros(6)
        for j in range(6):
            e = np.zeros(6)
            e[j] = 1e-5
            num[j] = (value(a + e) - value(a - e)) / 2e-5
        assert np.allclose(g, num, rtol=1e-4, atol=1e-8)


def test_gaussian_matches_sampling_at_moderate_h():
    inst = Instance.build(2, 2, load_lower=1, load_upper=1, supply_upper=1, pair_caps=1)
    rng = np.random.default_rng(7)
    g = Gaussian(rng.uniform(0.4, 1.0, 4), rng.uniform(0.005, 0.03, 4))
    closed = cvar_usw_gaussian(inst, g, alpha=0.05)
    V = sample(g, 20000, seed=11)
    lp = cvar_usw_sampling(inst, V, alpha=0.05)
    assert abs(closed.objective - lp.objective) / abs(closed.objective) <= 0.02


def test_sampling_lp_consistency_in_h():
    # |LP - closed form| shrinks through h in {100, 1000, 10000} (median over seeds)
    inst = Instance.build(2, 2, load_lower=1, load_upper=1, supply_upper=1, pair_caps=1)
    rng = np.random.default_rng(8)
    g = Gaussian(rng.uniform(0.4, 1.0, 4), rng.uniform(0.01, 0.04, 4))
    closed = cvar_usw_gaussian(inst, g, alpha=0.1).objective
    medians = []
    for h in (100, 1000, 10000):
        gaps = []
        for seed in range(10):
            V = sample(g, h, seed=100 + seed)
            gaps.append(abs(cvar_usw_sampling(inst, V, alpha=0.1).objective - closed))
        medians.append(np.median(gaps))
    assert medians[0] >= medians[1] >= medians[2]


# -- sample complexity ----------------------------------------------------------------


def test_sample_complexity_formula_and_monotonicity():
    base = dict(max_quad=8.0, log_num_allocs=10.0, alpha=0.1, epsilon=0.1, delta=0.05, eta=1.0, gamma=1.0)
    h = sample_complexity_bound(**base)
    expected = int(np.ceil(8 * 8 * (np.log(6) + 10 - np.log(0.05)) / (0.1**2 * 0.1**2 * 1.0)))
    assert h == expected
    # doubling epsilon shrinks h by at least 4x while epsilon^2 is active
    h2 = sample_complexity_bound(**{**base, "epsilon": 0.2})
    assert h >= 4 * h2 - 4
    # eta below 1 blows the bound up monotonically
    h_eta = sample_complexity_bound(**{**base, "eta": 0.1})
    h_eta_smaller = sample_complexity_bound(**{**base, "eta": 0.01})
    assert h_eta_smaller > h_eta > h


def test_sample_complexity_validation():
    with pytest.raises(ValueError):
        sample_complexity_bound(8, 10, 0.6, 0.1, 0.05, 1, 1)
    with pytest.raises(ValueError):
        sample_complexity_bound(8, 10, 0.1, -0.1, 0.05, 1, 1)


def test_log_allocation_count_upper():
    # 2 agents x 3 items, exactly one item each: 3 rows per agent
    inst = Instance.build(2, 3, load_lower=1, load_upper=1, supply_upper=1, pair_caps=1)
    assert log_allocation_count_upper(inst) == pytest.approx(2 * np.log(3))
    # caps of 2 with load exactly 2 over two items: rows {(0,2),(1,1),(2,0)}
    inst2 = Instance.build(1, 2, load_lower=2, load_upper=2, supply_upper=2, pair_caps=2)
    assert log_allocation_count_upper(inst2) == pytest.approx(np.log(3))


def test_branch_and_bound_respects_cell_cap():
    inst = Instance.build(4, 8, load_lower=1, load_upper=1, supply_upper=1, pair_caps=1)
    assert inst.nm > 30
    V = np.tile(np.linspace(0.1, 1.0, inst.nm), (50, 1))
    with pytest.raises(ValueError):
        cvar_usw_sampling(inst, V, alpha=0.1, integral=True)
