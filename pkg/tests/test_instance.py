import io
import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairmatch.instance import (
    Allocation,
    Instance,
    WelfareSpec,
    allocation_from_csv,
    allocation_to_csv,
    devectorize,
    group_pair_indices,
    group_utilities,
    instance_from_dict,
    instance_to_dict,
    validate_instance,
    vectorize,
    welfare,
)


def example_21_instance():
    return Instance.build(2, 2, load_lower=1, load_upper=1, supply_lower=0, supply_upper=1, pair_caps=1, group_ids=[0, 1])


def test_validate_smallest_nondegenerate():
    inst = Instance.build(1, 2, load_lower=1, load_upper=1, supply_upper=1, pair_caps=1)
    assert validate_instance(inst) == []


def test_validate_aggregate_supply_shortfall():
    inst = Instance.build(1, 1, load_lower=2, load_upper=3, supply_upper=1, pair_caps=5)
    problems = validate_instance(inst, check_feasibility=False)
    assert any("aggregate supply" in p for p in problems)


def test_validate_conference_style_instance():
    # paper-style constants: pinned load of 3 per paper, supply 15 per reviewer
    inst = Instance.build(10, 4, load_lower=3, load_upper=3, supply_upper=15, pair_caps=1, group_ids=[i % 2 for i in range(10)])
    assert validate_instance(inst) == []


def test_validate_rejects_empty_group():
    inst = Instance.build(3, 2, group_ids=[0, 0, 2])
    assert any("group" in p for p in validate_instance(inst, check_feasibility=False))


def test_validate_supports_positive_supply_lower():
    inst = Instance.build(3, 2, load_lower=0, load_upper=2, supply_lower=1, supply_upper=3, pair_caps=1)
    assert validate_instance(inst) == []


def test_group_utilities_zero_allocation():
    inst = example_21_instance()
    u = group_utilities(Allocation(np.zeros((2, 2))), np.ones(4), inst)
    assert np.allclose(u, 0.0)


def test_group_utilities_two_term_hand_computation():
    inst = Instance.build(2, 2, load_lower=1, load_upper=1, supply_upper=1, pair_caps=1)
    a = Allocation(np.eye(2))
    v = np.array([1.0, 0.8, 0.6, 0.4])
    u = group_utilities(a, v, inst)
    assert np.allclose(u, [(1.0 + 0.4) / 2])


def test_group_utilities_two_agent_bernoulli_means():
    inst = example_21_instance()
    u = group_utilities(Allocation(np.eye(2)), np.array([0.8, 0.9, 0.5, 0.8]), inst)
    assert np.allclose(u, [0.8, 0.8])


def test_usw_expectation_optimal_assignment():
    inst = example_21_instance()
    val = welfare(Allocation(np.eye(2)), np.array([0.8, 0.9, 0.5, 0.8]), inst, WelfareSpec("utilitarian"))
    assert val == pytest.approx(1.6)


def test_single_group_utilitarian_equals_scaled_gesw():
    inst = Instance.build(3, 3, load_lower=1, load_upper=1, supply_upper=1, pair_caps=1)
    a = Allocation(np.eye(3))
    v = np.full(9, 0.5)
    usw = welfare(a, v, inst, WelfareSpec("utilitarian"))
    gesw = welfare(a, v, inst, WelfareSpec("group_egalitarian"))
    assert usw == pytest.approx(3 * gesw)


def test_gesw_is_min_over_groups():
    inst = example_21_instance()
    v = np.array([0.3, 0.0, 0.0, 0.7])
    val = welfare(Allocation(np.eye(2)), v, inst, WelfareSpec("group_egalitarian"))
    assert val == pytest.approx(0.3)


def test_vectorize_row_major():
    assert np.array_equal(vectorize([[1, 2], [3, 4]]), [1, 2, 3, 4])
    rng = np.random.default_rng(0)
    X = rng.random((3, 5))
    assert np.array_equal(devectorize(vectorize(X), 3, 5), X)


def test_group_slices_contiguous_and_gathered():
    contiguous = Instance.build(4, 3, group_ids=[0, 0, 1, 1])
    assert np.array_equal(group_pair_indices(contiguous, 0), np.arange(6))
    gathered = Instance.build(4, 3, group_ids=[0, 1, 0, 1])
    assert np.array_equal(group_pair_indices(gathered, 0), [0, 1, 2, 6, 7, 8])


def _enumerate_integral(inst):
    cells = [range(int(c) + 1) for c in inst.caps_vector().astype(int)]
    for combo in itertools.product(*cells):
        A = np.asarray(combo, dtype=float).reshape(inst.n, inst.m)
        rows, cols = A.sum(1), A.sum(0)
        if (
            np.all(rows >= inst.load_lower)
            and np.all(rows <= inst.load_upper)
            and np.all(cols >= inst.supply_lower)
            and np.all(cols <= inst.supply_upper)
        ):
            yield A


def test_usw_matches_brute_force_sum_on_enumerable_instances():
    rng = np.random.default_rng(4)
    for _ in range(10):
        n, m = rng.integers(1, 3), rng.integers(1, 4)
        inst = Instance.build(
            n, m,
            load_lower=0,
            load_upper=rng.integers(1, 3, n),
            supply_upper=rng.integers(1, 3, m),
            pair_caps=1,
        )
        v = rng.random(n * m)
        for A in itertools.islice(_enumerate_integral(inst), 50):
            got = welfare(Allocation(A, mode="integral"), v, inst)
            assert got == pytest.approx(float(A.reshape(-1) @ v))


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 5), st.integers(0, 2**31 - 1))
def test_gesw_below_weighted_mean(g, seed):
    rng = np.random.default_rng(seed)
    u = rng.random(g)
    w = rng.random(g) + 0.01
    assert u.min() <= float(w @ u) / w.sum() + 1e-12


def test_feasibility_checker_agrees_with_lp_on_random_instances():
    from fairmatch.kernels.projection import feasibility_point, relaxed_polytope

    rng = np.random.default_rng(11)
    checked = 0
    for _ in range(500):
        n, m = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        lo = rng.integers(0, 3, n)
        slo = rng.integers(0, 2, m)
        inst = Instance.build(
            n, m,
            load_lower=lo,
            load_upper=lo + rng.integers(0, 2, n),
            supply_lower=slo,
            supply_upper=slo + rng.integers(0, 3, m),
            pair_caps=rng.integers(0, 3, (n, m)),
        )
        # structural problems are necessary conditions for infeasibility, so on
        # every instance the full verdict must match the LP's
        lp_feasible = feasibility_point(relaxed_polytope(inst)) is not None
        full = validate_instance(inst, check_feasibility=True)
        assert (full == []) == lp_feasible, (full, lp_feasible)
        checked += 1
    assert checked == 500


def test_allocation_feasibility_and_violations():
    inst = example_21_instance()
    good = Allocation(np.eye(2))
    assert good.feasible(inst)
    bad = Allocation(np.ones((2, 2)))
    assert not bad.feasible(inst)
    assert bad.violations(inst)


def test_integral_mode_rejects_fractions():
    with pytest.raises(ValueError):
        Allocation(np.array([[0.5]]), mode="integral")


def test_instance_json_roundtrip():
    inst = Instance.build(
        3, 2,
        load_lower=[0, 1, 0],
        load_upper=[2, 2, 1],
        supply_lower=[0, 1],
        supply_upper=[2, 3],
        pair_caps=[[1, 2], [1, 0], [2, 1]],
        group_ids=[0, 1, 0],
        group_weights=[2.0, 1.0],
    )
    back = instance_from_dict(instance_to_dict(inst))
    assert np.array_equal(back.load_lower, inst.load_lower)
    assert np.array_equal(back.pair_caps, inst.pair_caps)
    assert np.array_equal(back.group_ids, inst.group_ids)
    assert np.array_equal(back.group_weights, inst.group_weights)


def test_allocation_csv_roundtrip():
    alloc = Allocation(np.array([[0.25, 1.0], [0.0, 0.75]]))
    buf = io.StringIO()
    allocation_to_csv(alloc, buf)
    buf.seek(0)
    back = allocation_from_csv(buf)
    assert np.array_equal(back.values, alloc.values)
