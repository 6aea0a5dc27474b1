import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import ALPHA, BETA, DT, K_DELAY, K_DROP, drop_cost, threshold_search
from powermod.model import ModulationModel, Plan, PowerTrace, Tariff, check_feasible
from powermod.offline import (OffConfig, OracleTooLarge, drop_rank, lipschitz_bound,
                              oracle_bruteforce, solve_drop_only, solve_off, threshold_cost,
                              threshold_oracle)

TABLE = Tariff.flat(ALPHA, BETA)
DELAY_ONLY = OffConfig(allow_drop=False, allow_delay=True)
DROP_ONLY = OffConfig(allow_drop=True, allow_delay=False)

# Hand arithmetic: splitting 10 kW into 5 now and 5 one slot later.
#   peak 17.75 * 5 = 88.75, energy 0.046 * 10 / 6, delay 0.02 * 1 * 5 / 6
SPLIT_TOTAL = 17.75 * 5 + 0.046 * 10 / 6 + 0.02 * 5 / 6
ADMIT_TOTAL = 17.75 * 10 + 0.046 * 10 / 6


def test_hand_values():
    assert SPLIT_TOTAL == pytest.approx(88.843333333, abs=1e-8)
    assert ADMIT_TOTAL == pytest.approx(177.576666667, abs=1e-8)


@pytest.mark.parametrize("values", [[10.0, 0.0], [10.0, 0.0, 0.0]])
def test_delay_only_splits_burst_evenly(values):
    tr = PowerTrace(values)
    plan, cost = solve_off(tr, TABLE, ModulationModel(tau=1), DELAY_ONLY)
    assert plan.y_max == pytest.approx(5.0, abs=1e-7)
    assert cost.total == pytest.approx(SPLIT_TOTAL, rel=1e-9)
    assert cost.baseline_total == pytest.approx(ADMIT_TOTAL, rel=1e-12)


def test_both_knobs_prefer_dropping_a_lone_burst():
    # dropping 10 kW for one slot costs 1.20, far below any peak charge
    _, cost = solve_off(PowerTrace([10.0, 0.0, 0.0]), TABLE, ModulationModel(tau=1))
    assert cost.total == pytest.approx(1.2, rel=1e-9)


def test_oracle_matches_split_example():
    tr = PowerTrace([10.0, 0.0, 0.0])
    plan, cost, bound = oracle_bruteforce(tr, TABLE, ModulationModel(tau=1), 3, DELAY_ONLY)
    assert plan.y_max == pytest.approx(5.0)
    assert cost.total == pytest.approx(SPLIT_TOTAL, rel=1e-12)
    assert bound > 0


def test_oracle_returns_admit_all_when_it_is_optimal():
    tr = PowerTrace([3.0, 7.0, 5.0])
    tf = Tariff.flat(ALPHA, 0.0)
    plan, cost, _ = oracle_bruteforce(tr, tf, ModulationModel(tau=1), 5)
    assert np.array_equal(plan.admitted, Plan.admit_all(tr, 1).admitted)
    assert cost.savings_pct == 0.0


def test_oracle_drop_only_recovers_threshold():
    tr = PowerTrace([4.0, 8.0, 8.0, 2.0])
    beta = 0.3  # rank 3 with the table rates
    th, _, closed = solve_drop_only(tr, ALPHA, beta, K_DROP)
    assert th.n == 3 and th.theta == 4.0
    plan, cost, _ = oracle_bruteforce(tr, Tariff.flat(ALPHA, beta), ModulationModel(tau=0), 5,
                                      DROP_ONLY)
    assert plan.y_max == pytest.approx(th.theta)
    assert cost.total == pytest.approx(closed.total, rel=1e-12)


def test_oracle_size_guard():
    with pytest.raises(OracleTooLarge):
        oracle_bruteforce(PowerTrace(np.ones(9)), TABLE, ModulationModel(tau=1), 3)
    with pytest.raises(OracleTooLarge):
        oracle_bruteforce(PowerTrace(np.ones(3)), TABLE, ModulationModel(tau=3), 3)
    with pytest.raises(OracleTooLarge):
        oracle_bruteforce(PowerTrace(np.ones(3)), TABLE, ModulationModel(tau=1), 7)


def test_rank_with_table_rates():
    # 17.75 / ((0.72 - 0.046) / 6) = 158.01...
    assert drop_rank(BETA, ALPHA, K_DROP, DT) == 159
    assert drop_rank(BETA, ALPHA, K_DROP, DT, "raw") == math.ceil(17.75 / 0.674)


def test_rank_snaps_exact_ratios_and_rejects_cheap_drops():
    assert drop_rank(1.0, 0.0, 0.5, 0.2) == 10
    assert drop_rank(0.0, ALPHA, K_DROP, DT) == 0
    with pytest.raises(ValueError):
        drop_rank(BETA, 0.8, K_DROP, DT)
    with pytest.raises(ValueError):
        drop_rank(BETA, ALPHA, K_DROP, DT, "other")


def test_rank_one_admits_everything():
    tr = PowerTrace([5.0, 1.0, 9.0, 3.0])
    th, plan, cost = solve_drop_only(tr, ALPHA, 0.1, K_DROP)
    assert th.n == 1 and th.theta == 9.0
    assert plan.dropped.sum() == 0 and cost.savings_pct == 0


def test_short_trace_drops_everything():
    tr = PowerTrace([5.0, 1.0, 9.0])
    th, plan, cost = solve_drop_only(tr, ALPHA, BETA, K_DROP)
    assert th.theta == 0.0
    assert cost.total == pytest.approx(drop_cost(tr.values, 0.0, ALPHA, BETA, K_DROP, DT))
    assert threshold_search(tr.values, ALPHA, BETA, K_DROP, DT)[0] == 0.0


def test_zero_peak_price_never_drops():
    tr = PowerTrace([5.0, 1.0, 9.0])
    th, plan, _ = solve_drop_only(tr, ALPHA, 0.0, K_DROP)
    assert th.n == 0 and th.theta == math.inf and plan.dropped.sum() == 0


def test_ties_at_threshold_are_admitted():
    tr = PowerTrace([7.0, 7.0, 7.0, 1.0])
    th, plan, _ = solve_drop_only(tr, ALPHA, 0.3, K_DROP)
    assert th.theta == 7.0 and plan.dropped.sum() == 0


def test_package_threshold_oracle_agrees_with_loop_oracle():
    rng = np.random.default_rng(11)
    for _ in range(50):
        v = rng.uniform(0, 100, rng.integers(1, 40)).round(1)
        beta = rng.uniform(0, 3)
        assert threshold_oracle(v, ALPHA, beta, K_DROP, DT) == pytest.approx(
            threshold_search(v, ALPHA, beta, K_DROP, DT), rel=1e-12)


def test_lp_drop_only_matches_closed_form():
    rng = np.random.default_rng(5)
    for _ in range(10):
        tr = PowerTrace(rng.uniform(0, 100, rng.integers(20, 200)))
        beta = rng.uniform(0.1, 5)
        _, _, closed = solve_drop_only(tr, ALPHA, beta, K_DROP)
        _, lp = solve_off(tr, Tariff.flat(ALPHA, beta), ModulationModel(tau=0), DROP_ONLY)
        assert lp.total == pytest.approx(closed.total, rel=1e-8)


def test_drop_only_value_is_convex_in_cap():
    rng = np.random.default_rng(2)
    v = rng.uniform(0, 50, 60)
    caps = np.sort(np.unique(np.concatenate([[0.0], v])))
    costs = np.array([threshold_cost(v, c, ALPHA, 1.0, K_DROP, DT) for c in caps])
    slopes = np.diff(costs) / np.diff(caps)
    assert np.all(np.diff(slopes) >= -1e-9)


def test_solver_output_feasible_without_late_drops():
    rng = np.random.default_rng(8)
    for tau in (1, 3):
        tr = PowerTrace(rng.uniform(0, 100, 40))
        tf = Tariff(rng.uniform(0.02, 0.2, 40), 2.0)
        model = ModulationModel(tau=tau)
        plan, cost = solve_off(tr, tf, model)
        assert check_feasible(plan, tr, model).feasible
        assert plan.late_dropped <= 1e-6
        assert cost.total <= cost.baseline_total + 1e-9


def test_no_knobs_is_baseline():
    tr = PowerTrace([3.0, 9.0, 1.0])
    plan, cost = solve_off(tr, TABLE, ModulationModel(tau=2), OffConfig(False, False))
    assert cost.total == cost.baseline_total


def test_cheap_drop_warns():
    with pytest.warns(RuntimeWarning):
        solve_off(PowerTrace([1.0, 2.0]), Tariff.flat(0.9, 1.0), ModulationModel(tau=0), DROP_ONLY)


small_traces = st.lists(st.floats(0, 100, allow_nan=False), min_size=1, max_size=40)


@settings(max_examples=80, deadline=None)
@given(small_traces, st.floats(0, 5), st.randoms(use_true_random=False))
def test_drop_only_cost_permutation_invariant(values, beta, rnd):
    perm = list(values)
    rnd.shuffle(perm)
    a = solve_drop_only(PowerTrace(values), ALPHA, beta, K_DROP)[2].total
    b = solve_drop_only(PowerTrace(perm), ALPHA, beta, K_DROP)[2].total
    assert a == pytest.approx(b, rel=1e-12, abs=1e-12)


@settings(max_examples=80, deadline=None)
@given(small_traces, st.floats(0, 5))
def test_closed_form_matches_threshold_search(values, beta):
    th, _, cost = solve_drop_only(PowerTrace(values), ALPHA, beta, K_DROP)
    theta, best = threshold_search(values, ALPHA, beta, K_DROP, DT)
    if th.n > 0 and th.theta != theta:
        # only a tie within the search tolerance may pick a different cap
        other = drop_cost(values, th.theta, ALPHA, beta, K_DROP, DT)
        assert other == pytest.approx(best, rel=1e-12, abs=1e-300)
    assert cost.total == pytest.approx(best, rel=1e-12, abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(0, 100, allow_nan=False), min_size=2, max_size=12),
       st.integers(0, 3), st.floats(0.1, 20))
def test_more_knobs_never_cost_more(values, tau, beta):
    tr = PowerTrace(values)
    tf = Tariff.flat(ALPHA, beta)
    model = ModulationModel(tau=tau)
    both = solve_off(tr, tf, model)[1].total
    drop = solve_off(tr, tf, model, DROP_ONLY)[1].total
    delay = solve_off(tr, tf, model, DELAY_ONLY)[1].total
    base = solve_off(tr, tf, model, OffConfig(False, False))[1].total
    tol = 1e-7 * max(1.0, base)
    assert both <= min(drop, delay) + tol
    assert max(drop, delay) <= base + tol


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(0, 100, allow_nan=False), min_size=2, max_size=12), st.integers(0, 2))
def test_longer_delay_tolerance_never_costs_more(values, tau):
    tr = PowerTrace(values)
    short = solve_off(tr, TABLE, ModulationModel(tau=tau), DELAY_ONLY)[1].total
    longer = solve_off(tr, TABLE, ModulationModel(tau=tau + 1), DELAY_ONLY)[1].total
    assert longer <= short + 1e-7 * short


def test_lp_between_oracle_and_oracle_minus_bound():
    rng = np.random.default_rng(21)
    for _ in range(6):
        T = int(rng.integers(2, 6))
        tr = PowerTrace(rng.uniform(0, 10, T))
        tf = Tariff(rng.uniform(0.02, 0.2, T), float(rng.uniform(0, 2)))
        model = ModulationModel(k_delay=K_DELAY, tau=int(rng.integers(0, 3)))
        _, oc, bound = oracle_bruteforce(tr, tf, model, 5)
        assert bound == pytest.approx(lipschitz_bound(tr, tf, model, 5))
        lp = solve_off(tr, tf, model)[1].total
        assert lp <= oc.total + 1e-8
        assert lp >= oc.total - bound
