import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import ALPHA, BETA, DT, K_DROP, ondrop_resort, rank_from_rates
from powermod.model import ModulationModel, PowerTrace, Tariff, check_feasible
from powermod.offline import OffConfig, solve_drop_only, solve_off
from powermod.online import (MpcConfig, OnDropState, ondrop_competitive_check, ondrop_step,
                             onmpc_run, prefix_deltas, run_ondrop, stream_ondrop)
from powermod.workloads import generate, preset

BETA_RANK2 = 0.2  # 0.2 / ((0.72 - 0.046) / 6) = 1.78 -> rank 2


def test_rank_two_hand_trace():
    run = run_ondrop(PowerTrace([5.0, 3.0, 7.0]), ALPHA, BETA_RANK2, K_DROP)
    assert run.n == 2
    assert run.thetas.tolist() == [0.0, 3.0, 5.0]
    assert run.plan.admitted[:, 0].tolist() == [0.0, 3.0, 5.0]
    assert run.plan.dropped[:, 0].tolist() == [5.0, 0.0, 2.0]


def test_step_matches_resorting_reference():
    rng = np.random.default_rng(4)
    for n in (1, 2, 5, 30):
        v = rng.uniform(0, 100, 120)
        state = OnDropState.start(n)
        adm = []
        for p in v:
            a, _, state = ondrop_step(state, float(p))
            adm.append(a)
        ref_adm, ref_theta = ondrop_resort(v, n)
        assert np.array_equal(np.array(adm), ref_adm)
        assert state.theta == ref_theta[-1]


def test_constant_trace_threshold_reaches_level_at_rank():
    n = rank_from_rates(ALPHA, BETA, K_DROP, DT)
    run = run_ondrop(PowerTrace(np.full(200, 40.0)), ALPHA, BETA, K_DROP)
    assert run.n == n == 159
    assert np.all(run.thetas[:n - 1] == 0) and np.all(run.thetas[n - 1:] == 40.0)
    assert run.plan.dropped[n - 1:].sum() == 0


def test_constant_trace_ratio_closed_form():
    # online drops the first n-1 slots, offline admits everything
    n, c = 159, 100.0
    rep = ondrop_competitive_check(PowerTrace(np.full(n, c)), ALPHA, BETA, K_DROP)
    on = BETA * c + DT * ALPHA * c + DT * K_DROP * (n - 1) * c
    off = BETA * c + DT * ALPHA * n * c
    assert rep.online_cost == pytest.approx(on, rel=1e-12)
    assert rep.offline_cost == pytest.approx(off, rel=1e-12)
    assert 1 < rep.ratio < 2 - 1 / n
    assert rep.holds


def test_staircase_shortfall_is_tight_at_rank():
    n = 159
    values = 100.0 + 0.01 * np.arange(n)
    run = run_ondrop(PowerTrace(values), ALPHA, BETA, K_DROP)
    deltas, allow = prefix_deltas(values, run.thetas, n)
    assert run.thetas[-1] == 100.0
    assert deltas[0] == pytest.approx((n - 1) * 100.0, rel=1e-12)
    assert deltas[0] == pytest.approx(allow[0], rel=1e-12)


def test_zero_peak_price_is_degenerate():
    run = run_ondrop(PowerTrace([1.0, 5.0]), ALPHA, 0.0, K_DROP)
    assert run.n == 0 and run.plan.dropped.sum() == 0
    assert math.isinf(run.thetas[-1])


def test_step_rejects_bad_demand():
    with pytest.raises(ValueError):
        ondrop_step(OnDropState.start(2), -1.0)
    with pytest.raises(ValueError):
        ondrop_step(OnDropState.start(2), math.nan)


def test_stream_output():
    lines = ["slot,power_kw", "0,5", "1,3", "", "2,7"]
    out = list(stream_ondrop(lines, ALPHA, BETA_RANK2, K_DROP))
    assert out == ["slot,admitted_kw,dropped_kw,theta", "0,0.0,5.0,0.0", "1,3.0,0.0,3.0",
                   "2,5.0,2.0,5.0"]


def test_stream_rejects_gaps_and_junk():
    with pytest.raises(ValueError):
        list(stream_ondrop(["0,1", "2,1"], ALPHA, BETA, K_DROP))
    with pytest.raises(ValueError):
        list(stream_ondrop(["0,1,2"], ALPHA, BETA, K_DROP))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0, 1000, allow_nan=False), min_size=1, max_size=300),
       st.floats(0.05, 20))
def test_threshold_nondecreasing_and_converges(values, beta):
    tr = PowerTrace(values)
    run = run_ondrop(tr, ALPHA, beta, K_DROP)
    assert np.all(np.diff(run.thetas) >= 0)
    assert run.thetas[-1] == solve_drop_only(tr, ALPHA, beta, K_DROP)[0].theta


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0, 1000, allow_nan=False), min_size=1, max_size=80),
       st.floats(0.05, 3))
def test_online_never_admits_more_than_any_prefix_optimum(values, beta):
    tr = PowerTrace(values)
    run = run_ondrop(tr, ALPHA, beta, K_DROP)
    adm = run.plan.admitted[:, 0]
    for m in range(tr.T):
        prefix = PowerTrace(tr.values[:m + 1])
        _, plan, _ = solve_drop_only(prefix, ALPHA, beta, K_DROP)
        assert np.all(adm[:m + 1] <= plan.admitted[:, 0] + 1e-12)


def test_mpc_full_horizon_reproduces_offline():
    tr = generate(preset("mediaserver_like", days=1))
    train = generate(preset("mediaserver_like", seed=1, days=1))
    tf = Tariff.flat(ALPHA, BETA)
    model = ModulationModel()
    _, off = solve_off(tr, tf, model)
    plan, mpc = onmpc_run(tr, tf, model, MpcConfig(H=tr.T, h=tr.T), train)
    assert check_feasible(plan, tr, model).feasible
    assert mpc.total == pytest.approx(off.total, rel=1e-6)


def test_mpc_without_knobs_or_lookahead_is_baseline():
    tr = generate(preset("google_like", days=1))
    tf = Tariff.flat(ALPHA, BETA)
    _, cost = onmpc_run(tr, tf, ModulationModel(), MpcConfig(H=1, h=1), tr, OffConfig(False, False))
    assert cost.total == pytest.approx(cost.baseline_total, rel=1e-12)


@pytest.mark.parametrize("predictor", ["time_of_day", "mean"])
def test_mpc_sits_between_offline_and_baseline(predictor):
    tr = generate(preset("facebook_like", days=2))
    train = generate(preset("facebook_like", seed=1, days=2))
    tf = Tariff.flat(ALPHA, BETA)
    model = ModulationModel()
    _, off = solve_off(tr, tf, model)
    plan, mpc = onmpc_run(tr, tf, model, MpcConfig(H=144, h=36, predictor=predictor), train)
    assert check_feasible(plan, tr, model).feasible
    assert off.total <= mpc.total + 1e-9 * off.total
    assert mpc.total <= mpc.baseline_total


def test_mpc_config_validation():
    with pytest.raises(ValueError):
        MpcConfig(H=10, h=11).validate(100)
    with pytest.raises(ValueError):
        MpcConfig(H=200, h=1).validate(100)
    with pytest.raises(ValueError):
        MpcConfig(predictor="oracle").validate(1000)
    with pytest.raises(ValueError):
        MpcConfig(peak_weighting="half").validate(1000)
    assert MpcConfig(peak_weighting="full").window_peak_price(BETA, 10, 100) == BETA
    assert MpcConfig().window_peak_price(BETA, 10, 100) == pytest.approx(BETA / 10)


def test_mpc_exact_windows_shorter_than_trace():
    tr = generate(preset("mediaserver_like", days=1))
    tf = Tariff.flat(ALPHA, BETA)
    model = ModulationModel()
    _, off = solve_off(tr, tf, model)
    plan, mpc = onmpc_run(tr, tf, model, MpcConfig(H=48, h=48), tr)
    assert check_feasible(plan, tr, model).feasible
    assert off.total <= mpc.total + 1e-9 * off.total <= mpc.baseline_total
