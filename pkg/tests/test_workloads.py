import dataclasses
import json

import numpy as np
import pytest

from powermod.model import PowerTrace, workload_stats
from powermod.workloads import (PRESETS, GeneratorSpec, Surge, correlated_prices,
                                extract_time_of_day, generate, hold_hourly, preset,
                                synthetic_hourly_prices)


def test_flat_noiseless_profile_is_constant():
    spec = GeneratorSpec(tuple([50.0] * 144), 0.0, 3, 100.0)
    tr = generate(spec)
    s = workload_stats(tr)
    assert tr.T == 432 and s.par == 1.0 and s.p70 == 1.0


def test_generation_is_deterministic_per_seed():
    a = generate(preset("google_like", seed=3, days=2))
    b = generate(preset("google_like", seed=3, days=2))
    c = generate(preset("google_like", seed=4, days=2))
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)


def test_rejects_profile_above_peak_and_bad_surge():
    with pytest.raises(ValueError):
        generate(GeneratorSpec((10.0, 200.0), 0.0, 1, 100.0))
    with pytest.raises(ValueError):
        generate(GeneratorSpec((10.0,) * 144, 0.0, 1, 100.0, Surge(5, 0, 1, 10.0)))


def test_google_like_is_wide_and_shallow():
    s = workload_stats(generate(preset("google_like")))
    assert s.par < 1.5 and s.p70 > 0.5
    assert s.max_kw <= 3000.0


def test_synthetic_surge_reaches_its_peak_and_sharpens_stats():
    spec = preset("synthetic_like")
    tr = generate(spec)
    base = generate(spec.without_surge())
    assert tr.values.max() == 5022.0
    s, b = workload_stats(tr), workload_stats(base)
    assert s.par > b.par and s.p70 < b.p70
    assert spec.surge.day == 14  # the fifteenth day


def test_presets_cover_thirty_days_at_ten_minutes():
    for name in PRESETS:
        tr = generate(preset(name))
        assert tr.T == 4320 and tr.slot_hours == pytest.approx(1 / 6)
        assert tr.values.min() >= 0
    with pytest.raises(ValueError):
        preset("nope")


def test_time_of_day_round_trip_without_noise():
    spec = dataclasses.replace(preset("facebook_like", days=4), noise_sigma=0.0)
    profile, sigma = extract_time_of_day(generate(spec))
    assert np.allclose(profile, spec.profile, atol=1e-9) and sigma == pytest.approx(0.0, abs=1e-9)


def test_time_of_day_recovers_noise_level():
    spec = dataclasses.replace(preset("mediaserver_like"), noise_sigma=50.0)
    _, sigma = extract_time_of_day(generate(spec))
    assert abs(sigma - 50.0) <= 5.0


def test_time_of_day_needs_whole_days():
    with pytest.raises(ValueError):
        extract_time_of_day(PowerTrace(np.ones(100)))
    prof, sigma = extract_time_of_day(PowerTrace(np.full(288, 7.0)))
    assert np.all(prof == 7.0) and sigma == 0.0


@pytest.mark.parametrize("sign,expected", [("positive", 1.0), ("negative", -1.0)])
def test_correlated_prices_are_perfectly_correlated(sign, expected):
    tr = generate(preset("mediaserver_like", days=2))
    tf = correlated_prices(tr, 0.022, 0.183, sign)
    prices = tf.prices(tr.T)
    assert np.corrcoef(tr.values, prices)[0, 1] == pytest.approx(expected, abs=1e-12)
    top = int(tr.values.argmax())
    assert prices[top] == pytest.approx(0.183 if sign == "positive" else 0.022)
    assert prices.min() == pytest.approx(0.022) and prices.max() == pytest.approx(0.183)


def test_correlated_prices_reject_constant_trace_and_bad_sign():
    with pytest.raises(ValueError):
        correlated_prices(PowerTrace([1.0, 1.0]))
    with pytest.raises(ValueError):
        correlated_prices(PowerTrace([1.0, 2.0]), sign="zero")


def test_hourly_prices_hold_and_stay_in_range():
    hourly = synthetic_hourly_prices(days=2, seed=1)
    assert hourly.size == 48 and hourly.min() >= 0.022 and hourly.max() <= 0.163
    slots = hold_hourly(hourly)
    assert slots.size == 288 and np.all(slots[:6] == hourly[0])


def test_spec_json_round_trip():
    spec = preset("synthetic_like", seed=2, days=20)
    back = GeneratorSpec.from_dict(json.loads(spec.to_json()))
    assert back == spec
