import io
import json

import numpy as np
import pytest

from powermod.io import (CsvFormatError, cost_to_json, plan_to_string, read_plan_csv,
                         read_price_csv, read_trace_csv, write_plan_csv, write_price_csv,
                         write_trace_csv)
from powermod.model import ModulationModel, PowerTrace, Tariff, evaluate_cost
from powermod.offline import solve_off


@pytest.mark.parametrize("text", [
    "",
    "slot,kw\n0,1\n",
    "slot,power_kw\n",
    "slot,power_kw\n0,1\n2,3\n",
    "slot,power_kw\n0,-1\n",
    "slot,power_kw\n0,nan\n",
    "slot,power_kw\n0,abc\n",
    "slot,power_kw\n0,1,2\n",
    "slot,power_kw\n1,1\n",
])
def test_trace_reader_is_strict(text):
    with pytest.raises(CsvFormatError):
        read_trace_csv(io.StringIO(text))


def test_trace_round_trip_is_exact(tmp_path):
    tr = PowerTrace(np.random.default_rng(3).uniform(0, 1000, 50))
    path = tmp_path / "t.csv"
    write_trace_csv(path, tr)
    back = read_trace_csv(path)
    assert np.array_equal(back.values, tr.values)
    assert path.read_text().startswith("slot,power_kw\n0,")


def test_price_round_trip(tmp_path):
    prices = np.array([0.022, 0.1, 0.163])
    path = tmp_path / "p.csv"
    write_price_csv(path, prices)
    assert np.array_equal(read_price_csv(path), prices)
    with pytest.raises(CsvFormatError):
        read_price_csv(io.StringIO("slot,power_kw\n0,1\n"))


def test_plan_round_trip_preserves_cost():
    tr = PowerTrace([10.0, 0.0, 4.0, 8.0, 2.0, 0.0])
    tf = Tariff.flat(0.046, 17.75)
    model = ModulationModel(tau=2)
    plan, cost = solve_off(tr, tf, model)
    text = plan_to_string(plan)
    back = read_plan_csv(io.StringIO(text), tr.T, 2, plan.y_max)
    assert np.allclose(back.admitted, plan.admitted)
    assert np.allclose(back.residuals, plan.residuals)
    assert evaluate_cost(back, tr, tf, model).total == pytest.approx(cost.total, rel=1e-12)


def test_plan_reader_rejects_out_of_window_rows():
    bad = "t,origin_i,admitted_kw,dropped_kw,residual_kw\n0,1,1,0,0\n"
    with pytest.raises(CsvFormatError):
        read_plan_csv(io.StringIO(bad), 2, 1)
    late = "t,origin_i,admitted_kw,dropped_kw,residual_kw\n1,0,1,0,3\n"
    with pytest.raises(CsvFormatError):
        read_plan_csv(io.StringIO(late), 2, 1)


def test_plan_csv_rows_cover_every_origin_in_window():
    tr = PowerTrace([1.0, 2.0, 3.0])
    plan, _ = solve_off(tr, Tariff.flat(0.046, 17.75), ModulationModel(tau=1))
    buf = io.StringIO()
    write_plan_csv(buf, plan)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "t,origin_i,admitted_kw,dropped_kw,residual_kw"
    assert [tuple(map(int, ln.split(",")[:2])) for ln in lines[1:]] == [(0, 0), (1, 1), (1, 0), (2, 2), (2, 1)]


def test_cost_json_has_all_fields():
    tr = PowerTrace([1.0, 2.0])
    cost = evaluate_cost(solve_off(tr, Tariff.flat(0.046, 17.75), ModulationModel(tau=0))[0],
                         tr, Tariff.flat(0.046, 17.75), ModulationModel(tau=0))
    payload = json.loads(cost_to_json(cost, n=3))
    assert payload["n"] == 3
    assert payload["total"] == cost.total
    assert set(payload) >= {"energy_cost", "peak_cost", "drop_loss", "delay_loss", "savings_pct"}
