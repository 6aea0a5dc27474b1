"""Experiment harness: algorithm x workload x tariff x knob-set grids.

A scenario is a JSON object; every field is optional::

    {
      "workloads": ["google_like", {"preset": "synthetic_like", "seed": 3},
                    {"file": "trace.csv"}],
      "days": 30, "seed": 0, "training_seed": 1,
      "tariff": {"kind": "peak", "alpha": 0.046, "beta": 17.75},
      "model": {"k_drop": 0.72, "k_delay": 0.02, "delay_exponent": 2, "tau": 6},
      "knobs": ["drop", "delay", "both"],
      "algorithms": ["OFF", "ON_MPC", "SDP_Drop", "ON_Drop", "SDP_Lin", "SDP_full"],
      "mpc": {"H": 144, "h": 36, "predictor": "time_of_day", "peak_weighting": "remaining"},
      "sdp": {"levels": 21, "state_budget": 1000000, "holding_cost": 0.0},
      "workers": 1
    }

Tariff kinds: ``peak`` (flat ``alpha`` plus ``beta``), ``time_varying``
(hourly prices from ``prices_file`` or generated with ``price_seed``, each
held for six slots) and ``correlated`` (``sign``, ``alpha_min``,
``alpha_max``). Knob sets select which algorithms apply: dropping only runs
OFF, ON_MPC, SDP_Drop and ON_Drop; delaying only and both run OFF, ON_MPC,
SDP_Lin and SDP_full.

Results carry no timing information, so reruns with the same configuration
produce identical files; wall times and the run timestamp go to a separate
metadata file.
"""

from __future__ import annotations

import csv
import datetime as _dt
import json
import logging
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Optional

import numpy as np

from .io import read_price_csv, read_trace_csv
from .model import ModulationModel, PowerTrace, Tariff, evaluate_cost
from .offline import OffConfig, solve_drop_only, solve_off
from .online import MpcConfig, onmpc_run, run_ondrop
from .sdp import (DiscreteModel, SdpBudgetError, rollout_policy, solve_sdp_drop,
                  solve_sdp_full, solve_sdp_lin, time_of_day_model)
from .workloads import (PRESETS, correlated_prices, generate, hold_hourly, preset,
                        synthetic_hourly_prices)

log = logging.getLogger(__name__)

RESULTS_VERSION = 1
KNOBS = {"drop": OffConfig(True, False), "delay": OffConfig(False, True), "both": OffConfig(True, True)}
ALGORITHMS = {
    "drop": ("OFF", "ON_MPC", "SDP_Drop", "ON_Drop"),
    "delay": ("OFF", "ON_MPC", "SDP_Lin", "SDP_full"),
    "both": ("OFF", "ON_MPC", "SDP_Lin", "SDP_full"),
}
COLUMNS = ("workload", "tariff", "knobs", "algorithm", "status", "savings_pct", "total",
           "energy_cost", "peak_cost", "drop_loss", "delay_loss", "baseline_total",
           "late_dropped_kw", "note")

DEFAULT_SCENARIO = {
    "workloads": list(PRESETS),
    "days": 30,
    "seed": 0,
    "training_seed": 1,
    "slot_hours": 1.0 / 6.0,
    "tariff": {"kind": "peak", "alpha": 0.046, "beta": 17.75},
    "model": {"k_drop": 0.72, "k_delay": 0.02, "delay_exponent": 2, "tau": 6},
    "knobs": ["drop", "delay", "both"],
    "algorithms": ["OFF", "ON_MPC", "SDP_Drop", "ON_Drop", "SDP_Lin", "SDP_full"],
    "mpc": {"H": 144, "h": 36, "predictor": "time_of_day", "peak_weighting": "remaining"},
    "sdp": {"levels": 21, "state_budget": 10 ** 6, "holding_cost": 0.0},
    "workers": 1,
}


def load_scenario(cfg: Optional[dict] = None) -> dict:
    """Fill missing scenario fields with defaults (one level of nesting)."""
    out = json.loads(json.dumps(DEFAULT_SCENARIO))
    for key, val in (cfg or {}).items():
        if key not in out:
            raise ValueError(f"unknown scenario field {key!r}")
        if isinstance(out[key], dict) and isinstance(val, dict) and key != "tariff":
            out[key].update(val)
        else:
            out[key] = val
    for k in out["knobs"]:
        if k not in KNOBS:
            raise ValueError(f"unknown knob set {k!r}")
    known = {a for algs in ALGORITHMS.values() for a in algs}
    for a in out["algorithms"]:
        if a not in known:
            raise ValueError(f"unknown algorithm {a!r}")
    return out


def _workload_key(w) -> tuple:
    if isinstance(w, str):
        return ("preset", w, None)
    if "preset" in w:
        return ("preset", w["preset"], w.get("seed"))
    if "file" in w:
        return ("file", w["file"], None)
    raise ValueError(f"cannot interpret workload {w!r}")


def workload_name(w) -> str:
    kind, name, seed = _workload_key(w)
    if kind == "file":
        return Path(name).stem
    return name if seed is None else f"{name}@{seed}"


@lru_cache(maxsize=32)
def _load_workload(kind: str, name: str, seed, days: int, default_seed: int,
                   training_seed: int, slot_hours: float) -> tuple[PowerTrace, PowerTrace]:
    """Realized trace and the surge-free training trace used by predictors."""
    if kind == "file":
        trace = read_trace_csv(name, slot_hours)
        return trace, trace
    s = preset(name, seed=default_seed if seed is None else seed, days=days)
    train = preset(name, seed=training_seed, days=days).without_surge()
    return generate(s), generate(train)


def build_tariff(spec: dict, trace: PowerTrace) -> Tariff:
    kind = spec.get("kind", "peak")
    if kind == "peak":
        return Tariff.flat(spec.get("alpha", 0.046), spec.get("beta", 17.75))
    if kind == "time_varying":
        if "prices_file" in spec:
            hourly = read_price_csv(spec["prices_file"])
        else:
            hourly = synthetic_hourly_prices(days=trace.T // 144 + 1, seed=spec.get("price_seed", 0))
        prices = hold_hourly(hourly, int(round(1 / trace.slot_hours)))
        if prices.size < trace.T:
            raise ValueError(f"price series covers {prices.size} slots, trace needs {trace.T}")
        return Tariff(prices[:trace.T], spec.get("beta", 0.0))
    if kind == "correlated":
        return correlated_prices(trace, spec.get("alpha_min", 0.022), spec.get("alpha_max", 0.183),
                                 spec.get("sign", "positive"), spec.get("beta", 0.0))
    raise ValueError(f"unknown tariff kind {kind!r}")


def tariff_name(spec: dict) -> str:
    kind = spec.get("kind", "peak")
    if kind == "correlated":
        return f"correlated_{spec.get('sign', 'positive')}"
    return kind


@dataclass(frozen=True)
class Cell:
    workload: object
    knobs: str
    algorithm: str


def cells(scenario: dict) -> list:
    out = []
    for w in scenario["workloads"]:
        for k in scenario["knobs"]:
            for a in ALGORITHMS[k]:
                if a in scenario["algorithms"]:
                    out.append(Cell(w, k, a))
    return out


def _run_algorithm(alg: str, knobs: str, trace: PowerTrace, training: PowerTrace,
                   tariff: Tariff, model: ModulationModel, scenario: dict):
    cfg = KNOBS[knobs]
    sdp_cfg = scenario["sdp"]
    if alg == "OFF":
        return solve_off(trace, tariff, model, cfg)
    if alg == "ON_MPC":
        return onmpc_run(trace, tariff, model, MpcConfig(**scenario["mpc"]), training, cfg)
    if alg in ("ON_Drop", "SDP_Drop") and not tariff.is_flat:
        raise _Skip("requires a flat energy price")
    alpha = float(tariff.energy_prices[0])
    if alg == "ON_Drop":
        run = run_ondrop(trace, alpha, tariff.peak_price, model.k_drop, tau=model.tau)
        return run.plan, evaluate_cost(run.plan, trace, tariff, model)
    demand = time_of_day_model(training, trace.T, sdp_cfg["levels"])
    price = DiscreteModel.from_tariff(tariff, trace.T)
    if alg == "SDP_Drop":
        table = solve_sdp_drop(demand, price, tariff.peak_price, model.k_drop, trace.slot_hours)
    elif alg == "SDP_Lin":
        table = solve_sdp_lin(demand, price, tariff.peak_price, model, trace.slot_hours,
                              cfg.allow_drop, sdp_cfg["state_budget"], sdp_cfg.get("holding_cost", 0.0))
    else:
        try:
            table = solve_sdp_full(demand, price, tariff.peak_price, model, trace.slot_hours,
                                   cfg.allow_drop, sdp_cfg["state_budget"])
        except SdpBudgetError as exc:
            raise _Skip(str(exc)) from None
    return rollout_policy(table, trace, tariff, model)


class _Skip(Exception):
    pass


def run_cell(cell: Cell, scenario: dict) -> tuple[dict, float]:
    """Run one cell; failures are captured in the row instead of raised."""
    kind, name, seed = _workload_key(cell.workload)
    row = {c: "" for c in COLUMNS}
    row.update(workload=workload_name(cell.workload), tariff=tariff_name(scenario["tariff"]),
               knobs=cell.knobs, algorithm=cell.algorithm)
    start = time.perf_counter()
    try:
        trace, training = _load_workload(kind, name, seed, scenario["days"], scenario["seed"],
                                         scenario["training_seed"], scenario["slot_hours"])
        tariff = build_tariff(scenario["tariff"], trace)
        model = ModulationModel(**scenario["model"])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            plan, cost = _run_algorithm(cell.algorithm, cell.knobs, trace, training, tariff,
                                        model, scenario)
        row.update(status="ok", savings_pct=cost.savings_pct, total=cost.total,
                   energy_cost=cost.energy_cost, peak_cost=cost.peak_cost,
                   drop_loss=cost.drop_loss, delay_loss=cost.delay_loss,
                   baseline_total=cost.baseline_total, late_dropped_kw=plan.late_dropped)
    except _Skip as exc:
        row.update(status="skipped", note=str(exc))
    except Exception as exc:  # recorded per cell; the rest of the grid still runs
        log.exception("cell %s failed", cell)
        row.update(status="failed", note=f"{type(exc).__name__}: {exc}")
    return row, time.perf_counter() - start


def _run_cell_star(args):
    return run_cell(*args)


def run_scenario(cfg: Optional[dict] = None) -> tuple[list, list]:
    """Run every cell of a scenario; returns result rows and per-cell wall times."""
    scenario = load_scenario(cfg)
    todo = cells(scenario)
    workers = int(scenario.get("workers", 1))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(_run_cell_star, [(c, scenario) for c in todo]))
    else:
        out = [run_cell(c, scenario) for c in todo]
    return [r for r, _ in out], [w for _, w in out]


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def write_rows_csv(rows: list, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in COLUMNS])


def write_results(rows: list, walls: list, out_dir, scenario: Optional[dict] = None) -> dict:
    """Write ``results.csv``, ``results.json`` and ``metadata.json`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "results.csv", "w", newline="") as fh:
        write_rows_csv(rows, fh)
    payload = {"version": RESULTS_VERSION, "scenario": load_scenario(scenario),
               "rows": [{c: r[c] for c in COLUMNS} for r in rows]}
    (out / "results.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    meta = {"timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
            "wall_seconds": [{"workload": r["workload"], "knobs": r["knobs"],
                              "algorithm": r["algorithm"], "seconds": s}
                             for r, s in zip(rows, walls)]}
    (out / "metadata.json").write_text(json.dumps(meta, indent=2) + "\n")
    return payload


def savings_table(rows: list) -> dict:
    """``{(workload, knobs, algorithm): savings_pct}`` for successful cells."""
    return {(r["workload"], r["knobs"], r["algorithm"]): r["savings_pct"]
            for r in rows if r["status"] == "ok"}
