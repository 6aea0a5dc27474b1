"""Online controllers: threshold dropping and receding-horizon MPC."""

from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional

import numpy as np

from .model import CostBreakdown, ModulationModel, Plan, PowerTrace, Tariff, evaluate_cost
from .offline import (OffConfig, drop_rank, solve_drop_only, solve_window,
                      threshold_cost)
from .workloads import extract_time_of_day

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class OnDropState:
    """Online threshold state.

    ``top`` is a min-heap holding the ``n`` largest demands seen so far, so its
    root is the n-th largest once ``seen >= n``.
    """

    n: int
    theta: float = 0.0
    seen: int = 0
    top: tuple = ()

    @property
    def degenerate(self) -> bool:
        """True when dropping is never worthwhile and everything is admitted."""
        return self.n <= 0

    @classmethod
    def start(cls, n: int) -> "OnDropState":
        return cls(n, math.inf if n <= 0 else 0.0)


def ondrop_step(state: OnDropState, p_t: float) -> tuple[float, float, OnDropState]:
    """Insert ``p_t``, refresh the threshold, then admit up to it."""
    if p_t < 0 or not math.isfinite(p_t):
        raise ValueError(f"invalid demand {p_t!r}")
    if state.degenerate:
        return p_t, 0.0, OnDropState(state.n, math.inf, state.seen + 1, ())
    heap = list(state.top)
    if len(heap) < state.n:
        heapq.heappush(heap, p_t)
    elif p_t > heap[0]:
        heapq.heapreplace(heap, p_t)
    seen = state.seen + 1
    theta = heap[0] if seen >= state.n else 0.0
    admitted = min(p_t, theta)
    return admitted, p_t - admitted, OnDropState(state.n, theta, seen, tuple(heap))


@dataclass
class OnDropRun:
    plan: Plan
    cost: CostBreakdown
    thetas: np.ndarray
    n: int


def run_ondrop(trace: PowerTrace, alpha: float, beta: float, k_drop: float,
               normalization: str = "slot", tau: int = 0) -> OnDropRun:
    n = drop_rank(beta, alpha, k_drop, trace.slot_hours, normalization)
    state = OnDropState.start(n)
    if state.degenerate:
        log.warning("peak price is zero: online dropping admits everything")
    T = trace.T
    a = np.zeros((T, tau + 1))
    d = np.zeros_like(a)
    thetas = np.empty(T)
    for t, p in enumerate(trace.values):
        a[t, 0], d[t, 0], state = ondrop_step(state, float(p))
        thetas[t] = state.theta
    plan = Plan(a, d, np.zeros((T + 1, tau + 1)), float(a[:, 0].max()))
    model = ModulationModel(k_drop=k_drop, k_delay=0.0, tau=tau)
    cost = evaluate_cost(plan, trace, Tariff.flat(alpha, beta), model)
    return OnDropRun(plan, cost, thetas, n)


def stream_ondrop(lines: Iterable[str], alpha: float, beta: float, k_drop: float,
                  slot_hours: float = 1.0 / 6.0, normalization: str = "slot") -> Iterator[str]:
    """Consume ``slot,power_kw`` lines and yield ``slot,admitted_kw,dropped_kw,theta`` lines."""
    n = drop_rank(beta, alpha, k_drop, slot_hours, normalization)
    state = OnDropState.start(n)
    expected = 0
    yield "slot,admitted_kw,dropped_kw,theta"
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        if lineno == 1 and line.replace(" ", "") == "slot,power_kw":
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise ValueError(f"line {lineno}: expected slot,power_kw")
        slot, p = int(parts[0]), float(parts[1])
        if slot != expected:
            raise ValueError(f"line {lineno}: expected slot {expected}, got {slot}")
        expected += 1
        adm, drp, state = ondrop_step(state, p)
        yield f"{slot},{adm!r},{drp!r},{state.theta!r}"


@dataclass(frozen=True)
class CompetitiveReport:
    ratio: float
    bound: float
    n: int
    online_cost: float
    offline_cost: float
    max_delta_excess: float

    @property
    def holds(self) -> bool:
        return self.ratio <= self.bound + 1e-9 and self.ratio >= 1 - 1e-9 and self.max_delta_excess <= 1e-9


def prefix_deltas(values, thetas, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Admission shortfall of the online controller against each prefix optimum.

    For every prefix end ``m`` (0-based, ``m >= n - 1``), returns the shortfall
    ``sum_t min(p_t, theta_m) - sum_t min(p_t, theta_t)`` over ``t <= m`` and the
    allowance ``(n - 1) * theta_m``.
    """
    p = np.asarray(values, dtype=float)
    thetas = np.asarray(thetas, dtype=float)
    online_cum = np.cumsum(np.minimum(p, thetas))
    ms = np.arange(max(n - 1, 0), p.size)
    deltas = np.array([np.minimum(p[:m + 1], thetas[m]).sum() - online_cum[m] for m in ms])
    return deltas, (n - 1) * thetas[ms]


def ondrop_competitive_check(trace: PowerTrace, alpha: float, beta: float,
                             k_drop: float) -> CompetitiveReport:
    """Cost ratio of online dropping against the offline drop-only optimum."""
    run = run_ondrop(trace, alpha, beta, k_drop)
    _, _, off = solve_drop_only(trace, alpha, beta, k_drop)
    n = run.n
    bound = 2.0 - 1.0 / n if n > 0 else 1.0
    if off.total > 0:
        ratio = run.cost.total / off.total
    else:
        ratio = 1.0 if run.cost.total == 0 else math.inf
    excess = 0.0
    if n > 0:
        deltas, allow = prefix_deltas(trace.values, run.thetas, n)
        if deltas.size:
            excess = float((deltas - allow).max())
    return CompetitiveReport(ratio, bound, n, run.cost.total, off.total, excess)


# --- model predictive control ----------------------------------------------

@dataclass(frozen=True)
class MpcConfig:
    H: int = 144
    h: int = 36
    predictor: str = "time_of_day"
    peak_weighting: str = "remaining"

    def validate(self, T: int) -> None:
        if not 1 <= self.h <= self.H:
            raise ValueError(f"need 1 <= h <= H, got h={self.h}, H={self.H}")
        if self.H > T:
            raise ValueError(f"rolling horizon H={self.H} exceeds trace length {T}")
        if self.predictor not in ("time_of_day", "mean"):
            raise ValueError(f"unknown predictor {self.predictor!r}")
        if self.peak_weighting not in ("remaining", "full"):
            raise ValueError(f"unknown peak weighting {self.peak_weighting!r}")

    def window_peak_price(self, beta: float, window: int, remaining_slots: int) -> float:
        """Peak price seen by a window LP.

        ``"full"`` charges the whole cycle price in every window. ``"remaining"``
        scales it by the share of the rest of the cycle the window covers, since
        a peak committed now is paid for over all remaining slots; the weight
        is 1 whenever the window reaches the end of the trace.
        """
        if self.peak_weighting == "full":
            return beta
        return beta * window / remaining_slots


def build_predictor(training: PowerTrace, kind: str, slot_hours: float):
    """Return ``f(slot) -> predicted kW`` from a training trace."""
    if abs(training.slot_hours - slot_hours) > 1e-12:
        raise ValueError("training trace slot length differs from the controlled trace")
    if kind == "mean":
        mean = float(training.values.mean())
        return lambda s: np.full(np.shape(s), mean)
    profile, _ = extract_time_of_day(training)
    return lambda s: profile[np.asarray(s) % profile.size]


def onmpc_run(trace: PowerTrace, tariff: Tariff, model: ModulationModel, cfg: MpcConfig,
              training: PowerTrace, off_cfg: OffConfig = OffConfig()) -> tuple[Plan, CostBreakdown]:
    """Receding-horizon control: re-solve a window LP every slot, apply its first step.

    Demand in the first ``h`` slots of each window is the realized trace, the
    rest comes from the predictor. The window LP keeps the peak at or above
    the peak already admitted and must clear all its demand by the window end;
    its peak price follows ``cfg.peak_weighting``. Once a window is entirely
    realized demand and reaches the end of the trace, its solution stays
    optimal for every later window and is reused.
    """
    T = trace.T
    cfg.validate(T)
    predict = build_predictor(training, cfg.predictor, trace.slot_hours)
    prices = tariff.prices(T)
    p = trace.values
    tau = model.tau if off_cfg.allow_delay else 0
    a = np.zeros((T, model.tau + 1))
    d = np.zeros((T, model.tau + 1))
    remaining = np.zeros(T)
    peak = 0.0
    locked = None

    for t in range(T):
        remaining[t] = p[t]
        end = min(t + cfg.H - 1, T - 1)
        exact_end = min(t + cfg.h - 1, end)
        if locked is None:
            origins = np.array([i for i in range(max(0, t - tau), t) if remaining[i] > 0], dtype=int)
            W = end - t + 1
            amounts = np.empty(W)
            amounts[: exact_end - t + 1] = p[t:exact_end + 1]
            if exact_end < end:
                amounts[exact_end - t + 1:] = predict(np.arange(exact_end + 1, end + 1))
            start = np.concatenate([np.zeros(origins.size, dtype=int), np.arange(W)])
            sol = solve_window(start, t - np.concatenate([origins, np.full(W, t)]),
                               np.concatenate([remaining[origins], amounts]),
                               prices[t:end + 1], cfg.window_peak_price(tariff.peak_price, W, T - t), model, trace.slot_hours,
                               off_cfg.allow_drop, off_cfg.allow_delay, y_floor=peak, tol=off_cfg.tol)
            window = (np.concatenate([origins, np.arange(t, end + 1)]), start + t, sol)
            if exact_end == end == T - 1:
                locked = window
        _apply_slot(t, locked or window, a, d, remaining, tau, T)
        peak = max(peak, float(a[t].sum()))

    plan = Plan.from_flows(p, a, d)
    return plan, evaluate_cost(plan, trace, tariff, model)


def _apply_slot(t, window, a, d, remaining, tau, T):
    """Commit the decisions of a window solution that fall on slot ``t``."""
    origin, start, sol = window
    width = sol.admit.shape[1]
    for k in np.nonzero((start <= t) & (origin >= t - tau))[0]:
        i = int(origin[k])
        if remaining[i] <= 0:
            continue
        j = t - int(start[k])
        age = t - i
        amt = min(sol.admit[k, j], remaining[i]) if j < width else 0.0
        drp = min(sol.drop[k], remaining[i] - amt) if j == 0 else 0.0
        left = remaining[i] - amt - drp
        if age == tau or t == T - 1 or left < 1e-12:
            # deadline or horizon end: clear round-off leftovers by admitting them
            amt += max(left, 0.0)
            left = 0.0
        a[t, age] += amt
        d[t, age] += drp
        remaining[i] = left
