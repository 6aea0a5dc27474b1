"""Offline (full-information) solvers.

The full problem is a linear program once residuals are eliminated: every
unit of demand either gets admitted at some delay within the tolerance or
is dropped at its origin slot. :func:`solve_window` is the shared LP core;
:func:`solve_off` applies it to the whole billing cycle and the online MPC
controller applies it to receding windows.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .model import (CostBreakdown, ModulationModel, Plan, PowerTrace, Tariff,
                    evaluate_cost)


class SolverError(RuntimeError):
    """The LP backend failed to return an optimal solution."""


@dataclass(frozen=True)
class OffConfig:
    allow_drop: bool = True
    allow_delay: bool = True
    tol: float = 1e-8


@dataclass(frozen=True)
class DropThreshold:
    theta: float
    n: int


@dataclass
class WindowSolution:
    """LP solution over a window, per demand item.

    ``admit[k, j]`` is the amount of item ``k`` admitted ``j`` slots after it
    becomes available (column ``j`` maps to window slot ``start[k] + j``).
    """

    admit: np.ndarray
    drop: np.ndarray
    y: float
    objective: float


def solve_window(start, age, amount, prices, beta, model: ModulationModel, dt: float,
                 allow_drop: bool = True, allow_delay: bool = True, y_floor: float = 0.0,
                 tol: float = 1e-8) -> WindowSolution:
    """Minimize the bill for a set of demand items over a window of slots.

    Args:
        start: window slot at which each item becomes available.
        age: delay the item has already accumulated at ``start`` (0 for fresh demand).
        amount: kW of each item.
        prices: energy price per window slot; its length is the window size.
        y_floor: lower bound on the peak variable (already committed peak).

    Every item must be cleared within the window and within its remaining
    delay budget. Drops happen at ``start``.
    """
    start = np.asarray(start, dtype=int)
    age = np.asarray(age, dtype=int)
    amount = np.asarray(amount, dtype=float)
    prices = np.asarray(prices, dtype=float)
    W = prices.size
    K = amount.size
    tau = model.tau if allow_delay else 0
    width = tau + 1

    J = np.arange(width)
    budget = np.maximum(tau - age, 0) if allow_delay else np.zeros(K, dtype=int)
    valid = (J[None, :] <= budget[:, None]) & (start[:, None] + J[None, :] < W)
    k_idx, j_idx = np.nonzero(valid)
    slot = start[k_idx] + j_idx
    delay = age[k_idx] + j_idx
    nA = k_idx.size
    nD = K if allow_drop else 0
    nvar = nA + nD + 1

    delay_coef = model.k_delay * delay.astype(float) ** model.delay_exponent
    c = np.empty(nvar)
    c[:nA] = dt * (prices[slot] + delay_coef)
    c[nA:nA + nD] = dt * model.k_drop
    c[-1] = beta

    eq_rows = np.concatenate([k_idx, np.arange(nD)])
    eq_cols = np.concatenate([np.arange(nA), nA + np.arange(nD)])
    A_eq = sparse.csr_matrix((np.ones(eq_rows.size), (eq_rows, eq_cols)), shape=(K, nvar))

    ub_rows = np.concatenate([slot, np.arange(W)])
    ub_cols = np.concatenate([np.arange(nA), np.full(W, nvar - 1)])
    ub_vals = np.concatenate([np.ones(nA), -np.ones(W)])
    A_ub = sparse.csr_matrix((ub_vals, (ub_rows, ub_cols)), shape=(W, nvar))

    bounds = np.zeros((nvar, 2))
    bounds[:, 1] = np.inf
    bounds[-1, 0] = y_floor
    res = linprog(c, A_ub=A_ub, b_ub=np.zeros(W), A_eq=A_eq, b_eq=amount,
                  bounds=bounds, method="highs",
                  options={"primal_feasibility_tolerance": 1e-9,
                           "dual_feasibility_tolerance": 1e-9})
    if res.status != 0:
        raise SolverError(f"LP solve failed: {res.message}")
    x = np.maximum(res.x, 0.0)
    admit = np.zeros((K, width))
    admit[k_idx, j_idx] = x[:nA]
    drop = x[nA:nA + nD] if allow_drop else np.zeros(K)
    admit, drop = _rebalance(admit, drop, amount, valid)
    load = np.zeros(W)
    np.add.at(load, slot, admit[k_idx, j_idx])
    y = max(float(x[-1]), float(load.max(initial=0.0)), y_floor)
    return WindowSolution(admit, drop, y, float(res.fun))


def _rebalance(admit, drop, amount, valid):
    """Absorb solver round-off so each item's flows sum exactly to its amount."""
    gap = amount - admit.sum(axis=1) - drop
    for k in np.nonzero(np.abs(gap) > 0)[0]:
        cols = np.nonzero(valid[k])[0]
        # put the gap on the largest existing flow so the structure is unchanged
        flows = np.concatenate([admit[k, cols], [drop[k]]])
        target = int(np.argmax(flows))
        if target < cols.size:
            admit[k, cols[target]] = max(admit[k, cols[target]] + gap[k], 0.0)
        else:
            drop[k] = max(drop[k] + gap[k], 0.0)
    return admit, drop


def _plan_from_items(trace: PowerTrace, sol: WindowSolution, model: ModulationModel) -> Plan:
    T, tau = trace.T, model.tau
    a = np.zeros((T, tau + 1))
    d = np.zeros((T, tau + 1))
    w = sol.admit.shape[1]
    for j in range(w):
        a[j:, j] = sol.admit[: T - j, j]
    d[:, 0] = sol.drop
    return Plan.from_flows(trace.values, a, d, sol.y)


def solve_off(trace: PowerTrace, tariff: Tariff, model: ModulationModel,
              cfg: OffConfig = OffConfig()) -> tuple[Plan, CostBreakdown]:
    """Optimal offline plan for one billing cycle."""
    T = trace.T
    prices = tariff.prices(T)
    if cfg.allow_drop and np.any(model.k_drop < prices):
        warnings.warn("drop penalty is below the energy price in some slots; "
                      "dropping may be preferred over serving there", RuntimeWarning)
    if not (cfg.allow_drop or cfg.allow_delay):
        plan = Plan.admit_all(trace, model.tau)
        return plan, evaluate_cost(plan, trace, tariff, model)
    sol = solve_window(np.arange(T), np.zeros(T, dtype=int), trace.values, prices,
                       tariff.peak_price, model, trace.slot_hours,
                       allow_drop=cfg.allow_drop, allow_delay=cfg.allow_delay, tol=cfg.tol)
    plan = _plan_from_items(trace, sol, model)
    return plan, evaluate_cost(plan, trace, tariff, model)


# --- drop-only closed form -------------------------------------------------

def drop_rank(beta: float, alpha: float, k_drop: float, slot_hours: float,
              normalization: str = "slot") -> int:
    """Rank ``n`` of the optimal drop threshold.

    ``normalization="slot"`` divides the peak price by the per-slot saving
    ``(k_drop - alpha) * slot_hours``; ``"raw"`` omits the slot length.
    Returns 0 when ``beta == 0`` (dropping is never worthwhile).
    """
    if k_drop <= alpha:
        raise ValueError("drop penalty does not exceed the energy price; "
                         "the threshold rule requires k_drop > alpha")
    if beta == 0:
        return 0
    if normalization == "slot":
        ratio = beta / ((k_drop - alpha) * slot_hours)
    elif normalization == "raw":
        ratio = beta / (k_drop - alpha)
    else:
        raise ValueError(f"unknown normalization {normalization!r}")
    nearest = round(ratio)
    if abs(ratio - nearest) <= 1e-9 * max(1.0, ratio):
        return max(int(nearest), 1)
    return max(int(math.ceil(ratio)), 1)


def threshold_from_rank(values, n: int) -> float:
    """The ``n``-th largest value, 0 when fewer than ``n`` values, inf when ``n == 0``."""
    values = np.asarray(values, dtype=float)
    if n == 0:
        return math.inf
    if values.size < n:
        return 0.0
    return float(np.partition(values, values.size - n)[values.size - n])


def threshold_plan(trace: PowerTrace, theta: float, tau: int = 0) -> Plan:
    admitted = np.minimum(trace.values, theta)
    a = np.zeros((trace.T, tau + 1))
    d = np.zeros_like(a)
    a[:, 0] = admitted
    d[:, 0] = trace.values - admitted
    return Plan(a, d, np.zeros((trace.T + 1, tau + 1)), float(admitted.max()))


def solve_drop_only(trace: PowerTrace, alpha_flat: float, beta: float, k_drop: float,
                    normalization: str = "slot", tau: int = 0
                    ) -> tuple[DropThreshold, Plan, CostBreakdown]:
    """Optimal drop-only plan: cap every slot at the n-th largest demand."""
    n = drop_rank(beta, alpha_flat, k_drop, trace.slot_hours, normalization)
    theta = threshold_from_rank(trace.values, n)
    plan = threshold_plan(trace, theta, tau)
    model = ModulationModel(k_drop=k_drop, k_delay=0.0, tau=tau)
    cost = evaluate_cost(plan, trace, Tariff.flat(alpha_flat, beta), model)
    return DropThreshold(theta, n), plan, cost


def threshold_cost(values, theta: float, alpha: float, beta: float, k_drop: float,
                   slot_hours: float) -> float:
    """Bill of capping admitted power at ``theta`` and dropping the excess."""
    values = np.asarray(values, dtype=float)
    admitted = np.minimum(values, theta)
    peak = float(admitted.max())
    return beta * peak + slot_hours * (alpha * float(admitted.sum())
                                       + k_drop * float((values - admitted).sum()))


def threshold_oracle(values, alpha: float, beta: float, k_drop: float, slot_hours: float,
                     rel_tol: float = 1e-12) -> tuple[float, float]:
    """Exhaustive search over candidate thresholds ``{p_t} ∪ {0}``.

    Among candidates whose cost is within ``rel_tol`` of the best, the largest
    threshold wins. Returns ``(theta, cost)``.
    """
    candidates = np.unique(np.concatenate([[0.0], np.asarray(values, dtype=float)]))
    costs = np.array([threshold_cost(values, th, alpha, beta, k_drop, slot_hours)
                      for th in candidates])
    best = costs.min()
    ok = costs <= best + rel_tol * max(abs(best), 1e-300)
    k = int(np.nonzero(ok)[0][-1])
    return float(candidates[k]), float(costs[k])


# --- brute-force oracle -----------------------------------------------------

ORACLE_MAX_T = 8
ORACLE_MAX_TAU = 2
ORACLE_MAX_LEVELS = 6


class OracleTooLarge(ValueError):
    pass


def _compositions(total: int, bins: int):
    """All ways to write ``total`` as an ordered sum of ``bins`` non-negative ints."""
    if bins == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, bins - 1):
            yield (first,) + rest


def oracle_bruteforce(trace: PowerTrace, tariff: Tariff, model: ModulationModel,
                      grid_levels: int = 5, cfg: OffConfig = OffConfig()
                      ) -> tuple[Plan, CostBreakdown, float]:
    """Exhaustive search over plans whose flows are multiples of ``p_i/(L-1)``.

    Each origin's demand is split into ``grid_levels - 1`` equal quanta that
    are distributed over its admission delays and (optionally) a drop at the
    origin. Returns the best such plan, its cost, and a bound on how far the
    grid optimum can sit above the continuous optimum.
    """
    T, tau = trace.T, model.tau
    if T > ORACLE_MAX_T or tau > ORACLE_MAX_TAU or grid_levels > ORACLE_MAX_LEVELS:
        raise OracleTooLarge(f"oracle limited to T<={ORACLE_MAX_T}, tau<={ORACLE_MAX_TAU}, "
                             f"grid_levels<={ORACLE_MAX_LEVELS}")
    if grid_levels < 2:
        raise ValueError("grid_levels must be at least 2")
    p = trace.values
    dt = trace.slot_hours
    prices = tariff.prices(T)
    beta = tariff.peak_price
    q = grid_levels - 1
    tau_eff = tau if cfg.allow_delay else 0
    delay_coef = model.delay_coefficients()
    step = p / q

    def options(i):
        nd = min(tau_eff, T - 1 - i) + 1
        bins = nd + (1 if cfg.allow_drop else 0)
        out = []
        for comp in _compositions(q, bins):
            adm = np.array(comp[:nd], dtype=float) * step[i]
            drp = comp[nd] * step[i] if cfg.allow_drop else 0.0
            lin = dt * (float(np.dot(adm, prices[i:i + nd] + delay_coef[:nd]))
                        + model.k_drop * drp)
            out.append((adm, drp, lin))
        return out

    opts = [options(i) for i in range(T)]
    width = tau_eff + 1

    @lru_cache(maxsize=None)
    def best(i, pending, peak):
        # pending[j] is load already committed to slot i + j by earlier origins
        if i == T:
            return beta * peak, ()
        top = (math.inf, ())
        for idx, (adm, drp, lin) in enumerate(opts[i]):
            loads = list(pending) + [0.0]
            for j, v in enumerate(adm):
                loads[j] += v
            new_peak = max(peak, loads[0])
            nxt = tuple(round(v, 9) for v in loads[1:width])
            rest, choice = best(i + 1, nxt, round(new_peak, 9))
            total = lin + rest
            if total < top[0] - 1e-12:
                top = (total, (idx,) + choice)
        return top

    _, choice = best(0, tuple([0.0] * (width - 1)), 0.0)
    best.cache_clear()
    a = np.zeros((T, tau + 1))
    d = np.zeros((T, tau + 1))
    for i, idx in enumerate(choice):
        adm, drp, _ = opts[i][idx]
        for j, v in enumerate(adm):
            a[i + j, j] = v
        d[i, 0] = drp
    plan = Plan.from_flows(p, a, d)
    cost = evaluate_cost(plan, trace, tariff, model)
    return plan, cost, lipschitz_bound(trace, tariff, model, grid_levels, cfg)


def lipschitz_bound(trace: PowerTrace, tariff: Tariff, model: ModulationModel,
                    grid_levels: int, cfg: OffConfig = OffConfig()) -> float:
    """Worst-case cost increase from rounding a continuous plan onto the oracle grid.

    Rounding moves each flow of origin ``i`` by less than one quantum, so a
    slot's load moves by at most the sum of quanta of origins that can reach
    it, and the linear terms move by at most one quantum per flow.
    """
    T = trace.T
    tau = model.tau if cfg.allow_delay else 0
    step = trace.values / (grid_levels - 1)
    prices = tariff.prices(T)
    reach = np.array([step[max(0, t - tau):t + 1].sum() for t in range(T)])
    c_max = max(float(prices.max()) + model.k_delay * tau ** model.delay_exponent,
                model.k_drop if cfg.allow_drop else 0.0)
    return tariff.peak_price * float(reach.max()) + trace.slot_hours * float(step.sum()) * (tau + 2) * c_max
