"""Stochastic dynamic programs over discretized demand, price and peak grids.

Three variants share the same demand/price models:

* ``drop``: state is the committed peak ``y``; each slot picks the admitted
  fraction of demand *before* seeing it, and everything else is dropped.
* ``lin``: state is (total residual, peak); delay is charged once, linearly,
  when residual demand is admitted.
* ``full``: state is (residual per age, peak) with the exact per-age delay
  penalty and deadline.

``lin`` and ``full`` observe the slot's demand and price before acting and
work in integer multiples of the demand grid step, so every reachable state
lies on the grid. Value tables are indexed ``[t, demand context, price
context, residual state, peak]``; a context is the previous level for
first-order Markov models and 0 for stage-independent ones.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import norm

from .model import CostBreakdown, ModulationModel, Plan, PowerTrace, Tariff, evaluate_cost
from .workloads import extract_time_of_day

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
DEFAULT_STATE_BUDGET = 10 ** 6


class SdpBudgetError(ValueError):
    """The discretized state space is larger than the configured budget."""


# --- demand and price models -----------------------------------------------

@dataclass(frozen=True)
class DiscreteModel:
    """Per-slot discrete distributions over a fixed set of levels.

    ``probs[t, c, l]`` is the probability of level ``l`` at slot ``t`` given
    context ``c``. Stage-independent models have a single context; Markov
    models use the previous slot's level as context (slot 0 rows all hold
    the initial distribution).
    """

    levels: np.ndarray
    probs: np.ndarray
    markov: bool = False

    def __post_init__(self):
        levels = np.array(self.levels, dtype=float)
        probs = np.array(self.probs, dtype=float)
        if levels.ndim != 1 or levels.size == 0:
            raise ValueError("levels must be a non-empty 1-D array")
        if np.any(np.diff(levels) <= 0) or levels[0] < 0:
            raise ValueError("levels must be non-negative and strictly increasing")
        if probs.ndim != 3 or probs.shape[2] != levels.size:
            raise ValueError(f"probs must have shape (T, contexts, {levels.size})")
        contexts = levels.size if self.markov else 1
        if probs.shape[1] != contexts:
            raise ValueError(f"expected {contexts} contexts, got {probs.shape[1]}")
        if np.any(probs < 0) or np.any(np.abs(probs.sum(axis=2) - 1) > 1e-9):
            raise ValueError("each distribution must be non-negative and sum to 1")
        levels.setflags(write=False)
        probs.setflags(write=False)
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "probs", probs)

    @property
    def T(self) -> int:
        return self.probs.shape[0]

    @property
    def contexts(self) -> int:
        return self.probs.shape[1]

    def next_context(self, level_idx: int) -> int:
        return int(level_idx) if self.markov else 0

    @classmethod
    def independent(cls, levels, probs) -> "DiscreteModel":
        probs = np.asarray(probs, dtype=float)
        return cls(levels, probs[:, None, :])

    @classmethod
    def iid(cls, levels, probs, T: int) -> "DiscreteModel":
        return cls.independent(levels, np.tile(np.asarray(probs, dtype=float), (T, 1)))

    @classmethod
    def markov_chain(cls, levels, initial, transition, T: int) -> "DiscreteModel":
        """``transition[prev, cur]`` (or one such matrix per slot) drives slots 1..T-1."""
        L = len(levels)
        trans = np.asarray(transition, dtype=float)
        if trans.ndim == 2:
            trans = np.tile(trans, (T, 1, 1))
        probs = trans.copy()
        probs[0] = np.tile(np.asarray(initial, dtype=float), (L, 1))
        return cls(levels, probs, markov=True)

    @classmethod
    def deterministic(cls, levels, values) -> "DiscreteModel":
        """Point masses on the level nearest each value."""
        levels = np.asarray(levels, dtype=float)
        idx = np.abs(np.asarray(values, dtype=float)[:, None] - levels[None, :]).argmin(axis=1)
        probs = np.zeros((idx.size, levels.size))
        probs[np.arange(idx.size), idx] = 1.0
        return cls.independent(levels, probs)

    @classmethod
    def from_tariff(cls, tariff: Tariff, T: int) -> "DiscreteModel":
        """Known prices as point masses."""
        prices = tariff.prices(T)
        return cls.deterministic(np.unique(prices), prices)

    def snap(self, value: float) -> int:
        """Index of the nearest level."""
        return int(np.abs(self.levels - value).argmin())

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """``n`` sampled level-index paths, shape ``(n, T)``."""
        out = np.empty((n, self.T), dtype=int)
        ctx = np.zeros(n, dtype=int)
        for t in range(self.T):
            cdf = np.cumsum(self.probs[t][ctx], axis=1)
            u = rng.random(n)[:, None]
            out[:, t] = np.minimum((u > cdf).sum(axis=1), self.levels.size - 1)
            ctx = out[:, t] if self.markov else ctx
        return out

    def to_dict(self) -> dict:
        return {"levels": self.levels.tolist(), "probs": self.probs.tolist(), "markov": self.markov}

    @classmethod
    def from_dict(cls, d: dict) -> "DiscreteModel":
        return cls(np.array(d["levels"]), np.array(d["probs"]), bool(d.get("markov", False)))


DemandModel = DiscreteModel
PriceModel = DiscreteModel


def time_of_day_model(training: PowerTrace, T: int, levels: int = 21,
                      p_hi: Optional[float] = None, sigma: Optional[float] = None) -> DiscreteModel:
    """Stage-independent demand: daily profile plus Gaussian noise, binned onto a uniform grid.

    Each level receives the probability mass of the interval between its
    neighbours' midpoints; the outer levels absorb the tails.
    """
    profile, resid_sigma = extract_time_of_day(training)
    sigma = resid_sigma if sigma is None else sigma
    p_hi = float(training.values.max()) if p_hi is None else p_hi
    grid = np.linspace(0.0, p_hi, levels)
    means = profile[np.arange(T) % profile.size]
    if sigma <= 0:
        return DiscreteModel.deterministic(grid, means)
    edges = np.concatenate([[-np.inf], (grid[1:] + grid[:-1]) / 2, [np.inf]])
    cdf = norm.cdf((edges[None, :] - means[:, None]) / sigma)
    probs = np.diff(cdf, axis=1)
    probs /= probs.sum(axis=1, keepdims=True)
    return DiscreteModel.independent(grid, probs)


def _unit_grid(levels: np.ndarray) -> tuple[int, float]:
    """Top level in grid units and the unit size, for uniform grids starting at 0."""
    L = levels.size
    if L < 2 or levels[0] != 0:
        raise ValueError("demand grid must start at 0 and have at least 2 levels")
    g = levels[-1] / (L - 1)
    if np.max(np.abs(levels - g * np.arange(L))) > 1e-9 * levels[-1]:
        raise ValueError("residual-tracking programs need a uniform demand grid")
    return L - 1, float(g)


# --- policy table -----------------------------------------------------------

@dataclass
class PolicyTable:
    """Value tables of a solved program plus what is needed to recover controls.

    Controls other than the drop-variant thresholds are recomputed on demand
    from the stored value tables.
    """

    kind: str
    values: np.ndarray
    y_grid: np.ndarray
    demand: DiscreteModel
    price: DiscreteModel
    beta: float
    k_drop: float
    k_delay: float
    delay_exponent: int
    tau: int
    slot_hours: float
    allow_drop: bool = True
    phi: Optional[np.ndarray] = None
    unit: float = 1.0
    holding_cost: float = 0.0

    @property
    def T(self) -> int:
        return self.values.shape[0] - 1

    def initial_value(self) -> float:
        """Expected cost from slot 0 with nothing committed."""
        if self.kind == "drop":
            return float(self.values[0, 0])
        return float(self.values[0, 0, 0, 0, 0])

    def save(self, path) -> None:
        meta = {
            "version": FORMAT_VERSION, "kind": self.kind, "beta": self.beta,
            "k_drop": self.k_drop, "k_delay": self.k_delay,
            "delay_exponent": self.delay_exponent, "tau": self.tau,
            "slot_hours": self.slot_hours, "allow_drop": self.allow_drop, "unit": self.unit,
            "holding_cost": self.holding_cost,
            "demand_markov": self.demand.markov, "price_markov": self.price.markov,
        }
        arrays = dict(values=self.values, y_grid=self.y_grid,
                      demand_levels=self.demand.levels, demand_probs=self.demand.probs,
                      price_levels=self.price.levels, price_probs=self.price.probs,
                      meta=np.array(json.dumps(meta, sort_keys=True)))
        if self.phi is not None:
            arrays["phi"] = self.phi
        with open(path, "wb") as fh:
            np.savez_compressed(fh, **arrays)

    @classmethod
    def load(cls, path) -> "PolicyTable":
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["meta"]))
            if meta.get("version") != FORMAT_VERSION:
                raise ValueError(f"unsupported policy table version {meta.get('version')}")
            demand = DiscreteModel(z["demand_levels"], z["demand_probs"], meta["demand_markov"])
            price = DiscreteModel(z["price_levels"], z["price_probs"], meta["price_markov"])
            return cls(meta["kind"], z["values"], z["y_grid"], demand, price, meta["beta"],
                       meta["k_drop"], meta["k_delay"], meta["delay_exponent"], meta["tau"],
                       meta["slot_hours"], meta["allow_drop"],
                       z["phi"] if "phi" in z.files else None, meta["unit"],
                       meta.get("holding_cost", 0.0))


def _check_models(demand: DiscreteModel, price: DiscreteModel) -> None:
    if demand.T != price.T:
        raise ValueError(f"demand model covers {demand.T} slots but price model covers {price.T}")


# --- drop-only program ------------------------------------------------------

def fraction_candidates(y_grid, levels, mu_levels: int = 101) -> np.ndarray:
    """Admitted fractions to search: a uniform grid plus every kink of the objective.

    The stage objective is piecewise linear in the fraction with breaks where
    ``fraction * level`` crosses a peak grid point, so including those points
    makes the search exact for the interpolated value function.
    """
    parts = [np.array([0.0, 1.0])]
    if mu_levels >= 2:
        parts.append(np.linspace(0.0, 1.0, mu_levels))
    y_grid = np.asarray(y_grid, dtype=float)
    for p in np.asarray(levels, dtype=float):
        if p > 0:
            parts.append(y_grid[y_grid <= p] / p)
    return np.unique(np.concatenate(parts))


def solve_sdp_drop(demand: DiscreteModel, price: DiscreteModel, beta: float, k_drop: float,
                   slot_hours: float = 1.0 / 6.0, y_grid=None, y_levels: Optional[int] = None,
                   mu_levels: int = 101) -> PolicyTable:
    """Threshold program for dropping only, with stage-independent demand and price.

    For each slot and committed peak ``y`` the admitted fraction minimizes
    the expected stage cost plus the linearly interpolated cost-to-go at
    ``max(y, fraction * p)``. Ties go to the smallest fraction.
    """
    if demand.markov or price.markov:
        raise ValueError("the drop-only program requires stage-independent demand and prices")
    _check_models(demand, price)
    levels = demand.levels
    if y_grid is None:
        y_grid = np.linspace(0.0, levels[-1], y_levels or levels.size)
    y_grid = np.asarray(y_grid, dtype=float)
    if y_grid[0] != 0 or y_grid[-1] < levels[-1] or np.any(np.diff(y_grid) <= 0):
        raise ValueError("peak grid must start at 0, increase, and reach the top demand level")
    mu = fraction_candidates(y_grid, levels, mu_levels)
    T, dt = demand.T, slot_hours
    V = np.empty((T + 1, y_grid.size))
    V[T] = beta * y_grid
    phi = np.empty((T, y_grid.size))
    nxt = np.maximum(y_grid[:, None, None], mu[None, :, None] * levels[None, None, :])
    for t in range(T - 1, -1, -1):
        w = demand.probs[t, 0]
        mean_p = float(w @ levels)
        mean_alpha = float(price.probs[t, 0] @ price.levels)
        stage = dt * (mean_alpha * mu * mean_p + k_drop * (1 - mu) * mean_p)
        G = stage[None, :] + np.interp(nxt, y_grid, V[t + 1]) @ w
        k = G.argmin(axis=1)
        V[t] = G[np.arange(y_grid.size), k]
        phi[t] = mu[k]
    return PolicyTable("drop", V, y_grid, demand, price, beta, k_drop, 0.0, 1, 0,
                       slot_hours, True, phi)


# --- single-residual program --------------------------------------------------

def _lin_action_arrays(ph: int, rmax: int, ny: int, allow_drop: bool):
    """Action bookkeeping indexed ``[r, p, admitted, next residual]`` in grid units.

    Returns drop amount, residual-admission amount and a validity mask. For
    a given total admission the cheapest split serves new demand first, so
    the residual share is the smallest one consistent with the drop.
    """
    r = np.arange(rmax + 1)[:, None, None, None]
    p = np.arange(ph + 1)[None, :, None, None]
    A = np.arange(ny)[None, None, :, None]
    rn = np.arange(rmax + 1)[None, None, None, :]
    D = r + p - A - rn
    valid = (D >= 0) & (D <= p)
    if not allow_drop:
        valid &= D == 0
    from_res = np.maximum(0, A - (p - D))
    valid &= from_res <= r
    return D, from_res, valid


def solve_sdp_lin(demand: DiscreteModel, price: DiscreteModel, beta: float,
                  model: ModulationModel, slot_hours: float = 1.0 / 6.0, allow_drop: bool = True,
                  state_budget: int = DEFAULT_STATE_BUDGET, holding_cost: float = 0.0) -> PolicyTable:
    """Program over (total residual, peak) with a one-time linear delay charge.

    Each slot observes demand ``p`` and price, then picks total admission
    ``A`` and the carried residual ``r'``; the drop is whatever is left of
    ``p``. The stage cost is ``dt * (alpha * A + k_drop * drop + k_delay *
    admitted_from_residual)``. The last slot must clear all residual.
    With ``tau == 0`` no residual is ever carried. ``holding_cost`` ($/kWh
    per slot) optionally adds a charge on the residual carried out of each
    slot; it is 0 by default.
    """
    _check_models(demand, price)
    ph, g = _unit_grid(demand.levels)
    rmax = ph if model.tau > 0 else 0
    ny = ph + rmax + 1
    if ny * (rmax + 1) > state_budget:
        raise SdpBudgetError(f"state space {ny * (rmax + 1)} exceeds budget {state_budget}; "
                             "runtime grows as O(R*L_p^5*L_alpha*T)")
    T, dt = demand.T, slot_hours
    D, from_res, valid = _lin_action_arrays(ph, rmax, ny, allow_drop)
    A = np.arange(ny)[None, None, :, None]
    rn = np.arange(rmax + 1)[None, None, None, :]
    base = np.where(valid, model.k_drop * D + model.k_delay * from_res + holding_cost * rn, np.inf)
    ys = np.arange(ny)

    V = np.full((T + 1, demand.contexts, price.contexts, rmax + 1, ny), np.inf)
    V[T, :, :, 0, :] = beta * g * ys
    groups = [[ip] for ip in range(ph + 1)] if demand.markov else [list(range(ph + 1))]
    for t in range(T - 1, -1, -1):
        Q = np.zeros((price.levels.size, rmax + 1, ph + 1, ny))
        for ia in np.nonzero(price.probs[t].max(axis=0) > 0)[0]:
            cost = dt * g * (price.levels[ia] * A + base)
            for sel in groups:
                W = V[t + 1, demand.next_context(sel[0]), price.next_context(ia)].T
                c = cost[:, sel]
                # admission at or below the current peak keeps it; above raises it
                keep = (np.minimum.accumulate(c, axis=2) + W[None, None]).min(axis=3)
                raise_ = (c + W[None, None]).min(axis=3)
                suffix = np.minimum.accumulate(raise_[..., ::-1], axis=-1)[..., ::-1]
                strict = np.concatenate([suffix[..., 1:], np.full(suffix.shape[:-1] + (1,), np.inf)], axis=-1)
                Q[ia][:, sel] = np.minimum(keep, strict)
        V[t] = np.einsum("ci,dj,jriy->cdry", demand.probs[t], price.probs[t], Q)
    return PolicyTable("lin", V, g * ys, demand, price, beta, model.k_drop, model.k_delay,
                       model.delay_exponent, model.tau, slot_hours, allow_drop, unit=g,
                       holding_cost=holding_cost)


def _peak_lookup(W: np.ndarray, rows, y) -> np.ndarray:
    """``W[rows, y]`` with linear interpolation for fractional peaks (in grid units)."""
    y = np.clip(np.asarray(y, dtype=float), 0, W.shape[1] - 1)
    lo = np.floor(y).astype(int)
    hi = np.minimum(lo + 1, W.shape[1] - 1)
    frac = y - lo
    w_lo, w_hi = W[rows, lo], W[rows, hi]
    # neighbouring entries may be unreachable (inf); keep exact hits exact
    with np.errstate(invalid="ignore"):
        return np.where(frac == 0, w_lo, (1 - frac) * w_lo + frac * w_hi)


def lin_action(table: PolicyTable, t: int, r: int, y: float, ip: int, ia: int,
               min_from_res: int = 0) -> tuple[int, int, int, int]:
    """Optimal ``(admitted, next_residual, dropped, admitted_from_residual)`` in grid units.

    ``y`` may be fractional; the cost-to-go is then interpolated between peak
    grid points. ``min_from_res`` restricts the search to actions that serve
    at least that much residual (used when residual is due).
    """
    ph = table.demand.levels.size - 1
    rmax = table.values.shape[3] - 1
    ny = table.values.shape[4]
    A = np.arange(ny)[:, None]
    rn = np.arange(rmax + 1)[None, :]
    D = r + ip - A - rn
    from_res = np.maximum(np.maximum(0, A - (ip - D)), min(min_from_res, r))
    valid = (D >= 0) & (D <= ip) & (from_res <= np.minimum(r, A))
    if not table.allow_drop:
        valid &= D == 0
    alpha = table.price.levels[ia]
    W = table.values[t + 1, table.demand.next_context(ip), table.price.next_context(ia)]
    cost = table.slot_hours * table.unit * (alpha * A + table.k_drop * D + table.k_delay * from_res
                                            + table.holding_cost * rn)
    total = np.where(valid, cost + _peak_lookup(W, rn, np.maximum(y, A)), np.inf)
    a_best, r_best = np.unravel_index(int(total.argmin()), total.shape)
    return int(a_best), int(r_best), int(D[a_best, r_best]), int(from_res[a_best, r_best])


# --- per-age residual program -------------------------------------------------

def _full_actions(R: tuple, p: int, tau: int, allow_drop: bool, k_drop: float,
                  delay_coef: np.ndarray, radix: int):
    """Enumerate actions from residual vector ``R`` (ages 1..tau) with new demand ``p``.

    Returns arrays of next-state index, total admitted, penalty cost per unit
    (without the energy term), and the admitted-by-age matrix.
    """
    nxt, adm, pen, by_age = [], [], [], []
    keep_ranges = [range(R[m] + 1) for m in range(tau - 1)]
    for r1 in range(p + 1 if tau > 0 else 1):
        a0_range = range(p - r1 + 1) if allow_drop else [p - r1]
        for kept in itertools.product(*keep_ranges):
            Rn = (r1,) + kept if tau > 0 else ()
            ages = [R[m] - kept[m] for m in range(tau - 1)] + ([R[tau - 1]] if tau > 0 else [])
            idx = 0
            for v in Rn:
                idx = idx * radix + v
            delay_pen = sum(delay_coef[m + 1] * ages[m] for m in range(tau))
            for a0 in a0_range:
                drop = p - r1 - a0
                nxt.append(idx)
                adm.append(a0 + sum(ages))
                pen.append(k_drop * drop + delay_pen)
                by_age.append([a0] + ages + [drop])
    return np.array(nxt), np.array(adm), np.array(pen, dtype=float), np.array(by_age)


def solve_sdp_full(demand: DiscreteModel, price: DiscreteModel, beta: float,
                   model: ModulationModel, slot_hours: float = 1.0 / 6.0, allow_drop: bool = True,
                   state_budget: int = DEFAULT_STATE_BUDGET) -> PolicyTable:
    """Exact program over per-age residuals and the committed peak.

    Residuals older than ``tau`` are forced in; drops happen only at the
    origin slot. The last slot must clear everything.
    """
    _check_models(demand, price)
    ph, g = _unit_grid(demand.levels)
    tau = model.tau
    ny = (tau + 1) * ph + 1
    nr = (ph + 1) ** tau
    if ny * nr > state_budget:
        raise SdpBudgetError(
            f"state space {ny}*{ph + 1}^{tau} = {ny * nr} exceeds budget {state_budget}; "
            "runtime grows as O(R*L_p^(2(tau+2))*L_alpha*T)")
    T, dt = demand.T, slot_hours
    coef = model.delay_coefficients()
    states = list(itertools.product(range(ph + 1), repeat=tau))
    actions = {(s, p): _full_actions(R, p, tau, allow_drop, model.k_drop, coef, ph + 1)
               for s, R in enumerate(states) for p in range(ph + 1)}
    ys = np.arange(ny)
    V = np.full((T + 1, demand.contexts, price.contexts, nr, ny), np.inf)
    V[T, :, :, 0, :] = beta * g * ys
    for t in range(T - 1, -1, -1):
        Q = np.zeros((price.levels.size, nr, ph + 1, ny))
        for ia in np.nonzero(price.probs[t].max(axis=0) > 0)[0]:
            alpha = price.levels[ia]
            for ip in np.nonzero(demand.probs[t].max(axis=0) > 0)[0]:
                W = V[t + 1, demand.next_context(ip), price.next_context(ia)]
                for s in range(nr):
                    nxt, adm, pen, _ = actions[(s, ip)]
                    cost = dt * g * (alpha * adm + pen)
                    vals = cost[:, None] + W[nxt[:, None], np.maximum(ys[None, :], adm[:, None])]
                    Q[ia, s, ip] = vals.min(axis=0)
        V[t] = np.einsum("ci,dj,jsiy->cdsy", demand.probs[t], price.probs[t], Q)
    return PolicyTable("full", V, g * ys, demand, price, beta, model.k_drop, model.k_delay,
                       model.delay_exponent, tau, slot_hours, allow_drop, unit=g)


def full_action(table: PolicyTable, t: int, R: tuple, y: float, ip: int, ia: int):
    """Optimal action as ``(next residual vector, admitted by age 0..tau, dropped)`` in grid units."""
    ph = table.demand.levels.size - 1
    tau = table.tau
    coef = table.k_delay * np.arange(tau + 1, dtype=float) ** table.delay_exponent
    nxt, adm, pen, by_age = _full_actions(tuple(R), ip, tau, table.allow_drop, table.k_drop, coef, ph + 1)
    W = table.values[t + 1, table.demand.next_context(ip), table.price.next_context(ia)]
    cost = table.slot_hours * table.unit * (table.price.levels[ia] * adm + pen)
    total = cost + _peak_lookup(W, nxt, np.maximum(y, adm))
    k = int(total.argmin())
    row = by_age[k]
    Rn = []
    idx = int(nxt[k])
    for _ in range(tau):
        Rn.append(idx % (ph + 1))
        idx //= ph + 1
    return tuple(reversed(Rn)), row[:tau + 1], int(row[tau + 1])


# --- rollout ------------------------------------------------------------------

def rollout_policy(table: PolicyTable, trace: PowerTrace, tariff: Tariff,
                   model: ModulationModel) -> tuple[Plan, CostBreakdown]:
    """Run a solved policy on a realized trace and bill the result exactly.

    Realized demand, price, residual and peak are snapped to the nearest grid
    points to look up the control, which is then applied to the true amounts.
    Demand the grid action does not cover stays in the residual; anything
    reaching the delay limit or the final slot is admitted.
    """
    T = trace.T
    if T != table.T:
        raise ValueError(f"policy covers {table.T} slots but trace has {T}")
    prices = tariff.prices(T)
    p = trace.values
    tau = model.tau
    a = np.zeros((T, tau + 1))
    d = np.zeros((T, tau + 1))
    pending = np.zeros(T)
    top = table.demand.levels[-1]
    step = top / max(table.demand.levels.size - 1, 1)
    above = int(np.count_nonzero(p > top + step / 2))
    if above:
        log.warning("%d of %d slots exceed the demand grid (max %.1f kW); lookups clamped",
                    above, T, top)
    y = 0.0
    for t in range(T):
        ip = table.demand.snap(p[t])
        ia = table.price.snap(prices[t])
        pending[t] = p[t]
        if table.kind == "drop":
            iy = int(np.abs(table.y_grid - y).argmin())
            adm = min(table.phi[t, iy], 1.0) * p[t]
            a[t, 0], d[t, 0] = adm, p[t] - adm
            pending[t] = 0.0
        else:
            unit = table.unit
            iy = min(y / unit, table.values.shape[4] - 1)
            ages = [pending[t - m] if t - m >= 0 else 0.0 for m in range(tau + 1)]
            if table.kind == "lin":
                rmax = table.values.shape[3] - 1
                ir = int(min(round(sum(ages[1:]) / unit), rmax))
                due = pending[t - tau] if t >= tau else 0.0
                A, _, D, from_res = lin_action(table, t, ir, iy, ip, ia,
                                               int(math.ceil(due / unit - 1e-9)))
                want_res = from_res * unit
                drop_new = min(D * unit, p[t])
                want_new = min((A - from_res) * unit, p[t] - drop_new)
                d[t, 0] = drop_new
                a[t, 0] = want_new
                pending[t] -= drop_new + want_new
                for m in range(min(tau, t), 0, -1):  # oldest first
                    take = min(want_res, pending[t - m])
                    a[t, m] += take
                    pending[t - m] -= take
                    want_res -= take
            else:
                R = tuple(int(min(round(ages[m] / unit), table.demand.levels.size - 1))
                          for m in range(1, tau + 1))
                _, by_age, drop = full_action(table, t, R, iy, ip, ia)
                drop_new = min(drop * unit, p[t])
                d[t, 0] = drop_new
                pending[t] -= drop_new
                for m in range(tau + 1):
                    if t - m < 0:
                        continue
                    take = min(by_age[m] * unit, pending[t - m])
                    a[t, m] += take
                    pending[t - m] -= take
            for m in range(tau + 1):
                i = t - m
                if i >= 0 and pending[i] > 0 and (m == tau or t == T - 1):
                    a[t, m] += pending[i]
                    pending[i] = 0.0
        y = max(y, float(a[t].sum()))
    plan = Plan.from_flows(p, a, d)
    return plan, evaluate_cost(plan, trace, tariff, model)


def simulate_table_cost(table: PolicyTable, n: int, seed: int = 0) -> np.ndarray:
    """Realized costs of ``n`` on-grid sample paths under the table's own cost model.

    Supports the residual-tracking variants, whose states stay on the grid.
    """
    if table.kind not in ("lin", "full"):
        raise ValueError("on-grid simulation needs a residual-tracking table")
    rng = np.random.default_rng(seed)
    dpaths = table.demand.sample(rng, n)
    apaths = table.price.sample(rng, n)
    costs = np.empty(n)
    dt, g = table.slot_hours, table.unit
    coef = table.k_delay * np.arange(table.tau + 1, dtype=float) ** table.delay_exponent
    for k in range(n):
        total, y = 0.0, 0
        r, R = 0, tuple([0] * table.tau)
        for t in range(table.T):
            ip, ia = int(dpaths[k, t]), int(apaths[k, t])
            alpha = table.price.levels[ia]
            if table.kind == "lin":
                A, r, D, from_res = lin_action(table, t, r, y, ip, ia)
                total += dt * g * (alpha * A + table.k_drop * D + table.k_delay * from_res
                                   + table.holding_cost * r)
            else:
                R, by_age, D = full_action(table, t, R, y, ip, ia)
                A = int(by_age.sum())
                total += dt * g * (alpha * A + table.k_drop * D + float(coef @ by_age))
            y = max(y, A)
        costs[k] = total + table.beta * g * y
    return costs
