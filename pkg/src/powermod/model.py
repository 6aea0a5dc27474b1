"""Domain types for power-demand modulation.

Slots are 0-based. A plan stores per-slot arrays indexed by *delay*: column
``m`` of ``admitted[t]`` is the amount admitted at slot ``t`` that originated
at slot ``t - m``. Residuals are stored one row longer than the trace so the
end-of-horizon residual can be represented (and rejected).

Units: power in kW, prices in $/kWh for energy-denominated terms and
$/kW per billing cycle for the peak charge. Every energy term is multiplied
by the slot length in hours.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

DEFAULT_EPS = 1e-6


class PlanShapeError(ValueError):
    """Plan arrays do not match the trace length or the delay tolerance."""


class InfeasiblePlanError(ValueError):
    """Raised when a cost is requested for a plan that violates the constraints."""

    def __init__(self, report: "FeasibilityReport"):
        super().__init__(f"plan is infeasible: {report.describe()}")
        self.report = report


def _frozen_array(values, name: str, ndim: int = 1) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class PowerTrace:
    """Average power demand per control window."""

    values: np.ndarray
    slot_hours: float = 1.0 / 6.0
    p_max: Optional[float] = None

    def __post_init__(self):
        vals = _frozen_array(self.values, "values")
        if vals.size == 0:
            raise ValueError("trace must contain at least one slot")
        if not np.all(np.isfinite(vals)):
            raise ValueError("trace contains NaN or infinite values")
        if np.any(vals < 0):
            raise ValueError("trace contains negative power values")
        if not self.slot_hours > 0:
            raise ValueError("slot_hours must be positive")
        p_max = float(vals.max()) if self.p_max is None else float(self.p_max)
        if vals.max() > p_max:
            raise ValueError(f"trace maximum {vals.max():g} exceeds declared p_max {p_max:g}")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "p_max", p_max)

    def __len__(self) -> int:
        return self.values.size

    @property
    def T(self) -> int:
        return self.values.size

    @property
    def slots_per_day(self) -> int:
        spd = 24.0 / self.slot_hours
        if abs(spd - round(spd)) > 1e-9:
            raise ValueError(f"slot length {self.slot_hours} h does not divide a day")
        return int(round(spd))

    def with_values(self, values) -> "PowerTrace":
        vals = np.asarray(values, dtype=float)
        return PowerTrace(vals, self.slot_hours, max(self.p_max, float(vals.max())))


@dataclass(frozen=True)
class Tariff:
    """Per-slot energy prices plus a billing-cycle peak price.

    A length-1 ``energy_prices`` is a flat tariff and is broadcast on use.
    """

    energy_prices: np.ndarray
    peak_price: float

    def __post_init__(self):
        prices = _frozen_array(np.atleast_1d(self.energy_prices), "energy_prices")
        if prices.size == 0:
            raise ValueError("tariff needs at least one energy price")
        if not np.all(np.isfinite(prices)) or np.any(prices < 0):
            raise ValueError("energy prices must be finite and non-negative")
        if not (math.isfinite(self.peak_price) and self.peak_price >= 0):
            raise ValueError("peak price must be finite and non-negative")
        object.__setattr__(self, "energy_prices", prices)
        object.__setattr__(self, "peak_price", float(self.peak_price))

    @classmethod
    def flat(cls, alpha: float, beta: float) -> "Tariff":
        return cls(np.array([alpha]), beta)

    @property
    def is_flat(self) -> bool:
        return self.energy_prices.size == 1 or bool(np.all(self.energy_prices == self.energy_prices[0]))

    def prices(self, T: int) -> np.ndarray:
        """Energy prices broadcast to ``T`` slots."""
        if self.energy_prices.size == 1:
            return np.full(T, self.energy_prices[0])
        if self.energy_prices.size != T:
            raise ValueError(f"tariff has {self.energy_prices.size} prices but trace has {T} slots")
        return self.energy_prices


@dataclass(frozen=True)
class ModulationModel:
    """Penalties for dropping and delaying demand.

    ``l_drop(x) = k_drop * x`` and ``l_delay(x, m) = k_delay * m**delay_exponent * x``,
    both per kWh.
    """

    k_drop: float = 0.72
    k_delay: float = 0.02
    delay_exponent: int = 2
    tau: int = 6

    def __post_init__(self):
        if self.k_drop < 0 or self.k_delay < 0:
            raise ValueError("penalty coefficients must be non-negative")
        if self.delay_exponent not in (1, 2):
            raise ValueError("delay_exponent must be 1 or 2")
        if int(self.tau) != self.tau or self.tau < 0:
            raise ValueError("tau must be a non-negative integer")
        object.__setattr__(self, "tau", int(self.tau))

    def delay_coefficients(self) -> np.ndarray:
        """Per-kWh delay penalty for each delay ``m = 0..tau``."""
        m = np.arange(self.tau + 1, dtype=float)
        return self.k_delay * m ** self.delay_exponent

    def replace(self, **changes) -> "ModulationModel":
        params = dict(k_drop=self.k_drop, k_delay=self.k_delay,
                      delay_exponent=self.delay_exponent, tau=self.tau)
        params.update(changes)
        return ModulationModel(**params)


@dataclass(frozen=True)
class Plan:
    """A full assignment of the modulation decision variables.

    Attributes:
        admitted: shape (T, tau+1); ``admitted[t, m]`` is a_{t-m, t}.
        dropped: shape (T, tau+1); ``dropped[t, m]`` is d_{t-m, t}.
        residuals: shape (T+1, tau+1); ``residuals[t, m]`` is r_{t-m, t}, the
            demand from origin ``t-m`` still unserved at the start of ``t``.
            Column 0 is unused and must be zero.
        y_max: peak admitted power.
    """

    admitted: np.ndarray
    dropped: np.ndarray
    residuals: np.ndarray
    y_max: float

    def __post_init__(self):
        for name in ("admitted", "dropped", "residuals"):
            object.__setattr__(self, name, _frozen_array(getattr(self, name), name, ndim=2))
        object.__setattr__(self, "y_max", float(self.y_max))

    @property
    def T(self) -> int:
        return self.admitted.shape[0]

    @property
    def tau(self) -> int:
        return self.admitted.shape[1] - 1

    @property
    def load(self) -> np.ndarray:
        """Total admitted power per slot (a_t^+)."""
        return self.admitted.sum(axis=1)

    @property
    def late_dropped(self) -> float:
        """Demand that was postponed and later dropped."""
        return float(self.dropped[:, 1:].sum())

    @classmethod
    def from_flows(cls, trace_values, admitted, dropped, y_max: Optional[float] = None) -> "Plan":
        """Build a plan from admit/drop decisions, deriving residuals by flow balance.

        Tiny negative residuals produced by solver round-off are clipped to 0.
        """
        p = np.asarray(trace_values, dtype=float)
        a = np.asarray(admitted, dtype=float)
        d = np.asarray(dropped, dtype=float)
        T, width = a.shape
        r = np.zeros((T + 1, width))
        for t in range(T):
            if width > 1:
                r[t + 1, 1] = p[t] - a[t, 0] - d[t, 0]
                r[t + 1, 2:] = r[t, 1:-1] - a[t, 1:-1] - d[t, 1:-1]
        r[np.abs(r) < 1e-12] = 0.0
        load = a.sum(axis=1)
        peak = float(load.max()) if T else 0.0
        return cls(a, d, r, peak if y_max is None else max(float(y_max), peak))

    @classmethod
    def admit_all(cls, trace: PowerTrace, tau: int = 0) -> "Plan":
        """The no-modulation baseline: every slot's demand admitted on arrival."""
        T = trace.T
        a = np.zeros((T, tau + 1))
        a[:, 0] = trace.values
        return cls(a, np.zeros_like(a), np.zeros((T + 1, tau + 1)), float(trace.values.max()))

    def with_tau(self, tau: int) -> "Plan":
        """Re-express the plan with a wider delay window (padding with zeros)."""
        if tau < self.tau:
            raise PlanShapeError(f"cannot narrow a plan from tau={self.tau} to {tau}")
        pad = tau - self.tau
        a = np.pad(self.admitted, ((0, 0), (0, pad)))
        d = np.pad(self.dropped, ((0, 0), (0, pad)))
        r = np.pad(self.residuals, ((0, 0), (0, pad)))
        return Plan(a, d, r, self.y_max)


@dataclass(frozen=True)
class FeasibilityReport:
    feasible: bool
    constraint: Optional[str] = None
    slot: Optional[int] = None
    origin: Optional[int] = None
    magnitude: float = 0.0

    def describe(self) -> str:
        if self.feasible:
            return "feasible"
        where = f" at slot {self.slot}" if self.slot is not None else ""
        if self.origin is not None:
            where += f" (origin {self.origin})"
        return f"violates {self.constraint}{where}, residual {self.magnitude:.3g} kW"


def _check_shape(plan: Plan, trace: PowerTrace, model: ModulationModel) -> None:
    T, tau = trace.T, model.tau
    expected = {"admitted": (T, tau + 1), "dropped": (T, tau + 1), "residuals": (T + 1, tau + 1)}
    for name, shape in expected.items():
        got = getattr(plan, name).shape
        if got != shape:
            raise PlanShapeError(f"plan.{name} has shape {got}, expected {shape} for T={T}, tau={tau}")


def check_feasible(plan: Plan, trace: PowerTrace, model: ModulationModel,
                   eps: float = DEFAULT_EPS) -> FeasibilityReport:
    """Check a plan against the flow, deadline, drain, peak and sign constraints.

    Returns the first violation found, in that constraint order and then by
    slot. Raises :class:`PlanShapeError` on a dimension mismatch.
    """
    _check_shape(plan, trace, model)
    p = trace.values
    a, d, r = plan.admitted, plan.dropped, plan.residuals
    T, tau = trace.T, model.tau

    def fail(name, slot, origin, mag):
        return FeasibilityReport(False, name, None if slot is None else int(slot),
                                 None if origin is None else int(origin), float(mag))

    for name, arr in (("admitted", a), ("dropped", d), ("residuals", r)):
        if np.any(arr < -eps):
            t, m = np.argwhere(arr < -eps)[0]
            return fail("nonnegativity", t, t - m, arr[t, m])
    if plan.y_max < -eps:
        return fail("nonnegativity", None, None, plan.y_max)

    # entries that would refer to origins before slot 0, and the unused column
    rows = np.arange(T)[:, None]
    cols = np.arange(tau + 1)[None, :]
    before = (rows - cols) < 0
    for arr in (a, d):
        bad = before & (np.abs(arr) > eps)
        if bad.any():
            t, m = np.argwhere(bad)[0]
            return fail("origin_in_horizon", t, t - m, arr[t, m])
    rb = np.zeros_like(r, dtype=bool)
    rb[:, 0] = True
    rb[:T] |= before
    bad = rb & (np.abs(r) > eps)
    if bad.any():
        t, m = np.argwhere(bad)[0]
        return fail("origin_in_horizon", t, t - m, r[t, m])

    if tau == 0:
        gap = p - a[:, 0] - d[:, 0]
        bad = np.abs(gap) > eps
        if bad.any():
            t = int(np.argmax(bad))
            return fail("new_demand_balance", t, t, gap[t])
    else:
        gap = p - a[:, 0] - d[:, 0] - r[1:, 1]
        bad = np.abs(gap) > eps
        if bad.any():
            t = int(np.argmax(bad))
            return fail("new_demand_balance", t, t, gap[t])
        if tau > 1:
            gap = r[:T, 1:tau] - a[:, 1:tau] - d[:, 1:tau] - r[1:, 2:]
            bad = np.abs(gap) > eps
            if bad.any():
                t, j = np.argwhere(bad)[0]
                return fail("residual_balance", t, t - (j + 1), gap[t, j])
        gap = r[:T, tau] - a[:, tau] - d[:, tau]
        bad = np.abs(gap) > eps
        if bad.any():
            t = int(np.argmax(bad))
            return fail("deadline", t, t - tau, gap[t])
        tail = r[T]
        bad = np.abs(tail) > eps
        if bad.any():
            m = int(np.argmax(bad))
            return fail("horizon_drain", T, T - m, tail[m])

    load = a.sum(axis=1)
    over = load - plan.y_max
    if np.any(over > eps):
        t = int(np.argmax(over > eps))
        return fail("peak_dominance", t, None, over[t])
    return FeasibilityReport(True)


@dataclass(frozen=True)
class CostBreakdown:
    energy_cost: float
    peak_cost: float
    drop_loss: float
    delay_loss: float
    total: float
    baseline_total: float
    savings_pct: float
    savings_defined: bool = True

    def to_dict(self) -> dict:
        return {
            "energy_cost": self.energy_cost,
            "peak_cost": self.peak_cost,
            "drop_loss": self.drop_loss,
            "delay_loss": self.delay_loss,
            "total": self.total,
            "baseline_total": self.baseline_total,
            "savings_pct": self.savings_pct,
            "savings_defined": self.savings_defined,
        }


def _components(plan: Plan, prices: np.ndarray, tariff: Tariff, model: ModulationModel, dt: float):
    load = plan.load
    energy = dt * float(np.dot(prices, load))
    peak = tariff.peak_price * plan.y_max
    drop = dt * model.k_drop * float(plan.dropped.sum())
    coef = model.delay_coefficients()[: plan.tau + 1]
    delay = dt * float((plan.admitted * coef[None, :]).sum())
    return energy, peak, drop, delay


def baseline_total(trace: PowerTrace, tariff: Tariff) -> float:
    """Bill of the admit-everything plan."""
    prices = tariff.prices(trace.T)
    return trace.slot_hours * float(np.dot(prices, trace.values)) + tariff.peak_price * float(trace.values.max())


def evaluate_cost(plan: Plan, trace: PowerTrace, tariff: Tariff, model: ModulationModel,
                  eps: float = DEFAULT_EPS) -> CostBreakdown:
    """Exact objective of a feasible plan, with savings against the baseline.

    Raises:
        InfeasiblePlanError: the plan violates a constraint (report attached).
    """
    report = check_feasible(plan, trace, model, eps)
    if not report.feasible:
        raise InfeasiblePlanError(report)
    prices = tariff.prices(trace.T)
    energy, peak, drop, delay = _components(plan, prices, tariff, model, trace.slot_hours)
    total = energy + peak + drop + delay
    base = baseline_total(trace, tariff)
    if base > 0:
        savings, defined = 100.0 * (base - total) / base, True
    else:
        savings, defined = 0.0, False
    return CostBreakdown(energy, peak, drop, delay, total, base, savings, defined)


@dataclass(frozen=True)
class WorkloadStats:
    par: float
    p70: float
    mean_kw: float
    max_kw: float
    all_zero: bool = False


def workload_stats(trace: PowerTrace) -> WorkloadStats:
    """Peak-to-average ratio and peak width (share of slots above 70% of the max)."""
    v = trace.values
    mx, mean = float(v.max()), float(v.mean())
    if mx == 0:
        return WorkloadStats(1.0, 0.0, 0.0, 0.0, all_zero=True)
    p70 = float(np.count_nonzero(v > 0.7 * mx)) / v.size
    return WorkloadStats(mx / mean, p70, mean, mx)
