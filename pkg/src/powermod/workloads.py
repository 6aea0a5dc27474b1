"""Synthetic data-center workloads, time-of-day profiles and price series.

The presets are calibrated only to qualitative shape: a wide, shallow
diurnal curve (google_like), a deep diurnal swing (facebook_like), a narrow
evening peak (mediaserver_like), and the same narrow peak with a flash-crowd
surge on day 15 (synthetic_like).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .model import PowerTrace, Tariff

SLOTS_PER_DAY = 144
PRESETS = ("google_like", "facebook_like", "mediaserver_like", "synthetic_like")


@dataclass(frozen=True)
class Surge:
    day: int
    start_slot: int
    duration_slots: int
    magnitude_kw: float


@dataclass(frozen=True)
class GeneratorSpec:
    """Parameters of a synthetic trace.

    ``day`` in :class:`Surge` is 0-based; ``start_slot`` is the slot of day.
    """

    profile: tuple
    noise_sigma: float
    days: int
    peak_target: float
    surge: Optional[Surge] = None
    seed: int = 0
    slot_hours: float = 1.0 / 6.0

    def without_surge(self) -> "GeneratorSpec":
        return GeneratorSpec(self.profile, self.noise_sigma, self.days, self.peak_target,
                             None, self.seed, self.slot_hours)

    def to_json(self) -> str:
        d = asdict(self)
        d["profile"] = list(self.profile)
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorSpec":
        d = dict(d)
        surge = d.pop("surge", None)
        return cls(profile=tuple(float(v) for v in d.pop("profile")),
                   surge=Surge(**surge) if surge else None, **d)


def generate(spec: GeneratorSpec) -> PowerTrace:
    """Tile the daily profile, add Gaussian noise and the optional surge, then clip."""
    profile = np.asarray(spec.profile, dtype=float)
    if profile.max() > spec.peak_target:
        raise ValueError(f"profile maximum {profile.max():g} exceeds peak target {spec.peak_target:g}")
    if spec.days < 1:
        raise ValueError("days must be positive")
    rng = np.random.default_rng(spec.seed)
    T = spec.days * profile.size
    values = np.tile(profile, spec.days) + rng.normal(0.0, spec.noise_sigma, T) if spec.noise_sigma > 0 \
        else np.tile(profile, spec.days)
    if spec.surge is not None:
        s = spec.surge
        if not 0 <= s.day < spec.days:
            raise ValueError("surge day outside the trace")
        lo = s.day * profile.size + s.start_slot
        values[lo:lo + s.duration_slots] += s.magnitude_kw
    values = np.clip(values, 0.0, spec.peak_target)
    return PowerTrace(values, spec.slot_hours, spec.peak_target)


def _hours(slots_per_day: int = SLOTS_PER_DAY) -> np.ndarray:
    return np.arange(slots_per_day) * 24.0 / slots_per_day


def _diurnal(mean: float, amplitude: float, peak_hour: float) -> np.ndarray:
    return mean + amplitude * np.cos(2 * np.pi * (_hours() - peak_hour) / 24.0)


def _evening_bump(base: float, height: float, peak_hour: float = 20.0, width_h: float = 1.5) -> np.ndarray:
    return base + height * np.exp(-0.5 * ((_hours() - peak_hour) / width_h) ** 2)


def preset(name: str, seed: int = 0, days: int = 30) -> GeneratorSpec:
    """Named generator presets (peaks of 3 MW, and 5.022 MW for the surge preset)."""
    if name == "google_like":
        prof, sigma, peak, surge = _diurnal(2400.0, 350.0, 15.0), 120.0, 3000.0, None
    elif name == "facebook_like":
        prof, sigma, peak, surge = _diurnal(1800.0, 900.0, 14.0), 150.0, 3000.0, None
    elif name == "mediaserver_like":
        prof, sigma, peak, surge = _evening_bump(900.0, 1900.0), 100.0, 3000.0, None
    elif name == "synthetic_like":
        prof, sigma, peak = _evening_bump(900.0, 1900.0), 100.0, 5022.0
        surge = Surge(day=min(14, days - 1), start_slot=114, duration_slots=12, magnitude_kw=3000.0)
    else:
        raise ValueError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return GeneratorSpec(tuple(float(v) for v in prof), sigma, days, peak, surge, seed)


def extract_time_of_day(trace: PowerTrace) -> tuple[np.ndarray, float]:
    """Per-slot-of-day mean and the standard deviation of the residual."""
    spd = trace.slots_per_day
    if trace.T % spd:
        raise ValueError(f"trace length {trace.T} is not a whole number of {spd}-slot days")
    days = trace.values.reshape(-1, spd)
    profile = days.mean(axis=0)
    sigma = float((days - profile).std())
    return profile, sigma


def correlated_prices(trace: PowerTrace, alpha_min: float = 0.022, alpha_max: float = 0.183,
                      sign: str = "positive", peak_price: float = 0.0) -> Tariff:
    """Energy prices that are an affine map of demand, rising or falling with it."""
    p = trace.values
    lo, hi = float(p.min()), float(p.max())
    if hi <= lo:
        raise ValueError("correlated prices need a non-constant trace")
    frac = (p - lo) / (hi - lo)
    if sign == "negative":
        frac = (hi - p) / (hi - lo)
    elif sign != "positive":
        raise ValueError("sign must be 'positive' or 'negative'")
    return Tariff(frac * (alpha_max - alpha_min) + alpha_min, peak_price)


def hold_hourly(hourly_prices, slots_per_hour: int = 6) -> np.ndarray:
    """Expand an hourly price series to slot resolution."""
    return np.repeat(np.asarray(hourly_prices, dtype=float), slots_per_hour)


def synthetic_hourly_prices(days: int = 30, seed: int = 0, low: float = 0.022,
                            high: float = 0.163) -> np.ndarray:
    """Day-ahead style hourly prices: a daily double hump plus noise, kept in [low, high]."""
    rng = np.random.default_rng(seed)
    h = np.arange(24)
    shape = 0.5 * np.exp(-0.5 * ((h - 9) / 2.5) ** 2) + np.exp(-0.5 * ((h - 18) / 2.0) ** 2)
    shape = shape / shape.max()
    daily = np.tile(low + (high - low) * (0.15 + 0.75 * shape), days)
    noisy = daily + rng.normal(0.0, 0.05 * (high - low), daily.size)
    return np.clip(noisy, low, high)
