"""CSV and JSON readers/writers for traces, prices, plans and cost reports."""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from typing import Iterable, TextIO

import numpy as np

from .model import CostBreakdown, Plan, PowerTrace

TRACE_HEADER = ("slot", "power_kw")
PRICE_HEADER = ("slot", "price_per_kwh")
PLAN_HEADER = ("t", "origin_i", "admitted_kw", "dropped_kw", "residual_kw")


class CsvFormatError(ValueError):
    pass


def _open_text(src):
    if isinstance(src, (str, Path)):
        return open(src, newline=""), True
    return src, False


def read_series_csv(src, header: tuple) -> np.ndarray:
    """Parse a two-column ``slot,value`` CSV strictly.

    Slots must be 0-based and contiguous; values finite and non-negative.
    """
    fh, close = _open_text(src)
    try:
        reader = csv.reader(fh)
        try:
            first = next(reader)
        except StopIteration:
            raise CsvFormatError("empty CSV") from None
        if tuple(c.strip() for c in first) != header:
            raise CsvFormatError(f"expected header {','.join(header)}, got {','.join(first)}")
        values = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise CsvFormatError(f"line {lineno}: expected 2 columns, got {len(row)}")
            try:
                slot = int(row[0])
                val = float(row[1])
            except ValueError:
                raise CsvFormatError(f"line {lineno}: unparseable row {row!r}") from None
            if slot != len(values):
                raise CsvFormatError(f"line {lineno}: expected slot {len(values)}, got {slot}")
            if not math.isfinite(val):
                raise CsvFormatError(f"line {lineno}: non-finite value")
            if val < 0:
                raise CsvFormatError(f"line {lineno}: negative value {val}")
            values.append(val)
    finally:
        if close:
            fh.close()
    if not values:
        raise CsvFormatError("CSV has no data rows")
    return np.array(values)


def write_series_csv(dst, values: Iterable[float], header: tuple) -> None:
    fh = open(dst, "w", newline="") if isinstance(dst, (str, Path)) else dst
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i, v in enumerate(values):
            w.writerow([i, repr(float(v))])
    finally:
        if isinstance(dst, (str, Path)):
            fh.close()


def read_trace_csv(src, slot_hours: float = 1.0 / 6.0, p_max=None) -> PowerTrace:
    return PowerTrace(read_series_csv(src, TRACE_HEADER), slot_hours, p_max)


def write_trace_csv(dst, trace: PowerTrace) -> None:
    write_series_csv(dst, trace.values, TRACE_HEADER)


def read_price_csv(src) -> np.ndarray:
    return read_series_csv(src, PRICE_HEADER)


def write_price_csv(dst, prices) -> None:
    write_series_csv(dst, prices, PRICE_HEADER)


def write_plan_csv(dst, plan: Plan) -> None:
    """One row per (slot, origin) pair that lies inside the horizon.

    ``residual_kw`` is the amount of that origin still unserved at the start
    of the next slot.
    """
    fh = open(dst, "w", newline="") if isinstance(dst, (str, Path)) else dst
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PLAN_HEADER)
        tau = plan.tau
        for t in range(plan.T):
            for m in range(min(tau, t) + 1):
                res = plan.residuals[t + 1, m + 1] if m < tau else 0.0
                w.writerow([t, t - m, repr(float(plan.admitted[t, m])),
                            repr(float(plan.dropped[t, m])), repr(float(res))])
    finally:
        if isinstance(dst, (str, Path)):
            fh.close()


def read_plan_csv(src, T: int, tau: int, y_max=None) -> Plan:
    """Inverse of :func:`write_plan_csv`.

    ``y_max`` defaults to the largest per-slot admitted load.
    """
    fh, close = _open_text(src)
    a = np.zeros((T, tau + 1))
    d = np.zeros((T, tau + 1))
    r = np.zeros((T + 1, tau + 1))
    try:
        reader = csv.reader(fh)
        first = next(reader, None)
        if first is None or tuple(c.strip() for c in first) != PLAN_HEADER:
            raise CsvFormatError(f"expected header {','.join(PLAN_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                t, i = int(row[0]), int(row[1])
                vals = [float(x) for x in row[2:5]]
            except (ValueError, IndexError):
                raise CsvFormatError(f"line {lineno}: unparseable row {row!r}") from None
            m = t - i
            if not (0 <= t < T and 0 <= m <= tau):
                raise CsvFormatError(f"line {lineno}: (t={t}, origin={i}) outside T={T}, tau={tau}")
            if not all(math.isfinite(v) for v in vals):
                raise CsvFormatError(f"line {lineno}: non-finite value")
            a[t, m], d[t, m] = vals[0], vals[1]
            if m < tau:
                r[t + 1, m + 1] = vals[2]
            elif abs(vals[2]) > 0:
                raise CsvFormatError(f"line {lineno}: residual carried past the delay tolerance")
    finally:
        if close:
            fh.close()
    peak = float(a.sum(axis=1).max())
    return Plan(a, d, r, peak if y_max is None else y_max)


def cost_to_json(cost: CostBreakdown, **extra) -> str:
    payload = cost.to_dict()
    payload.update(extra)
    return json.dumps(payload, indent=2, sort_keys=True)


def plan_to_string(plan: Plan) -> str:
    buf = io.StringIO()
    write_plan_csv(buf, plan)
    return buf.getvalue()
