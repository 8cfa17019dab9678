"""Time series container and the fits used to read off asymptotics.

Three questions get asked of a trajectory: what power of ``t`` does a field
grow like, does a combination of fields stay in a bounded band, and does the
reciprocal of a field fall linearly to zero (finite-time blow-up).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np

from .errors import InsufficientData, NoBlowupTrend

MIN_POINTS = 8


class TimeSeries:
    """Columns sampled at strictly increasing times.

    Numeric columns are float arrays; label columns (e.g. the regime) are
    object arrays of strings.
    """

    def __init__(self, t: Sequence[float], **columns):
        t = np.asarray(t, dtype=float)
        if t.ndim != 1:
            raise ValueError("t must be one-dimensional")
        if t.size > 1 and not np.all(np.diff(t) > 0):
            raise ValueError("sample times must be strictly increasing")
        self.t = t
        self.columns: dict[str, np.ndarray] = {}
        for name, values in columns.items():
            arr = np.asarray(values)
            if arr.dtype.kind not in "fiub":
                arr = arr.astype(object)
            elif arr.dtype.kind != "f":
                arr = arr.astype(float)
            if arr.shape != t.shape:
                raise ValueError(f"column {name!r} has shape {arr.shape}, expected {t.shape}")
            self.columns[name] = arr

    def __len__(self) -> int:
        return self.t.size

    def __getitem__(self, name: str) -> np.ndarray:
        if name == "t":
            return self.t
        return self.columns[name]

    def __contains__(self, name: str) -> bool:
        return name == "t" or name in self.columns

    @property
    def names(self) -> list[str]:
        return list(self.columns)

    def window(self, lo: float = -math.inf, hi: float = math.inf) -> "TimeSeries":
        mask = (self.t >= lo) & (self.t <= hi)
        return TimeSeries(self.t[mask], **{k: v[mask] for k, v in self.columns.items()})

    def to_csv(self, path: Union[str, Path], columns: Optional[Iterable[str]] = None) -> None:
        """Write with 17 significant digits so floats round-trip exactly."""
        names = list(columns) if columns is not None else self.names
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["t", *names])
            cols = [self.t] + [self.columns[n] for n in names]
            for row in zip(*cols):
                writer.writerow([_fmt(v) for v in row])

    @classmethod
    def from_csv(cls, path: Union[str, Path]) -> "TimeSeries":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = list(reader)
        if not header or header[0] != "t":
            raise ValueError(f"{path}: first column must be 't'")
        raw = list(zip(*rows)) if rows else [() for _ in header]
        t = [float(x) for x in raw[0]]
        columns = {}
        for name, values in zip(header[1:], raw[1:]):
            try:
                columns[name] = np.array([float(x) for x in values])
            except ValueError:
                columns[name] = np.array(values, dtype=object)
        return cls(t, **columns)


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    return "%.17g" % float(v)


@dataclass(frozen=True)
class FitResult:
    exponent_or_slope: float
    intercept: float
    r_squared: float
    window: tuple[float, float]
    n_points: int

    @property
    def slope(self) -> float:
        return self.exponent_or_slope


def _linear_fit(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float, float, float]:
    """Least-squares line about the centroid: (slope, intercept, r2, x_mean, y_mean)."""
    xm = math.fsum(x) / x.size
    ym = math.fsum(y) / y.size
    dx = x - xm
    dy = y - ym
    sxx = math.fsum(dx * dx)
    if sxx == 0.0:
        raise InsufficientData("abscissae are all equal")
    slope = math.fsum(dx * dy) / sxx
    intercept = ym - slope * xm
    resid = dy - slope * dx
    ss_res = math.fsum(resid * resid)
    ss_tot = math.fsum(dy * dy)
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return slope, intercept, min(1.0, max(0.0, r2)), xm, ym


def _resolve_window(series: TimeSeries, window, default) -> tuple[float, float]:
    if window is None:
        window = default(series)
    lo, hi = float(window[0]), float(window[1])
    if lo > hi:
        raise ValueError(f"empty window ({lo}, {hi})")
    return lo, hi


def _last_two_decades(series: TimeSeries) -> tuple[float, float]:
    hi = float(series.t[-1])
    return hi / 100.0, hi


def fit_power_law(series: TimeSeries, field: str, window=None) -> FitResult:
    """Exponent ``p`` of ``field ~ c t^p`` from a log-log least-squares line."""
    lo, hi = _resolve_window(series, window, _last_two_decades)
    sub = series.window(lo, hi)
    t, v = sub.t, np.asarray(sub[field], dtype=float)
    keep = t > 0
    t, v = t[keep], v[keep]
    if t.size < MIN_POINTS:
        raise InsufficientData(f"{t.size} points in [{lo:g}, {hi:g}], need {MIN_POINTS}")
    if np.any(v <= 0):
        raise ValueError(f"{field} must be positive for a power-law fit")
    slope, intercept, r2, _, _ = _linear_fit(np.log(t), np.log(v))
    return FitResult(slope, intercept, r2, (float(t[0]), float(t[-1])), int(t.size))


@dataclass
class BandReport:
    sup: float
    inf: float
    decade_means: list[tuple[float, float]] = field(default_factory=list)

    @property
    def spread(self) -> float:
        return self.sup - self.inf

    @property
    def max_drift(self) -> float:
        """Largest change between consecutive decade means."""
        means = [m for _, m in self.decade_means]
        return max((abs(b - a) for a, b in zip(means, means[1:])), default=0.0)

    @property
    def total_variation(self) -> float:
        means = [m for _, m in self.decade_means]
        return math.fsum(abs(b - a) for a, b in zip(means, means[1:]))


def boundedness_window(
    series: TimeSeries,
    expr: Union[str, Callable[[TimeSeries], np.ndarray]],
    window=None,
) -> BandReport:
    """Extremes and per-decade means of ``expr`` over a time window.

    ``expr`` is a column name or a function of the windowed series, e.g.
    ``lambda s: s["A"] - K / 3 * np.log(s["B"])``. Nothing is asserted here.
    """
    lo, hi = _resolve_window(series, window, _last_two_decades)
    sub = series.window(lo, hi)
    if len(sub) < MIN_POINTS:
        raise InsufficientData(f"{len(sub)} points in [{lo:g}, {hi:g}], need {MIN_POINTS}")
    values = np.asarray(sub[expr] if isinstance(expr, str) else expr(sub), dtype=float)
    t = sub.t
    means = []
    if lo > 0:
        k = math.floor(math.log10(lo) + 1e-12)
        while 10.0**k < hi:
            d_lo, d_hi = 10.0**k, 10.0 ** (k + 1)
            last = d_hi >= hi
            mask = (t >= d_lo) & ((t <= d_hi) if last else (t < d_hi))
            if np.any(mask):
                means.append((d_lo, math.fsum(values[mask]) / int(mask.sum())))
            k += 1
    return BandReport(float(values.max()), float(values.min()), means)


def final_decade(series: TimeSeries, field: str = "Q") -> tuple[float, float]:
    """Window covering the last tenfold growth of ``field``."""
    v = np.asarray(series[field], dtype=float)
    target = v[-1] / 10.0
    below = np.nonzero(v <= target)[0]
    start = int(below[-1]) if below.size else 0
    return float(series.t[start]), float(series.t[-1])


def extrapolate_blowup(series: TimeSeries, field: str = "Q", window=None,
                       min_r_squared: Optional[float] = None) -> tuple[float, FitResult]:
    """Blow-up time from a straight-line fit of ``1/field`` against ``t``.

    A blow-up trend needs a negative slope and a root that does not precede
    the last sample (where the field is still finite).
    """
    lo, hi = _resolve_window(series, window, lambda s: final_decade(s, field))
    sub = series.window(lo, hi)
    v = np.asarray(sub[field], dtype=float)
    if sub.t.size < MIN_POINTS:
        raise InsufficientData(f"{sub.t.size} points in [{lo:g}, {hi:g}], need {MIN_POINTS}")
    if np.any(v <= 0):
        raise ValueError(f"{field} must be positive in the window")
    slope, intercept, r2, tm, ym = _linear_fit(sub.t, 1.0 / v)
    fit = FitResult(slope, intercept, r2, (float(sub.t[0]), float(sub.t[-1])), int(sub.t.size))
    if not slope < 0:
        raise NoBlowupTrend(f"1/{field} slope {slope:.3e} is not negative")
    t_star = tm - ym / slope
    if t_star < sub.t[-1]:
        raise NoBlowupTrend(
            f"fitted root t={t_star:.6g} precedes the last finite sample t={sub.t[-1]:.6g}"
        )
    if min_r_squared is not None and r2 < min_r_squared:
        raise NoBlowupTrend(f"1/{field} is not linear (r^2={r2:.4f})")
    return float(t_star), fit
