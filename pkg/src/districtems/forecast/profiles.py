"""Daily chunking, day features and the MAE metric."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from datetime import date, timedelta

import numpy as np

from ..core import TimeGrid

DAY_TYPES = ("weekday", "weekend", "holiday")


@dataclass
class DailyProfileSet:
    profiles: np.ndarray  # (days, samples_per_day)
    features: np.ndarray  # (days, n_features)
    dates: list[date]

    def __post_init__(self):
        self.profiles = np.atleast_2d(np.asarray(self.profiles, dtype=float))
        self.features = np.atleast_2d(np.asarray(self.features, dtype=float))
        if self.features.shape[0] != self.profiles.shape[0] or len(self.dates) != self.profiles.shape[0]:
            raise ValueError("features, dates and profiles must align one-to-one")

    def __len__(self) -> int:
        return self.profiles.shape[0]


def day_type(d: date, holidays=()) -> str:
    if d in set(holidays):
        return "holiday"
    return "weekend" if d.weekday() >= 5 else "weekday"


def day_features(d: date, mean_temp: float, holidays=(), extra: list[float] | None = None) -> np.ndarray:
    """One-hot day type followed by the mean outdoor temperature (and any extra features)."""
    onehot = [1.0 if day_type(d, holidays) == t else 0.0 for t in DAY_TYPES]
    return np.array(onehot + [float(mean_temp)] + list(extra or []))


def chunk_daily(series, grid: TimeGrid, t_amb=None, holidays=(), prev_day_mean: bool = False) -> DailyProfileSet:
    """Split a series starting at ``grid.start`` into whole days.

    A trailing partial day is dropped with a warning.  ``t_amb`` (same
    sampling) provides the daily mean temperature feature; without it the
    feature is zero.
    """
    y = np.asarray(series, dtype=float).ravel()
    if y.size == 0:
        raise ValueError("cannot chunk an empty series")
    per_day = int(round(24 * 60 / grid.dt))
    days = y.size // per_day
    if days == 0:
        raise ValueError(f"series shorter than one day ({y.size} < {per_day} samples)")
    if y.size % per_day:
        warnings.warn(f"dropping {y.size % per_day} trailing samples of an incomplete day", stacklevel=2)
    profiles = y[: days * per_day].reshape(days, per_day)
    temps = np.zeros(days)
    if t_amb is not None:
        t = np.asarray(t_amb, dtype=float).ravel()[: days * per_day]
        temps = t.reshape(days, per_day).mean(axis=1)
    dates = [grid.start.date() + timedelta(days=k) for k in range(days)]
    feats = []
    for k, d in enumerate(dates):
        extra = None
        if prev_day_mean:
            extra = [profiles[k - 1].mean() if k > 0 else profiles[0].mean()]
        feats.append(day_features(d, temps[k], holidays, extra))
    return DailyProfileSet(profiles, np.array(feats), dates)


def mae(forecast, actual) -> float:
    f = np.asarray(forecast, dtype=float).ravel()
    a = np.asarray(actual, dtype=float).ravel()
    if f.size == 0:
        raise ValueError("mae of empty series")
    if f.shape != a.shape:
        raise ValueError(f"length mismatch: {f.size} vs {a.size}")
    return float(np.mean(np.abs(f - a)))
