"""Forecast quality metrics (MAE / RMSE / MAPE) and the historical-average baseline.

MAPE divides by the absolute ground truth and skips entries whose truth is
below a floor (percentage error is undefined at zero); the number of entries
actually used is reported next to it. Horizon buckets follow the 5-minute
resolution convention: steps 1-3, 4-6, and 7-12 for 15 min, 30 min, and
1 hour.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import NumericalError

MAPE_FLOOR = 1e-3
HORIZON_BUCKETS = (("15min", 0, 3), ("30min", 3, 6), ("1hour", 6, 12))


@dataclass
class BucketMetrics:
    mae: float
    rmse: float
    mape_pct: float | None
    mape_count: int
    count: int

    def __post_init__(self):
        # power-mean inequality; allow only rounding slack
        if self.mae > self.rmse * (1.0 + 1e-12) + 1e-300:
            raise NumericalError(f"MAE {self.mae} exceeds RMSE {self.rmse}")


@dataclass
class MetricsReport:
    overall: BucketMetrics
    buckets: dict

    def to_dict(self):
        out = {"overall": asdict(self.overall)}
        for name, bucket in self.buckets.items():
            out[name] = asdict(bucket)
        return out

    @classmethod
    def from_dict(cls, doc):
        overall = BucketMetrics(**doc["overall"])
        buckets = {k: BucketMetrics(**v) for k, v in doc.items() if k != "overall"}
        return cls(overall, buckets)


def _bucket(pred, truth, floor):
    err = pred - truth
    abs_err = np.abs(err)
    mae = float(abs_err.mean())
    rmse = float(np.sqrt((err * err).mean()))
    mask = np.abs(truth) >= floor
    used = int(mask.sum())
    mape = float((abs_err[mask] / np.abs(truth[mask])).mean() * 100.0) if used else None
    return BucketMetrics(mae=mae, rmse=rmse, mape_pct=mape, mape_count=used, count=int(err.size))


def metrics(pred, truth, mape_floor=MAPE_FLOOR):
    """Report per horizon bucket and overall; inputs are original-scale
    (..., horizon, sensors, features) stacks."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch for metrics: {pred.shape} vs {truth.shape}")
    if pred.ndim < 3:
        raise ValueError(f"metrics expect (..., horizon, sensors, features), got {pred.shape}")
    horizon_axis = pred.ndim - 3
    horizon = pred.shape[horizon_axis]
    buckets = {}
    for name, start, stop in HORIZON_BUCKETS:
        if start >= horizon:
            continue
        sl = [slice(None)] * pred.ndim
        sl[horizon_axis] = slice(start, min(stop, horizon))
        sl = tuple(sl)
        buckets[name] = _bucket(pred[sl], truth[sl], mape_floor)
    return MetricsReport(overall=_bucket(pred, truth, mape_floor), buckets=buckets)


def ha_baseline(window, horizon):
    """Historical average: the input-window mean per sensor and feature,
    repeated across every forecast step."""
    window = np.asarray(window, dtype=np.float64)
    if window.ndim < 3:
        raise ValueError(f"window must be (..., history, sensors, features), got {window.shape}")
    mean = window.mean(axis=window.ndim - 3, keepdims=True)
    reps = [1] * window.ndim
    reps[window.ndim - 3] = horizon
    return np.tile(mean, reps)
