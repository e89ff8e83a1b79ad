"""Traffic-series ingestion, normalization, splits, and supervised windows.

Series files are CSV with an ISO-8601 ``timestamp`` column followed by one
column per sensor id. Timestamps must advance in constant 5-minute steps;
gaps are rejected loudly rather than imputed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import datetime, timedelta

import numpy as np

from .errors import DataError

STRIDE = timedelta(minutes=5)


@dataclass
class TimeSeriesDataset:
    values: np.ndarray  # (T, N, F)
    timestamps: list
    sensor_ids: list

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3:
            raise DataError(f"series tensor must be (time, sensors, features), got {self.values.shape}")
        if self.values.shape[0] != len(self.timestamps):
            raise DataError("timestamp count does not match series length")
        if self.values.shape[1] != len(self.sensor_ids):
            raise DataError("sensor id count does not match series width")
        if not np.all(np.isfinite(self.values)):
            t, n, _ = np.argwhere(~np.isfinite(self.values))[0]
            raise DataError(f"non-finite value at t={self.timestamps[t]} sensor={self.sensor_ids[n]}")
        for prev, cur in zip(self.timestamps, self.timestamps[1:]):
            if cur - prev != STRIDE:
                raise DataError(f"timestamp gap between {prev.isoformat()} and {cur.isoformat()}")


def load_series(path, sensor_ids):
    """Read a series CSV and align its columns to the given sensor order."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if not header or header[0] != "timestamp":
            raise DataError(f"{path}: first column must be 'timestamp', got {header[:1]}")
        file_ids = header[1:]
        missing = [sid for sid in sensor_ids if sid not in file_ids]
        if missing:
            raise DataError(f"{path}: missing sensor column {missing[0]!r}")
        unknown = [sid for sid in file_ids if sid not in set(sensor_ids)]
        if unknown:
            raise DataError(f"{path}: unknown sensor column {unknown[0]!r}")
        order = [file_ids.index(sid) for sid in sensor_ids]
        timestamps, rows = [], []
        for line_no, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DataError(f"{path}:{line_no}: expected {len(header)} fields, got {len(row)}")
            try:
                timestamps.append(datetime.fromisoformat(row[0]))
            except ValueError:
                raise DataError(f"{path}:{line_no}: bad timestamp {row[0]!r}") from None
            values = np.array([float(v) for v in row[1:]])
            rows.append(values[order])
    if not rows:
        raise DataError(f"{path}: no data rows")
    values = np.stack(rows)[:, :, None]
    return TimeSeriesDataset(values, timestamps, list(sensor_ids))


def save_series(path, dataset):
    if dataset.values.shape[2] != 1:
        raise DataError("series CSV stores one value per sensor; F > 1 needs another format")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp"] + list(dataset.sensor_ids))
        for ts, row in zip(dataset.timestamps, dataset.values[:, :, 0]):
            writer.writerow([ts.isoformat()] + [repr(float(v)) for v in row])


@dataclass
class NormStats:
    """Per-feature z-score statistics, computed on the training split only."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def from_training(cls, values):
        values = np.asarray(values, dtype=np.float64)
        mean = np.atleast_1d(values.mean(axis=(0, 1)))
        std = np.atleast_1d(values.std(axis=(0, 1)))
        # a constant feature leaves only rounding noise in its std
        floor = 1e-12 * np.maximum(1.0, np.abs(mean))
        if np.any(std <= floor):
            feat = int(np.argwhere(std <= floor)[0, 0])
            raise DataError(f"feature {feat} is constant on the training split; cannot z-score")
        return cls(mean, std)


def zscore(values, stats):
    return (np.asarray(values, dtype=np.float64) - stats.mean) / stats.std


def inverse_zscore(values, stats):
    return np.asarray(values, dtype=np.float64) * stats.std + stats.mean


@dataclass
class SplitSpec:
    """Chronological train/validation/test ratios."""

    ratios: tuple

    def __post_init__(self):
        self.ratios = tuple(float(r) for r in self.ratios)
        if len(self.ratios) != 3 or any(r <= 0 for r in self.ratios):
            raise DataError(f"split needs three positive ratios, got {self.ratios}")
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise DataError(f"split ratios must sum to 1, got {sum(self.ratios)}")


def chronological_split(values, spec, min_length=None):
    """Contiguous train -> val -> test ranges; boundaries at floor(ratio * T)."""
    values = np.asarray(values)
    t = values.shape[0]
    first = int(np.floor(spec.ratios[0] * t))
    second = int(np.floor((spec.ratios[0] + spec.ratios[1]) * t))
    parts = (values[:first], values[first:second], values[second:])
    if min_length is not None:
        names = ("train", "validation", "test")
        for name, part in zip(names, parts):
            if part.shape[0] < min_length:
                raise DataError(f"{name} partition has {part.shape[0]} steps; needs at least {min_length}")
    return parts


def make_windows(partition, history, horizon):
    """All stride-1 windows: (n, history, N, F) inputs and the targets that
    immediately follow them."""
    partition = np.asarray(partition, dtype=np.float64)
    total = history + horizon
    if partition.shape[0] < total:
        raise DataError(f"partition of {partition.shape[0]} steps cannot fit {history}+{horizon} windows")
    sliding = np.lib.stride_tricks.sliding_window_view(partition, total, axis=0)
    sliding = np.moveaxis(sliding, -1, 1)  # (n, total, N, F)
    return sliding[:, :history].copy(), sliding[:, history:].copy()


def batch_indices(n_windows, batch_size, rng):
    """One epoch of shuffled batches covering every window exactly once."""
    order = rng.permutation(n_windows)
    return [order[i : i + batch_size] for i in range(0, n_windows, batch_size)]
