"""Flow Probability Distributions: per-window normalisation of a sensor stream."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .stream import SensorSeries


@dataclass(frozen=True)
class FpdConfig:
    window: int = 3600
    bin_interval: int = 300

    def __post_init__(self):
        if self.bin_interval <= 0 or self.window % self.bin_interval:
            raise ValueError("window must be a positive multiple of bin_interval")
        if self.window // self.bin_interval < 2:
            raise ValueError("an FPD needs at least 2 bins")

    @property
    def bins(self) -> int:
        return self.window // self.bin_interval


@dataclass(frozen=True)
class Fpd:
    sensor: str
    window_start: int
    probs: np.ndarray


def aggregate_window(values) -> np.ndarray:
    """Normalise one window of B non-negative readings to a probability vector.

    An all-zero window maps to the uniform distribution.
    """
    v = np.asarray(values, dtype=float)
    if v.ndim != 1 or len(v) < 2:
        raise ValueError("expected a 1-D window of at least 2 values")
    if not np.all(np.isfinite(v)) or np.any(v < 0):
        raise ValueError("window values must be finite and non-negative")
    total = v.sum()
    if total == 0:
        return np.full(len(v), 1.0 / len(v))
    return v / total


def fpd_matrix(values: np.ndarray, bins: int) -> np.ndarray:
    """Vectorised aggregate_window over consecutive complete windows of a 1-D stream.

    Returns an (n_windows, bins) array; a trailing partial window is dropped.
    """
    v = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(v)) or np.any(v < 0):
        raise ValueError("stream values must be finite and non-negative")
    n = len(v) // bins
    chunks = v[: n * bins].reshape(n, bins)
    totals = chunks.sum(axis=1, keepdims=True)
    out = np.full_like(chunks, 1.0 / bins)
    nz = totals[:, 0] > 0
    out[nz] = chunks[nz] / totals[nz]
    return out


def fpd_stream(series: SensorSeries, cfg: FpdConfig = FpdConfig()) -> list[Fpd]:
    if series.sample_interval != cfg.bin_interval:
        raise ValueError(
            f"series interval {series.sample_interval}s does not match bin interval {cfg.bin_interval}s"
        )
    B = cfg.bins
    probs = fpd_matrix(series.values, B)
    return [
        Fpd(series.id, int(series.timestamps[i * B]), probs[i]) for i in range(len(probs))
    ]


def write_fpds(fpds: Iterable[Fpd], path: str | Path) -> None:
    """Debug dump, one row per FPD: sensor,window_start,p1..pB."""
    fpds = list(fpds)
    B = len(fpds[0].probs) if fpds else 0
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sensor", "window_start", *(f"p{i + 1}" for i in range(B))])
        for f in fpds:
            w.writerow([f.sensor, f.window_start, *(repr(float(p)) for p in f.probs)])
