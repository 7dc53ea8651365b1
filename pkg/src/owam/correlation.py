"""Neighbour selection from Pearson correlation of outlier-score streams."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np


@dataclass(frozen=True)
class PearsonResult:
    r: float
    degenerate: bool = False


def pearson(x, y) -> PearsonResult:
    """Sample Pearson correlation; a zero-variance input gives r = 0 flagged degenerate."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"length mismatch: {x.shape} vs {y.shape}")
    if len(x) < 2:
        raise ValueError("need at least 2 points")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0 or syy == 0:
        return PearsonResult(0.0, True)
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return PearsonResult(min(1.0, max(-1.0, r)))


@dataclass(frozen=True)
class WeightEntry:
    neighbor: str
    r: float
    weight: float
    selected: bool


@dataclass
class CorrelationWeightMap:
    target: str
    theta: float
    k: int
    entries: list[WeightEntry] = field(default_factory=list)  # ranked, best first

    @property
    def selected(self) -> list[WeightEntry]:
        return [e for e in self.entries if e.selected]

    @property
    def neighbors(self) -> list[str]:
        return [e.neighbor for e in self.selected]

    @property
    def weights(self) -> np.ndarray:
        return np.array([e.weight for e in self.selected], dtype=float)


def selection_count(theta: float, n_sensors: int) -> int:
    """k = floor(theta * N), clamped to the N - 1 available neighbours."""
    if not 0 <= theta <= 1:
        raise ValueError("theta must lie in [0, 1]")
    k = math.floor(theta * n_sensors + 1e-9)
    return min(k, n_sensors - 1)


def compute_weights(
    scores: Mapping[str, Sequence[float]],
    target: str,
    theta: float,
    signed: bool = False,
    history: int | None = None,
) -> CorrelationWeightMap:
    """Rank every other sensor by |r| against the target's score stream and keep the top k.

    ``scores`` maps sensor id to an aligned score sequence (same windows for
    every sensor). ``history`` restricts the correlation to the most recent
    windows; ``None`` uses everything. With ``signed`` the ranking and weight
    use r clipped at zero instead of |r|.
    """
    if target not in scores:
        raise KeyError(f"target {target!r} has no score stream")
    lengths = {s: len(v) for s, v in scores.items()}
    n = lengths[target]
    bad = sorted(s for s, m in lengths.items() if m != n)
    if bad:
        raise ValueError(f"score streams misaligned with target {target!r}: {bad}")
    k = selection_count(theta, len(scores))
    lo = 0 if history is None else max(0, n - history)
    tgt = np.asarray(scores[target], dtype=float)[lo:]
    rows = []
    for s in sorted(scores):
        if s == target:
            continue
        r = pearson(tgt, np.asarray(scores[s], dtype=float)[lo:]).r
        w = max(r, 0.0) if signed else abs(r)
        rows.append((s, r, w))
    # sorted() above makes ties fall back to lexicographic sensor id (stable sort)
    rows.sort(key=lambda row: -row[2])
    entries = [WeightEntry(s, r, w, i < k) for i, (s, r, w) in enumerate(rows)]
    return CorrelationWeightMap(target, theta, k, entries)


def write_weight_maps(maps: Sequence[CorrelationWeightMap], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["target", "neighbor", "r", "weight", "selected"])
        for m in maps:
            for e in m.entries:
                w.writerow([m.target, e.neighbor, repr(e.r), repr(e.weight), int(e.selected)])
