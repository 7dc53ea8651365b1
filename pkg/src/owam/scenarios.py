"""Constructed synthetic datasets used by the experiments and acceptance checks."""

from __future__ import annotations

import csv
from datetime import datetime, timezone

import numpy as np

from .stream import AnomalySpec, Dataset, generate_synthetic, random_anomalies

STEPS_PER_DAY = 288


def planted_dataset(
    seed: int,
    n_sensors: int = 20,
    n_planted: int = 5,
    days: int = 14,
    rate: float = 0.10,
    noise_sigma: float = 0.1,
    lag: int = 2,
    min_len: int = 6,
    max_len: int = 24,
    phase_jitter_h: float = 0.0,
) -> tuple[Dataset, str, list[str]]:
    """Target ``s000`` shares its anomaly schedule with ``n_planted`` upstream sensors.

    The planted sensors see each incident ``lag`` steps before the target; every
    other sensor gets its own independent schedule. With ``phase_jitter_h`` > 0
    the unrelated sensors also get their own daily shape (peaks moved by up to
    that many hours, level scaled by 0.6 to 1.4), as distant sensors in a real
    network would; the target and its upstream group share one shape.
    Returns the dataset, the target id and the planted ids.
    """
    ids = [f"s{i:03d}" for i in range(n_sensors)]
    target, planted = ids[0], ids[1:1 + n_planted]
    groups = [[target, *planted]] + [[s] for s in ids[1 + n_planted:]]
    n_steps = days * STEPS_PER_DAY
    anomalies = random_anomalies(groups, n_steps, rate, seed, min_len=min_len, max_len=max_len, lag=lag)
    shifts = scales = None
    if phase_jitter_h > 0:
        rng = np.random.default_rng([seed, 1])
        n_free = n_sensors - 1 - n_planted
        max_shift = int(round(phase_jitter_h * 3600 / 300))
        shifts = [0] * (1 + n_planted) + list(rng.integers(-max_shift, max_shift + 1, size=n_free))
        scales = [1.0] * (1 + n_planted) + list(rng.uniform(0.6, 1.4, size=n_free))
    ds = generate_synthetic(n_sensors, n_steps, seed, "diurnal", noise_sigma, anomalies, sensor_ids=ids,
                            shift_steps=shifts, level_scale=scales)
    return ds, target, planted


def drift_dataset(
    seed: int,
    n_sensors: int = 12,
    n_planted: int = 3,
    days: int = 20,
    shift_at: float = 0.6,
    rate: float = 0.10,
    noise_sigma: float = 0.1,
    lag: int = 2,
    level_shift: float = 1.3,
    min_len: int = 6,
    max_len: int = 24,
) -> tuple[Dataset, str, list[str], list[str]]:
    """Regime shift at ``shift_at`` of the stream.

    Before the shift the target's incidents are announced by group A; after it
    by group B, and the target's traffic level is multiplied by
    ``level_shift``. Returns (dataset, target, group A, group B).
    """
    ids = [f"s{i:03d}" for i in range(n_sensors)]
    target = ids[0]
    group_a = ids[1:1 + n_planted]
    group_b = ids[1 + n_planted:1 + 2 * n_planted]
    others = ids[1 + 2 * n_planted:]
    n_steps = days * STEPS_PER_DAY
    cut = int(shift_at * n_steps)
    rng = np.random.default_rng(seed)
    s1, s2, s3 = (int(x) for x in rng.integers(0, 2**31, size=3))

    before = random_anomalies([[target, *group_a], *([s] for s in group_b + others)], cut, rate, s1,
                              min_len=min_len, max_len=max_len, lag=lag)
    after = random_anomalies([[target, *group_b], *([s] for s in group_a + others)], n_steps - cut, rate, s2,
                             min_len=min_len, max_len=max_len, lag=lag)
    after = [AnomalySpec(a.sensor_ids, a.start + cut, a.end + cut, a.kind, a.magnitude) for a in after]
    shift = [AnomalySpec((target,), cut, n_steps, "shift", level_shift)] if level_shift != 1 else []
    ds = generate_synthetic(n_sensors, n_steps, s3, "diurnal", noise_sigma, before + after + shift, sensor_ids=ids)
    return ds, target, group_a, group_b


def metr_la_like(
    seed: int,
    n_sensors: int = 207,
    days: int = 14,
    n_targets: int = 5,
    group_size: int = 3,
    rate: float = 0.10,
    noise_sigma: float = 0.1,
    missing: float = 0.02,
    lag: int = 2,
) -> tuple[Dataset, list[str], np.ndarray]:
    """Stand-in for a METR-LA export: numeric sensor ids, speed-like drops, zero-coded gaps.

    Each of ``n_targets`` targets shares its congestion schedule with
    ``group_size`` upstream sensors; everything else is independent. Returns
    the clean dataset, the target ids and a boolean mask of cells to write as
    0 (missing).
    """
    rng = np.random.default_rng(seed)
    ids = [str(v) for v in sorted(rng.choice(np.arange(700_000, 800_000), n_sensors, replace=False))]
    order = [ids[i] for i in rng.permutation(n_sensors)]
    targets, groups, used = [], [], set()
    for t in range(n_targets):
        members = order[t * (group_size + 1):(t + 1) * (group_size + 1)]
        targets.append(members[0])
        groups.append(members)
        used.update(members)
    groups += [[s] for s in ids if s not in used]
    n_steps = days * STEPS_PER_DAY
    s1, s2 = (int(x) for x in rng.integers(0, 2**31, size=2))
    anomalies = random_anomalies(groups, n_steps, rate, s1, min_len=6, max_len=24, magnitude=(0.3, 0.6), lag=lag)
    ds = generate_synthetic(n_sensors, n_steps, s2, "diurnal", noise_sigma, anomalies, level=60.0, sensor_ids=ids)
    mask = rng.random(ds.values.shape) < missing
    mask[0] = mask[-1] = False
    return ds, sorted(targets), mask


def write_metr_la_csv(dataset: Dataset, path, missing_mask: np.ndarray | None = None) -> None:
    """Wide CSV in the pandas export layout: unnamed index column, ISO timestamps, 0 for missing."""
    vals = dataset.values.round(4)
    if missing_mask is not None:
        vals = np.where(missing_mask, 0.0, vals)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["", *dataset.sensor_ids])
        for t, row in zip(dataset.timestamps, vals):
            stamp = datetime.fromtimestamp(int(t), tz=timezone.utc).strftime("%Y-%m-%d %H:%M:%S")
            w.writerow([stamp, *(repr(float(v)) for v in row)])
