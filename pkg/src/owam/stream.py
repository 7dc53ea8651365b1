"""Sensor streams: data model, CSV ingestion with gap repair, and a synthetic generator."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

FLOW_COUNT = "flow_count"
SPEED = "speed"
ANOMALY_KINDS = ("spike", "drop", "shift")


class IngestError(ValueError):
    """Raised when a CSV file cannot be turned into a valid dataset."""


@dataclass(frozen=True)
class SensorSeries:
    id: str
    timestamps: np.ndarray  # int64 epoch seconds
    values: np.ndarray  # float64
    sample_interval: int = 300

    def __post_init__(self):
        if not self.id:
            raise ValueError("sensor id must be non-empty")
        if len(self.timestamps) != len(self.values):
            raise ValueError(f"{self.id}: timestamps and values differ in length")
        if len(self.timestamps) > 1 and np.any(np.diff(self.timestamps) <= 0):
            raise ValueError(f"{self.id}: timestamps must be strictly increasing")

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class Dataset:
    """Time-aligned sensor streams on one uniform grid.

    ``values`` is an (n_steps, n_sensors) array; column order follows ``sensor_ids``.
    """

    sensor_ids: tuple[str, ...]
    timestamps: np.ndarray
    values: np.ndarray
    sample_interval: int = 300
    indicator_kind: str = FLOW_COUNT

    def __post_init__(self):
        if len(self.sensor_ids) < 2:
            raise ValueError("a dataset needs at least 2 sensors")
        if len(set(self.sensor_ids)) != len(self.sensor_ids):
            raise ValueError("sensor ids must be unique")
        if any(not s for s in self.sensor_ids):
            raise ValueError("sensor ids must be non-empty")
        if self.values.shape != (len(self.timestamps), len(self.sensor_ids)):
            raise ValueError(
                f"values shape {self.values.shape} does not match "
                f"({len(self.timestamps)}, {len(self.sensor_ids)})"
            )
        if self.indicator_kind not in (FLOW_COUNT, SPEED):
            raise ValueError(f"unknown indicator kind {self.indicator_kind!r}")
        self.timestamps.setflags(write=False)
        self.values.setflags(write=False)

    @property
    def n_steps(self) -> int:
        return len(self.timestamps)

    @property
    def n_sensors(self) -> int:
        return len(self.sensor_ids)

    def index(self, sensor: str) -> int:
        try:
            return self.sensor_ids.index(sensor)
        except ValueError:
            raise KeyError(f"unknown sensor {sensor!r}") from None

    def column(self, sensor: str) -> np.ndarray:
        return self.values[:, self.index(sensor)]

    def series(self, sensor: str) -> SensorSeries:
        return SensorSeries(sensor, self.timestamps, self.column(sensor), self.sample_interval)

    def slice(self, start: int, stop: int) -> "Dataset":
        return Dataset(
            self.sensor_ids,
            self.timestamps[start:stop].copy(),
            self.values[start:stop].copy(),
            self.sample_interval,
            self.indicator_kind,
        )

    def equals(self, other: "Dataset") -> bool:
        return (
            self.sensor_ids == other.sensor_ids
            and self.sample_interval == other.sample_interval
            and np.array_equal(self.timestamps, other.timestamps)
            and np.array_equal(self.values, other.values)
        )


@dataclass(frozen=True)
class AnomalySpec:
    sensor_ids: tuple[str, ...]
    start: int
    end: int
    kind: str = "spike"
    magnitude: float = 3.0

    def __post_init__(self):
        if self.start >= self.end:
            raise ValueError("anomaly start must precede end")
        if self.kind not in ANOMALY_KINDS:
            raise ValueError(f"unknown anomaly kind {self.kind!r}")
        if not self.magnitude > 0:
            raise ValueError("anomaly magnitude must be positive")


@dataclass
class RepairLog:
    """Number of cells filled per sensor during ingestion."""

    filled: dict[str, int] = field(default_factory=dict)


# ---------------------------------------------------------------- ingestion


def _parse_timestamp(text: str) -> int:
    text = text.strip()
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return _parse_iso(text)
    except ValueError:
        raise ValueError(f"bad timestamp {text!r}") from None


def _parse_iso(text: str) -> int:
    dt = datetime.fromisoformat(text.replace("Z", "+00:00"))
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def _parse_value(text: str, zero_is_missing: bool) -> float:
    text = text.strip()
    if text == "" or text.lower() in ("nan", "na", "null"):
        return math.nan
    v = float(text)
    if not math.isfinite(v) or v < 0:
        raise ValueError(f"value must be finite and non-negative, got {text!r}")
    if zero_is_missing and v == 0:
        return math.nan
    return v


def interpolate_gaps(values: np.ndarray) -> tuple[np.ndarray, int]:
    """Fill NaNs linearly between valid neighbours; extend the nearest value at the edges.

    Returns the repaired copy and the number of filled cells. A column with no
    valid value at all is rejected.
    """
    values = np.asarray(values, dtype=float)
    missing = np.isnan(values)
    n_missing = int(missing.sum())
    if n_missing == 0:
        return values.copy(), 0
    if n_missing == len(values):
        raise IngestError("no valid readings")
    idx = np.arange(len(values))
    # np.interp holds the end values constant outside the valid range
    out = values.copy()
    out[missing] = np.interp(idx[missing], idx[~missing], values[~missing])
    return out, n_missing


def _grid(ts: np.ndarray, sample_interval: int) -> np.ndarray:
    t0, t1 = int(ts[0]), int(ts[-1])
    return np.arange(t0, t1 + 1, sample_interval, dtype=np.int64)


def load_csv(
    path: str | Path,
    layout: str = "wide",
    sample_interval: int = 300,
    indicator_kind: str = FLOW_COUNT,
    zero_is_missing: bool = False,
    repair_log: RepairLog | None = None,
) -> Dataset:
    """Read a wide or long CSV file into a repaired, uniformly gridded Dataset.

    Timestamps absent from the file but on the ``sample_interval`` grid are
    treated as missing rows and interpolated like empty cells.
    """
    path = Path(path)
    if layout not in ("wide", "long"):
        raise ValueError(f"layout must be 'wide' or 'long', got {layout!r}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError(f"{path}: empty file") from None
        if layout == "wide":
            sensors, ts, cells = _read_wide(path, header, reader, zero_is_missing)
        else:
            sensors, ts, cells = _read_long(path, header, reader, zero_is_missing)

    if len(ts) == 0:
        raise IngestError(f"{path}: no data rows")
    if np.any(np.diff(ts) <= 0):
        bad = int(np.argmax(np.diff(ts) <= 0)) + 1
        raise IngestError(f"{path}: timestamps not strictly increasing at row {bad + 1}")
    offsets = ts - ts[0]
    if np.any(offsets % sample_interval):
        raise IngestError(f"{path}: timestamps are off the {sample_interval}s grid")

    grid = _grid(ts, sample_interval)
    full = np.full((len(grid), len(sensors)), np.nan)
    full[(offsets // sample_interval).astype(int)] = cells
    log = repair_log if repair_log is not None else RepairLog()
    for j, sensor in enumerate(sensors):
        try:
            full[:, j], log.filled[sensor] = interpolate_gaps(full[:, j])
        except IngestError:
            raise IngestError(f"{path}: sensor {sensor!r} has no valid readings") from None
    return Dataset(tuple(sensors), grid, full, sample_interval, indicator_kind)


def _read_wide(path, header, reader, zero_is_missing):
    # pandas exports of METR-LA/PEMS-BAY leave the index column unnamed
    if len(header) < 2 or header[0].strip().lower() not in ("timestamp", ""):
        raise IngestError(f"{path}: wide header must be 'timestamp,<sensor>,...'")
    sensors = [h.strip() for h in header[1:]]
    ts, rows = [], []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise IngestError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            ts.append(_parse_timestamp(row[0]))
            rows.append([_parse_value(c, zero_is_missing) for c in row[1:]])
        except ValueError as exc:
            raise IngestError(f"{path}:{lineno}: {exc}") from None
    return sensors, np.asarray(ts, dtype=np.int64), np.asarray(rows, dtype=float).reshape(len(ts), len(sensors))


def _read_long(path, header, reader, zero_is_missing):
    if [h.strip().lower() for h in header] != ["timestamp", "sensor", "value"]:
        raise IngestError(f"{path}: long header must be 'timestamp,sensor,value'")
    sensors: dict[str, int] = {}
    cells: dict[tuple[int, int], float] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 3:
            raise IngestError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
        try:
            t = _parse_timestamp(row[0])
            name = row[1].strip()
            if not name:
                raise ValueError("empty sensor id")
            v = _parse_value(row[2], zero_is_missing)
        except ValueError as exc:
            raise IngestError(f"{path}:{lineno}: {exc}") from None
        j = sensors.setdefault(name, len(sensors))
        if (t, j) in cells:
            raise IngestError(f"{path}:{lineno}: duplicate reading for {name!r} at {row[0]}")
        cells[(t, j)] = v
    ts = np.array(sorted({t for t, _ in cells}), dtype=np.int64)
    pos = {t: i for i, t in enumerate(ts)}
    out = np.full((len(ts), len(sensors)), np.nan)
    for (t, j), v in cells.items():
        out[pos[t], j] = v
    return list(sensors), ts, out


def write_csv(dataset: Dataset, path: str | Path, layout: str = "wide") -> None:
    """Write a dataset in canonical form (integer epoch timestamps, repr floats)."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if layout == "wide":
            w.writerow(["timestamp", *dataset.sensor_ids])
            for t, row in zip(dataset.timestamps, dataset.values):
                w.writerow([int(t), *(repr(float(v)) for v in row)])
        elif layout == "long":
            w.writerow(["timestamp", "sensor", "value"])
            for t, row in zip(dataset.timestamps, dataset.values):
                for s, v in zip(dataset.sensor_ids, row):
                    w.writerow([int(t), s, repr(float(v))])
        else:
            raise ValueError(f"layout must be 'wide' or 'long', got {layout!r}")


# ---------------------------------------------------------------- synthetic data


def diurnal_profile(n_steps: int, sample_interval: int = 300, level: float = 100.0,
                    shift_steps: int = 0) -> np.ndarray:
    """Two-peaked daily traffic shape (morning and evening rush), strictly positive.

    ``shift_steps`` delays the whole day by that many samples.
    """
    # integer seconds-of-day keeps every day's profile bit-identical
    steps = np.arange(n_steps, dtype=np.int64) - shift_steps
    hour = (steps * sample_interval % 86400) / 3600.0
    shape = (
        0.35
        + 0.9 * np.exp(-0.5 * ((hour - 8.0) / 1.5) ** 2)
        + 0.8 * np.exp(-0.5 * ((hour - 17.5) / 2.0) ** 2)
        + 0.25 * np.sin(2 * np.pi * hour / 24.0 - 1.2)
    )
    return level * np.clip(shape, 0.05, None)


def generate_synthetic(
    n_sensors: int,
    n_steps: int,
    seed: int,
    base_pattern: str = "diurnal",
    noise_sigma: float = 0.05,
    anomalies: Sequence[AnomalySpec] = (),
    level: float = 100.0,
    sample_interval: int = 300,
    start_time: int = 1_330_560_000,
    sensor_ids: Sequence[str] | None = None,
    shift_steps: Sequence[int] | None = None,
    level_scale: Sequence[float] | None = None,
) -> Dataset:
    """Multi-sensor traffic stream with multiplicative anomalies.

    Each sensor follows the same base pattern scaled by ``level``, optionally
    delayed by a per-sensor ``shift_steps`` and multiplied by a per-sensor
    ``level_scale`` so that sensors need not share one daily shape. Noise is
    multiplicative Gaussian with standard deviation ``noise_sigma``. Anomaly
    ``start``/``end`` are step indices, affected cells are multiplied by the
    anomaly magnitude. Values are clamped at zero.
    """
    if n_sensors < 2:
        raise ValueError("n_sensors must be >= 2")
    if n_steps < 86400 // sample_interval:
        raise ValueError("n_steps must cover at least one simulated day")
    if base_pattern not in ("diurnal", "flat"):
        raise ValueError(f"unknown base pattern {base_pattern!r}")
    ids = tuple(sensor_ids) if sensor_ids is not None else tuple(f"s{i:03d}" for i in range(n_sensors))
    if len(ids) != n_sensors:
        raise ValueError("sensor_ids length must equal n_sensors")
    col = {s: j for j, s in enumerate(ids)}
    for a in anomalies:
        unknown = [s for s in a.sensor_ids if s not in col]
        if unknown:
            raise ValueError(f"anomaly references unknown sensors {unknown}")

    for name, arr in (("shift_steps", shift_steps), ("level_scale", level_scale)):
        if arr is not None and len(arr) != n_sensors:
            raise ValueError(f"{name} needs one entry per sensor")

    rng = np.random.default_rng(seed)
    if base_pattern == "flat":
        base = np.full(n_steps, float(level))
        values = np.repeat(base[:, None], n_sensors, axis=1)
    elif shift_steps is None:
        base = diurnal_profile(n_steps, sample_interval, level)
        values = np.repeat(base[:, None], n_sensors, axis=1)
    else:
        values = np.column_stack([diurnal_profile(n_steps, sample_interval, level, int(k)) for k in shift_steps])
    if level_scale is not None:
        values = values * np.asarray(level_scale, dtype=float)
    if noise_sigma > 0:
        values = values * (1.0 + noise_sigma * rng.standard_normal(values.shape))
    for a in anomalies:
        lo, hi = max(a.start, 0), min(a.end, n_steps)
        cols = [col[s] for s in a.sensor_ids]
        values[lo:hi, cols] *= a.magnitude
    values = np.maximum(values, 0.0)
    ts = start_time + sample_interval * np.arange(n_steps, dtype=np.int64)
    return Dataset(ids, ts, values, sample_interval, FLOW_COUNT)


def random_anomalies(
    sensor_groups: Iterable[Sequence[str]],
    n_steps: int,
    rate: float,
    seed: int,
    min_len: int = 3,
    max_len: int = 9,
    magnitude: tuple[float, float] = (2.0, 3.5),
    lag: int = 0,
) -> list[AnomalySpec]:
    """Draw independent anomaly schedules, one per group.

    Every member of a group shares the group's schedule. The first member is
    hit ``lag`` steps after the others, which lets the rest act as upstream
    sensors. ``rate`` is the expected fraction of anomalous steps.
    """
    rng = np.random.default_rng(seed)
    out: list[AnomalySpec] = []
    mean_len = (min_len + max_len) / 2
    for group in sensor_groups:
        group = tuple(group)
        n_events = rng.poisson(rate * n_steps / mean_len)
        starts = np.sort(rng.integers(0, max(n_steps - max_len - lag, 1), size=n_events))
        for st in starts:
            length = int(rng.integers(min_len, max_len + 1))
            mag = float(rng.uniform(*magnitude))
            kind = "spike" if mag > 1 else "drop"
            if lag and len(group) > 1:
                out.append(AnomalySpec(group[1:], int(st), int(st) + length, kind, mag))
                out.append(AnomalySpec(group[:1], int(st) + lag, int(st) + lag + length, kind, mag))
            else:
                out.append(AnomalySpec(group, int(st), int(st) + length, kind, mag))
    return out


def split(dataset: Dataset, fraction: float) -> tuple[Dataset, Dataset]:
    """Temporal split: the first floor(fraction * n_steps) steps and the rest."""
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie in (0, 1)")
    cut = split_index(dataset.n_steps, fraction)
    return dataset.slice(0, cut), dataset.slice(cut, dataset.n_steps)


def split_index(n_steps: int, fraction: float) -> int:
    cut = math.floor(fraction * n_steps + 1e-9)
    if cut < 1:
        raise ValueError("fraction * n_steps must be >= 1")
    return cut
