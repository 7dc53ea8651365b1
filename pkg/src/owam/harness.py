"""Offline and prequential (test-then-train) evaluation runs."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .autoencoder import EMD, LOSS_KINDS, RMSE, OnlineDetector, OutlierScoreSeries
from .correlation import CorrelationWeightMap, compute_weights, selection_count
from .forecaster import Forecaster, ForecasterConfig, FusedScaler, SampleSet, build_samples, fusion_columns
from .fpd import FpdConfig, fpd_matrix
from .stream import Dataset, split_index

log = logging.getLogger(__name__)

OFFLINE, ONLINE = "offline", "online"
OWAM_DYNAMIC, STATIC_INCREMENTAL, NO_UPDATE = "owam_dynamic", "static_incremental", "no_update"
UPDATE_MODES = (OWAM_DYNAMIC, STATIC_INCREMENTAL, NO_UPDATE)
WEIGHTED, BINARY = "weighted", "binary"

# default AE step size per loss; the EMD subgradient is ~B times larger than the RMSE gradient
AE_LR = {RMSE: 0.05, EMD: 1e-4}

WINDOWS = {"1h": 3600, "3h": 3 * 3600, "6h": 6 * 3600, "12h": 12 * 3600,
           "1d": 86400, "1w": 7 * 86400, "30d": 30 * 86400}


def parse_duration(text: str | int) -> int:
    """'1h', '30d', '90m', '300s' or plain seconds."""
    if isinstance(text, int):
        return text
    text = str(text).strip().lower()
    if text in WINDOWS:
        return WINDOWS[text]
    units = {"s": 1, "m": 60, "h": 3600, "d": 86400, "w": 7 * 86400}
    if text and text[-1] in units:
        return int(float(text[:-1]) * units[text[-1]])
    return int(text)


def format_duration(seconds: int | None) -> str:
    if seconds is None:
        return ""
    for name, s in WINDOWS.items():
        if s == seconds:
            return name
    return f"{seconds}s"


@dataclass
class RunConfig:
    mode: str = OFFLINE
    loss_kind: str = EMD
    theta: float = 0.05
    update_mode: str = OWAM_DYNAMIC
    window_T: int | None = None  # seconds
    targets: tuple[str, ...] = ()
    seed: int = 0
    train_fraction: float = 0.8
    base_fraction: float = 0.5
    fusion: str = WEIGHTED
    signed: bool = False
    correlation_history: int | None = None  # FPD windows; None = expanding
    refresh_normalizer: bool = True
    ae_lr: float | None = None
    ae_decay: float = 0.99
    ae_w_min: float = 0.05
    fpd: FpdConfig = field(default_factory=FpdConfig)
    model: ForecasterConfig = field(default_factory=ForecasterConfig)
    run_id: str = ""

    def validate(self, dataset: Dataset | None = None) -> None:
        if self.mode not in (OFFLINE, ONLINE):
            raise ValueError(f"mode must be offline or online, got {self.mode!r}")
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"loss_kind must be one of {LOSS_KINDS}, got {self.loss_kind!r}")
        if not 0 <= self.theta <= 1:
            raise ValueError("theta must lie in [0, 1]")
        if self.update_mode not in UPDATE_MODES:
            raise ValueError(f"update_mode must be one of {UPDATE_MODES}, got {self.update_mode!r}")
        if self.fusion not in (WEIGHTED, BINARY):
            raise ValueError(f"fusion must be weighted or binary, got {self.fusion!r}")
        if self.mode == ONLINE and not self.window_T:
            raise ValueError("online mode requires window_T")
        if not self.targets:
            raise ValueError("targets must be non-empty")
        if dataset is not None:
            missing = [t for t in self.targets if t not in dataset.sensor_ids]
            if missing:
                raise ValueError(f"targets not in dataset: {missing}")

    @property
    def ae_step(self) -> float:
        return AE_LR[self.loss_kind] if self.ae_lr is None else self.ae_lr

    def label(self) -> str:
        if self.run_id:
            return self.run_id
        parts = [self.mode, self.loss_kind, f"theta={self.theta:g}"]
        if self.mode == ONLINE:
            parts += [self.update_mode, f"T={format_duration(self.window_T)}"]
        return ",".join(parts)


# ---------------------------------------------------------------- reports


@dataclass
class WindowTrace:
    target: str
    window_start: int
    rmse: float
    n: int
    mode: str
    skipped: bool = False


@dataclass
class TargetReport:
    target: str
    rmse: float
    train_time_s: float
    instance_pred_time_ms: float
    eval_time_s: float
    n_predictions: int
    k: int
    update_time_s: float = 0.0
    windows: list[WindowTrace] = field(default_factory=list)
    skipped_windows: int = 0


@dataclass
class EvalReport:
    run_id: str
    config: RunConfig
    targets: list[TargetReport] = field(default_factory=list)
    weight_maps: dict[str, CorrelationWeightMap] = field(default_factory=dict)
    events: list[dict] = field(default_factory=list)
    models: dict[str, tuple[Forecaster, list[str]]] = field(default_factory=dict)

    def _mean(self, name: str) -> float:
        return float(np.mean([getattr(t, name) for t in self.targets]))

    @property
    def rmse(self) -> float:
        return self._mean("rmse")

    @property
    def train_time_s(self) -> float:
        return self._mean("train_time_s")

    @property
    def instance_pred_time_ms(self) -> float:
        return self._mean("instance_pred_time_ms")

    @property
    def eval_time_s(self) -> float:
        return self._mean("eval_time_s")

    def trace(self) -> list[WindowTrace]:
        return [w for t in self.targets for w in t.windows]


class RunError(RuntimeError):
    def __init__(self, target: str, cause: Exception):
        super().__init__(f"target {target}: {cause}")
        self.target = target


def rmse(predictions, truths) -> float:
    p = np.asarray(predictions, dtype=float)
    y = np.asarray(truths, dtype=float)
    if p.shape != y.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {y.shape}")
    if p.size == 0:
        raise ValueError("rmse of an empty sequence")
    return float(np.sqrt(np.mean((p - y) ** 2)))


class TickClock:
    """Deterministic stand-in for time.perf_counter: each call advances by ``tick`` seconds."""

    def __init__(self, tick: float = 1e-4):
        self.tick = tick
        self.calls = 0

    def __call__(self) -> float:
        self.calls += 1
        return self.calls * self.tick


# ---------------------------------------------------------------- scoring


def _seed_for(seed: int, *keys: int) -> int:
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1)[0])


class ScoreBank:
    """One online detector per sensor, fed complete FPD windows as data arrives."""

    def __init__(self, dataset: Dataset, cfg: RunConfig):
        if dataset.sample_interval != cfg.fpd.bin_interval:
            raise ValueError(
                f"dataset interval {dataset.sample_interval}s does not match FPD bins {cfg.fpd.bin_interval}s"
            )
        self.dataset = dataset
        self.bins = cfg.fpd.bins
        self.detectors = [
            OnlineDetector(self.bins, cfg.loss_kind, cfg.ae_step, _seed_for(cfg.seed, 1, j),
                           decay=cfg.ae_decay, w_min=cfg.ae_w_min)
            for j in range(dataset.n_sensors)
        ]
        self.series = [OutlierScoreSeries(s) for s in dataset.sensor_ids]
        self.consumed = 0  # FPD windows scored so far

    def advance(self, upto_step: int) -> int:
        """Score every FPD window that ends at or before ``upto_step``; returns windows added."""
        n_windows = upto_step // self.bins
        if n_windows <= self.consumed:
            return 0
        lo, hi = self.consumed * self.bins, n_windows * self.bins
        ts = self.dataset.timestamps
        for j, det in enumerate(self.detectors):
            fpds = fpd_matrix(self.dataset.values[lo:hi, j], self.bins)
            for w, probs in enumerate(fpds):
                self.series[j].append(ts[lo + w * self.bins], det.score_and_learn(probs))
        added = n_windows - self.consumed
        self.consumed = n_windows
        return added

    def scores(self) -> dict[str, list[float]]:
        return {s.sensor: s.scores for s in self.series}


def weight_map_for(bank: ScoreBank | None, target: str, cfg: RunConfig, n_sensors: int) -> CorrelationWeightMap:
    if bank is None or cfg.theta == 0:
        return CorrelationWeightMap(target, cfg.theta, 0)
    if bank.consumed < 2:
        raise ValueError("need at least two FPD windows to correlate outlier scores")
    wm = compute_weights(bank.scores(), target, cfg.theta, cfg.signed, cfg.correlation_history)
    if cfg.fusion == BINARY:
        wm.entries = [dataclasses.replace(e, weight=1.0 if e.selected else 0.0) for e in wm.entries]
    return wm


def _needs_scores(cfg: RunConfig, n_sensors: int) -> bool:
    return selection_count(cfg.theta, n_sensors) > 0


# ---------------------------------------------------------------- runs


@dataclass
class _Fitted:
    model: Forecaster
    weights: CorrelationWeightMap
    train_time: float


def _fit_target(dataset: Dataset, target: str, bank: ScoreBank | None, cfg: RunConfig,
                n_train: int, clock: Callable[[], float]) -> _Fitted:
    wm = weight_map_for(bank, target, cfg, dataset.n_sensors)
    sensors, w = fusion_columns(target, wm)
    scaler = FusedScaler.fit(dataset, sensors, w, stop=n_train)
    train = build_samples(dataset, target, wm, stop=n_train)
    model = Forecaster(len(sensors), cfg.model, _seed_for(cfg.seed, 2, dataset.index(target)), scaler)
    t0 = clock()
    model.train(train)
    return _Fitted(model, wm, clock() - t0)


def _evaluate(model: Forecaster, samples: SampleSet, clock: Callable[[], float]):
    """Per-instance predictions; returns (predictions, mean latency ms, total seconds)."""
    preds = np.empty(len(samples))
    lat = 0.0
    t_start = clock()
    for i in range(len(samples)):
        t0 = clock()
        preds[i] = model.predict(samples.X[i])[0]
        lat += clock() - t0
    total = clock() - t_start
    return preds, (lat / max(len(samples), 1)) * 1e3, total


def run_offline(dataset: Dataset, cfg: RunConfig, clock: Callable[[], float] = time.perf_counter,
                train_fraction: float | None = None) -> EvalReport:
    """Train on the leading split, score RMSE on the rest, average over targets."""
    cfg.validate(dataset)
    frac = cfg.train_fraction if train_fraction is None else train_fraction
    n_train = split_index(dataset.n_steps, frac)
    bank = None
    if _needs_scores(cfg, dataset.n_sensors):
        bank = ScoreBank(dataset, cfg)
        bank.advance(n_train)
    report = EvalReport(cfg.label(), cfg)
    for target in cfg.targets:
        try:
            fit = _fit_target(dataset, target, bank, cfg, n_train, clock)
            test = build_samples(dataset, target, fit.weights, start=n_train)
            preds, lat_ms, eval_s = _evaluate(fit.model, test, clock)
            err = rmse(preds, test.Y)
        except Exception as exc:
            raise RunError(target, exc) from exc
        report.targets.append(TargetReport(target, err, fit.train_time, lat_ms, eval_s, len(test), fit.weights.k))
        report.weight_maps[target] = fit.weights
        report.models[target] = (fit.model, fusion_columns(target, fit.weights)[0])
    return report


@dataclass
class _OnlineState:
    fit: _Fitted
    sq_sum: float = 0.0
    n_pred: int = 0
    lat_ms_sum: float = 0.0
    eval_s: float = 0.0
    update_s: float = 0.0
    traces: list[WindowTrace] = field(default_factory=list)


def run_online(dataset: Dataset, cfg: RunConfig, clock: Callable[[], float] = time.perf_counter) -> EvalReport:
    """Base model on the leading half, then test-then-train over windows of length T.

    Every window is first evaluated with the current model for all targets;
    only afterwards may its data touch detectors, weights, scalers or models.
    """
    cfg.validate(dataset)
    T = cfg.window_T // dataset.sample_interval
    if T * dataset.sample_interval != cfg.window_T or T < 1:
        raise ValueError(f"window_T={cfg.window_T}s is not a multiple of the {dataset.sample_interval}s grid")
    if cfg.update_mode == OWAM_DYNAMIC and T < cfg.fpd.bins:
        raise ValueError(
            f"window_T={cfg.window_T}s is shorter than one FPD window ({cfg.fpd.window}s); no new scores"
        )
    n_base = split_index(dataset.n_steps, cfg.base_fraction)
    n_windows = (dataset.n_steps - n_base) // T
    use_scores = _needs_scores(cfg, dataset.n_sensors)
    bank = ScoreBank(dataset, cfg) if use_scores else None
    if bank is not None:
        bank.advance(n_base)

    report = EvalReport(cfg.label(), cfg)
    events = report.events
    states: dict[str, _OnlineState] = {}
    for target in cfg.targets:
        try:
            states[target] = _OnlineState(_fit_target(dataset, target, bank, cfg, n_base, clock))
        except Exception as exc:
            raise RunError(target, exc) from exc
        events.append({"window": -1, "target": target, "event": "base_train", "data_end": n_base})

    for j in range(n_windows):
        start, end = n_base + j * T, n_base + (j + 1) * T
        wstart = int(dataset.timestamps[start])
        for target, st in states.items():
            test = build_samples(dataset, target, st.fit.weights, start=start, stop=end)
            events.append({"window": j, "target": target, "event": "evaluate", "data_end": end})
            if len(test) == 0:
                st.traces.append(WindowTrace(target, wstart, math.nan, 0, cfg.update_mode, skipped=True))
                continue
            preds, lat_ms, eval_s = _evaluate(st.fit.model, test, clock)
            resid = preds - test.Y
            st.sq_sum += float(resid @ resid)
            st.n_pred += len(test)
            st.lat_ms_sum += lat_ms * len(test)
            st.eval_s += eval_s
            st.traces.append(WindowTrace(target, wstart, rmse(preds, test.Y), len(test), cfg.update_mode))

        if cfg.update_mode == NO_UPDATE:
            continue
        if cfg.update_mode == OWAM_DYNAMIC and bank is not None:
            added = bank.advance(end)
            events.append({"window": j, "target": "*", "event": "ae_update", "data_end": end, "fpds": added})
        for target, st in states.items():
            t0 = clock()
            wm = st.fit.weights
            if cfg.update_mode == OWAM_DYNAMIC and bank is not None:
                wm = weight_map_for(bank, target, cfg, dataset.n_sensors)
                events.append({"window": j, "target": target, "event": "weights", "data_end": end,
                               "neighbors": wm.neighbors})
            sensors, w = fusion_columns(target, wm)
            model = st.fit.model
            if cfg.refresh_normalizer or wm is not st.fit.weights:
                model.scaler = FusedScaler.fit(dataset, sensors, w, stop=end)
                events.append({"window": j, "target": target, "event": "normalizer", "data_end": end})
            st.fit.weights = wm
            new = build_samples(dataset, target, wm, start=start, stop=end)
            model.incremental_update(new)
            events.append({"window": j, "target": target, "event": "train", "data_end": end, "n": len(new)})
            st.update_s += clock() - t0

    for target, st in states.items():
        done = [w for w in st.traces if not w.skipped]
        skipped = len(st.traces) - len(done)
        # mean of per-window RMSE over the evaluated windows
        err = float(np.mean([w.rmse for w in done])) if done else math.nan
        report.targets.append(TargetReport(
            target, err, st.fit.train_time + st.update_s,
            st.lat_ms_sum / max(st.n_pred, 1), st.eval_s, st.n_pred, st.fit.weights.k,
            update_time_s=st.update_s, windows=st.traces, skipped_windows=skipped,
        ))
        report.weight_maps[target] = st.fit.weights
        report.models[target] = (st.fit.model, fusion_columns(target, st.fit.weights)[0])
    return report


def run(dataset: Dataset, cfg: RunConfig, clock: Callable[[], float] = time.perf_counter) -> EvalReport:
    return run_online(dataset, cfg, clock) if cfg.mode == ONLINE else run_offline(dataset, cfg, clock)


def check_prequential(events: Sequence[dict]) -> list[str]:
    """Violations of evaluate-before-update in an event log (empty list means clean)."""
    problems = []
    evaluated: dict[tuple, int] = {}
    for pos, ev in enumerate(events):
        key = (ev["window"], ev["target"])
        if ev["event"] == "evaluate":
            evaluated[key] = pos
            continue
        if ev["window"] < 0:
            continue
        targets = [ev["target"]] if ev["target"] != "*" else [k[1] for k in evaluated if k[0] == ev["window"]]
        if not targets:
            problems.append(f"event {pos} ({ev['event']}) in window {ev['window']} before any evaluation")
        for t in targets:
            if (ev["window"], t) not in evaluated:
                problems.append(f"event {pos} ({ev['event']}) for {t} precedes evaluation of window {ev['window']}")
    # every target must be evaluated in a window before any shared mutation of that window
    for pos, ev in enumerate(events):
        if ev["target"] == "*":
            later = [p for (w, _), p in evaluated.items() if w == ev["window"] and p > pos]
            if later:
                problems.append(f"shared {ev['event']} at {pos} precedes evaluations of window {ev['window']}")
    return problems


# ---------------------------------------------------------------- tables

REPORT_COLUMNS = [
    "run_id", "target", "mode", "update_mode", "loss_kind", "theta", "window_T", "k",
    "rmse", "train_time_s", "instance_pred_time_ms", "eval_time_s", "n_predictions",
    "n_windows", "skipped_windows", "status",
]
TIMING_COLUMNS = ("train_time_s", "instance_pred_time_ms", "eval_time_s")
TRACE_COLUMNS = ["run_id", "target", "window_start", "rmse", "n", "mode", "skipped"]


def report_rows(report: EvalReport) -> list[dict]:
    cfg = report.config
    common = {
        "run_id": report.run_id, "mode": cfg.mode,
        "update_mode": cfg.update_mode if cfg.mode == ONLINE else "",
        "loss_kind": cfg.loss_kind, "theta": cfg.theta,
        "window_T": format_duration(cfg.window_T) if cfg.mode == ONLINE else "",
    }
    rows = []
    for t in report.targets:
        rows.append({**common, "target": t.target, "k": t.k, "rmse": t.rmse,
                     "train_time_s": t.train_time_s, "instance_pred_time_ms": t.instance_pred_time_ms,
                     "eval_time_s": t.eval_time_s, "n_predictions": t.n_predictions,
                     "n_windows": len(t.windows), "skipped_windows": t.skipped_windows, "status": "ok"})
    if report.targets:
        rows.append({**common, "target": "__mean__", "k": "", "rmse": report.rmse,
                     "train_time_s": report.train_time_s,
                     "instance_pred_time_ms": report.instance_pred_time_ms,
                     "eval_time_s": report.eval_time_s,
                     "n_predictions": sum(t.n_predictions for t in report.targets),
                     "n_windows": sum(len(t.windows) for t in report.targets),
                     "skipped_windows": sum(t.skipped_windows for t in report.targets), "status": "ok"})
    return rows


def failed_row(cfg: RunConfig, message: str) -> dict:
    row = {c: "" for c in REPORT_COLUMNS}
    row.update(run_id=cfg.label(), mode=cfg.mode, loss_kind=cfg.loss_kind, theta=cfg.theta,
               target="__mean__", status=f"failed: {message}")
    return row


def bench(dataset: Dataset, cfgs: Sequence[RunConfig], clock: Callable[[], float] = time.perf_counter) -> list[dict]:
    """Run every config; a failing run becomes a ``failed`` row and the rest carry on."""
    if not cfgs:
        raise ValueError("bench needs at least one config")
    rows: list[dict] = []
    seen: dict[str, int] = {}
    for cfg in cfgs:
        label = cfg.label()
        seen[label] = seen.get(label, 0) + 1
        if seen[label] > 1:
            cfg = dataclasses.replace(cfg, run_id=f"{label}#{seen[label]}")
        try:
            rows.extend(report_rows(run(dataset, cfg, clock)))
        except Exception as exc:  # noqa: BLE001 - recorded as a failed row
            log.warning("run %s failed: %s", cfg.label(), exc)
            rows.append(failed_row(cfg, str(exc)))
    return rows


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_table(rows: Sequence[dict], path: str | Path, columns: Sequence[str] = REPORT_COLUMNS) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c, "")) for c in columns])


_INT_COLS = {"k", "n_predictions", "n_windows", "skipped_windows", "n", "window_start"}
_FLOAT_COLS = {"theta", "rmse", "train_time_s", "instance_pred_time_ms", "eval_time_s"}


def read_table(path: str | Path) -> list[dict]:
    rows = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for r in csv.DictReader(fh):
            out = {}
            for k, v in r.items():
                if v != "" and k in _INT_COLS:
                    out[k] = int(v)
                elif v != "" and k in _FLOAT_COLS:
                    out[k] = float(v)
                elif k == "skipped":
                    out[k] = v == "True"
                else:
                    out[k] = v
            rows.append(out)
    return rows


def trace_rows(report: EvalReport) -> list[dict]:
    return [{"run_id": report.run_id, **dataclasses.asdict(w)} for w in report.trace()]


def write_events(events: Sequence[dict], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for ev in events:
            fh.write(json.dumps(ev, sort_keys=True) + "\n")
