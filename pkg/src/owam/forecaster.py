"""LSTM next-step forecaster over correlation-weighted neighbour fusion.

Inputs are 12-step windows: column 0 is the target sensor, columns 1..k the
selected neighbours multiplied by their correlation weights. Everything is
numpy; backpropagation through time is written out by hand.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .correlation import CorrelationWeightMap
from .stream import Dataset

LOOKBACK = 12


# ---------------------------------------------------------------- samples


@dataclass(frozen=True)
class FusedSample:
    x: np.ndarray  # (LOOKBACK, 1 + k)
    y: float


@dataclass
class SampleSet:
    """Stacked fused samples; ``index`` is the dataset step of each target value."""

    X: np.ndarray  # (n, LOOKBACK, 1 + k)
    Y: np.ndarray  # (n,)
    index: np.ndarray  # (n,)

    def __len__(self):
        return len(self.Y)

    def __getitem__(self, i) -> FusedSample:
        return FusedSample(self.X[i], float(self.Y[i]))

    @property
    def input_dim(self) -> int:
        return self.X.shape[2]

    def subset(self, mask_or_slice) -> "SampleSet":
        return SampleSet(self.X[mask_or_slice], self.Y[mask_or_slice], self.index[mask_or_slice])

    @staticmethod
    def concat(parts: Sequence["SampleSet"]) -> "SampleSet":
        return SampleSet(
            np.concatenate([p.X for p in parts]),
            np.concatenate([p.Y for p in parts]),
            np.concatenate([p.index for p in parts]),
        )


def fusion_columns(target: str, weights: CorrelationWeightMap | None) -> tuple[list[str], np.ndarray]:
    """Sensor order and per-column weight of the fused input (target first, weight 1)."""
    if weights is None or weights.k == 0:
        return [target], np.ones(1)
    if weights.target != target:
        raise ValueError(f"weight map is for {weights.target!r}, not {target!r}")
    return [target, *weights.neighbors], np.concatenate([[1.0], weights.weights])


def build_samples(
    dataset: Dataset,
    target: str,
    weights: CorrelationWeightMap | None = None,
    start: int | None = None,
    stop: int | None = None,
    lookback: int = LOOKBACK,
    horizon: int = 1,
) -> SampleSet:
    """Sliding windows (stride 1) whose target value falls in steps [start, stop).

    Neighbour columns are scaled by their weights, the target column is not.
    """
    if horizon != 1:
        raise ValueError("only one-step-ahead forecasting is supported")
    if dataset.n_steps < lookback + 1:
        raise ValueError(f"need at least {lookback + 1} steps, dataset has {dataset.n_steps}")
    sensors, w = fusion_columns(target, weights)
    for s in sensors:
        if s not in dataset.sensor_ids:
            raise KeyError(f"unknown sensor {s!r} in weight map")
    cols = dataset.values[:, [dataset.index(s) for s in sensors]] * w
    lo = max(lookback, start if start is not None else lookback)
    hi = min(dataset.n_steps, stop if stop is not None else dataset.n_steps)
    idx = np.arange(lo, max(lo, hi))
    if len(idx) == 0:
        return SampleSet(np.zeros((0, lookback, len(sensors))), np.zeros(0), idx)
    windows = np.lib.stride_tricks.sliding_window_view(cols, lookback, axis=0)  # (n-L+1, D, L)
    X = windows[idx - lookback].transpose(0, 2, 1).copy()
    Y = dataset.values[idx, dataset.index(target)].astype(float)
    return SampleSet(X, Y, idx)


# ---------------------------------------------------------------- normalisation


@dataclass
class Normalizer:
    """Per-feature min-max scaling to [0, 1]."""

    lo: np.ndarray | None = None
    span: np.ndarray | None = None

    def fit(self, values: np.ndarray) -> "Normalizer":
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        self.lo = values.min(axis=0)
        span = values.max(axis=0) - self.lo
        self.span = np.where(span > 0, span, 1.0)
        return self

    def _check(self):
        if self.lo is None:
            raise RuntimeError("normalizer used before fit")

    def transform(self, values):
        self._check()
        return (np.asarray(values, dtype=float) - self.lo) / self.span

    def inverse(self, values):
        self._check()
        return np.asarray(values, dtype=float) * self.span + self.lo


@dataclass
class FusedScaler:
    """Normalise fused windows so neighbour weights survive the scaling.

    Each sensor column is min-max scaled on its unweighted values; a weighted
    column w*v therefore maps to w * (v - lo) / span.
    """

    norm: Normalizer
    weights: np.ndarray

    @classmethod
    def fit(cls, dataset: Dataset, sensors: Sequence[str], weights: np.ndarray, stop: int) -> "FusedScaler":
        cols = dataset.values[:stop, [dataset.index(s) for s in sensors]]
        return cls(Normalizer().fit(cols), np.asarray(weights, dtype=float))

    def transform_x(self, X: np.ndarray) -> np.ndarray:
        return (X - self.weights * self.norm.lo) / self.norm.span

    def transform_y(self, y):
        return (np.asarray(y, dtype=float) - self.norm.lo[0]) / self.norm.span[0]

    def inverse_y(self, y):
        return np.asarray(y, dtype=float) * self.norm.span[0] + self.norm.lo[0]


# ---------------------------------------------------------------- LSTM


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class LstmParams:
    Wx: np.ndarray  # (D, 4H), gate order i, f, g, o
    Wh: np.ndarray  # (H, 4H)
    b: np.ndarray  # (4H,)
    Wy: np.ndarray  # (H,)
    by: np.ndarray  # (1,)

    NAMES = ("Wx", "Wh", "b", "Wy", "by")

    @property
    def input_dim(self) -> int:
        return self.Wx.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.Wh.shape[0]

    @classmethod
    def init(cls, input_dim: int, hidden_dim: int, seed: int) -> "LstmParams":
        rng = np.random.default_rng(seed)
        a = 1.0 / math.sqrt(hidden_dim)
        H = hidden_dim
        b = np.zeros(4 * H)
        b[H:2 * H] = 1.0  # forget gate
        return cls(
            rng.uniform(-a, a, (input_dim, 4 * H)),
            rng.uniform(-a, a, (H, 4 * H)),
            b,
            rng.uniform(-a, a, H),
            np.zeros(1),
        )

    def arrays(self) -> list[np.ndarray]:
        return [getattr(self, n) for n in self.NAMES]

    def copy(self) -> "LstmParams":
        return LstmParams(*(a.copy() for a in self.arrays()))

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    @classmethod
    def from_flat(cls, input_dim: int, hidden_dim: int, vec) -> "LstmParams":
        H, D = hidden_dim, input_dim
        shapes = [(D, 4 * H), (H, 4 * H), (4 * H,), (H,), (1,)]
        out, pos = [], 0
        for shp in shapes:
            size = int(np.prod(shp))
            out.append(np.asarray(vec[pos:pos + size], dtype=float).reshape(shp).copy())
            pos += size
        if pos != len(vec):
            raise ValueError(f"flat vector has {len(vec)} entries, expected {pos}")
        return cls(*out)


def lstm_forward(p: LstmParams, X: np.ndarray, cache: bool = False):
    n, T, D = X.shape
    if D != p.input_dim:
        raise ValueError(f"input has {D} features, model expects {p.input_dim}")
    H = p.hidden_dim
    h = np.zeros((n, H))
    c = np.zeros((n, H))
    steps = []
    for t in range(T):
        a = X[:, t] @ p.Wx + h @ p.Wh + p.b
        i = _sigmoid(a[:, :H])
        f = _sigmoid(a[:, H:2 * H])
        g = np.tanh(a[:, 2 * H:3 * H])
        o = _sigmoid(a[:, 3 * H:])
        c_prev, h_prev = c, h
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        if cache:
            steps.append((i, f, g, o, c_prev, h_prev, tc))
    y = h @ p.Wy + p.by[0]
    return (y, (X, steps, h)) if cache else y


def lstm_gradients(p: LstmParams, X: np.ndarray, Y: np.ndarray) -> tuple[float, LstmParams]:
    """Mean squared error and its gradient by backpropagation through time."""
    y_hat, (X, steps, h_last) = lstm_forward(p, X, cache=True)
    n = len(Y)
    resid = y_hat - Y
    value = float(np.mean(resid ** 2))
    dy = 2.0 * resid / n
    g = LstmParams(np.zeros_like(p.Wx), np.zeros_like(p.Wh), np.zeros_like(p.b),
                   h_last.T @ dy, np.array([dy.sum()]))
    dh = np.outer(dy, p.Wy)
    dc = np.zeros_like(dh)
    for t in range(len(steps) - 1, -1, -1):
        i, f, gg, o, c_prev, h_prev, tc = steps[t]
        do = dh * tc
        dc = dc + dh * o * (1.0 - tc ** 2)
        da = np.concatenate(
            [dc * gg * i * (1 - i), dc * c_prev * f * (1 - f), dc * i * (1 - gg ** 2), do * o * (1 - o)],
            axis=1,
        )
        g.Wx += X[:, t].T @ da
        g.Wh += h_prev.T @ da
        g.b += da.sum(axis=0)
        dh = da @ p.Wh.T
        dc = dc * f
    return value, g


@dataclass
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def step(self, params: LstmParams, grads: LstmParams, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        arrays, gs = params.arrays(), grads.arrays()
        if not self.m:
            self.m = [np.zeros_like(a) for a in arrays]
            self.v = [np.zeros_like(a) for a in arrays]
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for a, gr, m, v in zip(arrays, gs, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * gr
            v *= self.beta2
            v += (1 - self.beta2) * gr * gr
            a -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class ForecasterConfig:
    hidden_dim: int = 64
    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 50
    patience: int = 5
    val_fraction: float = 0.1
    update_epochs: int = 1


class Forecaster:
    """One LSTM per target sensor, plus the scaler that feeds it."""

    def __init__(self, input_dim: int, cfg: ForecasterConfig = ForecasterConfig(), seed: int = 0,
                 scaler: FusedScaler | None = None):
        self.cfg = cfg
        self.seed = seed
        self.params = LstmParams.init(input_dim, cfg.hidden_dim, seed)
        self.opt = Adam(cfg.lr)
        self.scaler = scaler
        self.history: list[float] = []  # validation loss per epoch

    @property
    def input_dim(self) -> int:
        return self.params.input_dim

    def _xy(self, samples: SampleSet):
        if samples.input_dim != self.input_dim:
            raise ValueError(f"samples have {samples.input_dim} features, model expects {self.input_dim}")
        if self.scaler is None:
            return samples.X, samples.Y
        return self.scaler.transform_x(samples.X), self.scaler.transform_y(samples.Y)

    def _step(self, X, Y, lr):
        value, grads = lstm_gradients(self.params, X, Y)
        if not math.isfinite(value) or not np.all(np.isfinite(grads.flat())):
            raise FloatingPointError(f"non-finite training loss ({value}) after {self.opt.t} steps")
        self.opt.step(self.params, grads, lr)
        return value

    def train(self, samples: SampleSet, epochs: int | None = None, lr: float | None = None) -> float:
        """Mini-batch Adam with early stopping on a trailing validation slice.

        Returns wall-clock seconds spent. The best-validation parameters are kept.
        """
        if len(samples) == 0:
            raise ValueError("no training samples")
        epochs = self.cfg.epochs if epochs is None else epochs
        lr = self.cfg.lr if lr is None else lr
        t0 = time.perf_counter()
        X, Y = self._xy(samples)
        n_val = int(len(Y) * self.cfg.val_fraction) if len(Y) >= 20 else 0
        Xt, Yt = X[: len(Y) - n_val], Y[: len(Y) - n_val]
        Xv, Yv = X[len(Y) - n_val:], Y[len(Y) - n_val:]
        rng = np.random.default_rng(self.seed)
        best, best_params, stale = math.inf, self.params.copy(), 0
        bs = self.cfg.batch_size
        for _ in range(epochs):
            order = rng.permutation(len(Yt))
            for s in range(0, len(order), bs):
                b = order[s:s + bs]
                self._step(Xt[b], Yt[b], lr)
            if n_val:
                val = float(np.mean((lstm_forward(self.params, Xv) - Yv) ** 2))
                self.history.append(val)
                if val < best - 1e-12:
                    best, best_params, stale = val, self.params.copy(), 0
                else:
                    stale += 1
                    if stale >= self.cfg.patience:
                        break
        if n_val and epochs:
            self.params = best_params
        return time.perf_counter() - t0

    def incremental_update(self, samples: SampleSet, epochs: int | None = None, lr: float | None = None,
                           batch_size: int | None = None) -> None:
        """Continue training on new samples only, in arrival order."""
        if len(samples) == 0:
            return
        epochs = self.cfg.update_epochs if epochs is None else epochs
        lr = self.cfg.lr if lr is None else lr
        bs = batch_size or self.cfg.batch_size
        X, Y = self._xy(samples)
        for _ in range(epochs):
            for s in range(0, len(Y), bs):
                self._step(X[s:s + bs], Y[s:s + bs], lr)

    def predict(self, x: np.ndarray) -> tuple[float, float]:
        """Forecast for one fused window; returns (value in original units, latency in ms)."""
        x = np.asarray(x, dtype=float)
        if x.shape != (LOOKBACK, self.input_dim):
            raise ValueError(f"expected window of shape ({LOOKBACK}, {self.input_dim}), got {x.shape}")
        t0 = time.perf_counter()
        xs = x[None] if self.scaler is None else self.scaler.transform_x(x[None])
        y = lstm_forward(self.params, xs)
        y = y if self.scaler is None else self.scaler.inverse_y(y)
        return float(y[0]), (time.perf_counter() - t0) * 1e3

    def predict_batch(self, samples: SampleSet) -> np.ndarray:
        X, _ = self._xy(samples)
        y = lstm_forward(self.params, X)
        return y if self.scaler is None else self.scaler.inverse_y(y)

    def mse(self, samples: SampleSet) -> float:
        return float(np.mean((self.predict_batch(samples) - samples.Y) ** 2))

    # checkpoints ------------------------------------------------------

    def save(self, path: str | Path, sensors: Sequence[str] = ()) -> None:
        header = {
            "input_dim": self.input_dim,
            "hidden_dim": self.cfg.hidden_dim,
            "seed": self.seed,
            "sensors": list(sensors),
        }
        extra = {}
        if self.scaler is not None:
            extra = {"lo": self.scaler.norm.lo, "span": self.scaler.norm.span, "weights": self.scaler.weights}
        with Path(path).open("wb") as fh:
            np.savez(fh, header=np.array(json.dumps(header, sort_keys=True)), params=self.params.flat(), **extra)

    @classmethod
    def load(cls, path: str | Path, cfg: ForecasterConfig | None = None) -> "Forecaster":
        with np.load(path) as z:
            header = json.loads(str(z["header"]))
            cfg = cfg or ForecasterConfig(hidden_dim=header["hidden_dim"])
            model = cls(header["input_dim"], cfg, header["seed"])
            model.params = LstmParams.from_flat(header["input_dim"], header["hidden_dim"], z["params"])
            if "lo" in z:
                model.scaler = FusedScaler(Normalizer(z["lo"].copy(), z["span"].copy()), z["weights"].copy())
        return model
