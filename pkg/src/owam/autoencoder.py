"""Online probability-weighted autoencoder for FPD outlier scoring.

The network maps an FPD of B bins through sigmoid layers
B -> ceil(B/2) -> ceil(B/4) -> ceil(B/2) and a linear output layer whose
result is softly rectified and renormalised onto the simplex. Every incoming FPD is
scored with the current parameters first and only then used for one SGD step,
scaled by an anomaly weight so that outlying windows barely move the model.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .fpd import Fpd

RMSE = "rmse"
EMD = "emd"
LOSS_KINDS = (RMSE, EMD)


def _check_kind(kind: str) -> None:
    if kind not in LOSS_KINDS:
        raise ValueError(f"loss kind must be one of {LOSS_KINDS}, got {kind!r}")


def layer_dims(input_dim: int, hidden_dim: int | None = None, bottleneck_dim: int | None = None) -> tuple[int, ...]:
    h = hidden_dim or math.ceil(input_dim / 2)
    b = bottleneck_dim or math.ceil(input_dim / 4)
    return (input_dim, h, b, h, input_dim)


@dataclass
class AeParams:
    weights: list[np.ndarray]  # (out, in) per layer
    biases: list[np.ndarray]

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.weights[0].shape[1],) + tuple(w.shape[0] for w in self.weights)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @classmethod
    def init(cls, input_dim: int, seed: int, hidden_dim: int | None = None,
             bottleneck_dim: int | None = None) -> "AeParams":
        dims = layer_dims(input_dim, hidden_dim, bottleneck_dim)
        rng = np.random.default_rng(seed)
        weights = [rng.uniform(-0.5, 0.5, size=(o, i)) / math.sqrt(i) for i, o in zip(dims[:-1], dims[1:])]
        biases = [np.zeros(o) for o in dims[1:]]
        # output entries are bin masses of order 1/B; start near the uniform FPD
        weights[-1] /= input_dim
        biases[-1][:] = 1.0 / input_dim
        return cls(weights, biases)

    @classmethod
    def zeros(cls, dims: Sequence[int]) -> "AeParams":
        return cls([np.zeros((o, i)) for i, o in zip(dims[:-1], dims[1:])], [np.zeros(o) for o in dims[1:]])

    def copy(self) -> "AeParams":
        return AeParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])

    @classmethod
    def from_flat(cls, dims: Sequence[int], vec: np.ndarray) -> "AeParams":
        vec = np.asarray(vec, dtype=float)
        weights, biases, pos = [], [], 0
        for i, o in zip(dims[:-1], dims[1:]):
            weights.append(vec[pos:pos + o * i].reshape(o, i))
            pos += o * i
            biases.append(vec[pos:pos + o].copy())
            pos += o
        if pos != len(vec):
            raise ValueError(f"flat vector has {len(vec)} entries, dims {tuple(dims)} need {pos}")
        return cls([w.copy() for w in weights], biases)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in (*self.weights, *self.biases))


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


SHARPNESS = 50.0


def _rectify(z):
    # softplus(k z) / k: identity for z >> 1/k, strictly positive everywhere
    return np.logaddexp(0.0, SHARPNESS * z) / SHARPNESS


def _renormalize(z):
    r = _rectify(z)
    return r / r.sum()


def _forward_cache(params: AeParams, d: np.ndarray):
    acts = [d]
    a = d
    last = len(params.weights) - 1
    for k, (W, b) in enumerate(zip(params.weights, params.biases)):
        z = W @ a + b
        a = z if k == last else _sigmoid(z)
        acts.append(a)
    return acts, _renormalize(acts[-1])


def forward(params: AeParams, d) -> np.ndarray:
    """Reconstruct an FPD; the output always lies on the simplex."""
    d = np.asarray(d, dtype=float)
    if d.shape != (params.input_dim,):
        raise ValueError(f"expected input of shape ({params.input_dim},), got {d.shape}")
    return _forward_cache(params, d)[1]


def loss(kind: str, d, d_hat) -> float:
    """Reconstruction loss between two distributions over the same ordered bins.

    ``rmse`` is the root mean squared bin error; ``emd`` is the 1-D
    Wasserstein-1 distance with unit bin spacing, i.e. the L1 distance between
    the two CDFs.
    """
    _check_kind(kind)
    d = np.asarray(d, dtype=float)
    d_hat = np.asarray(d_hat, dtype=float)
    if d.shape != d_hat.shape:
        raise ValueError(f"length mismatch: {d.shape} vs {d_hat.shape}")
    if kind == RMSE:
        return float(np.sqrt(np.mean((d_hat - d) ** 2)))
    # the final CDF entry is 1 for both, so it is left out of the sum
    return float(np.abs(np.cumsum(d - d_hat)[:-1]).sum())


def loss_grad(kind: str, d: np.ndarray, d_hat: np.ndarray) -> np.ndarray:
    """Gradient (subgradient for emd, sign(0) = 0) of ``loss`` w.r.t. ``d_hat``."""
    _check_kind(kind)
    if kind == RMSE:
        r = np.sqrt(np.mean((d_hat - d) ** 2))
        if r == 0:
            return np.zeros_like(d)
        return (d_hat - d) / (len(d) * r)
    s = np.sign(np.cumsum(d - d_hat)[:-1])
    g = np.zeros_like(d)
    # d/d(d_hat_j) sum_i |C_i| = -sum_{i >= j} sign(C_i)
    g[:-1] = -np.cumsum(s[::-1])[::-1]
    return g


def gradients(params: AeParams, d: np.ndarray, kind: str) -> tuple[float, AeParams]:
    """Loss and parameter gradients for one input by backpropagation."""
    acts, out = _forward_cache(params, d)
    value = loss(kind, d, out)
    g_out = loss_grad(kind, d, out)
    z = acts[-1]
    delta = (g_out - g_out @ out) / _rectify(z).sum() * _sigmoid(SHARPNESS * z)
    n = len(params.weights)
    gw: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    for k in range(n - 1, -1, -1):
        gw[k] = np.outer(delta, acts[k])
        gb[k] = delta
        if k > 0:
            a = acts[k]
            delta = (params.weights[k].T @ delta) * a * (1.0 - a)
    return value, AeParams(gw, gb)


@dataclass
class WeightEstimator:
    """Exponentially decayed mean/variance of recent outlier scores."""

    decay: float = 0.99
    w_min: float = 0.05
    eps: float = 1e-8
    mean: float = 0.0
    var: float = 0.0
    count: int = 0

    def __post_init__(self):
        if not 0 < self.decay < 1:
            raise ValueError("decay must lie in (0, 1)")

    def update(self, x: float) -> None:
        if self.count == 0:
            self.mean, self.var = x, 0.0
        else:
            diff = x - self.mean
            incr = (1.0 - self.decay) * diff
            self.mean += incr
            self.var = self.decay * (self.var + diff * incr)
        self.count += 1


def anomaly_weight(est: WeightEstimator, score: float) -> float:
    """Training weight for a window with the given score, then absorb the score.

    The weight is the Gaussian upper-tail probability of the score under the
    running moments, clamped to [w_min, 1]. With no history the weight is 1.
    """
    if est.count == 0:
        w = 1.0
    else:
        z = (score - est.mean) / max(math.sqrt(est.var), est.eps)
        w = 0.5 * math.erfc(z / math.sqrt(2.0))
        w = min(max(w, est.w_min), 1.0)
    est.update(score)
    return w


@dataclass
class StepStats:
    skipped: int = 0


def train_step(params: AeParams, d, kind: str, weight: float, lr: float,
               stats: StepStats | None = None) -> tuple[AeParams, float]:
    """One SGD step on ``weight * loss``. Returns new params and the unweighted pre-update loss."""
    if lr < 0:
        raise ValueError("lr must be non-negative")
    if not 0 < weight <= 1:
        raise ValueError("weight must lie in (0, 1]")
    d = np.asarray(d, dtype=float)
    if d.shape != (params.input_dim,):
        raise ValueError(f"expected input of shape ({params.input_dim},), got {d.shape}")
    value, grads = gradients(params, d, kind)
    if lr == 0:
        return params.copy(), value
    if not grads.is_finite():
        if stats is not None:
            stats.skipped += 1
        return params.copy(), value
    step = lr * weight
    new = AeParams(
        [w - step * g for w, g in zip(params.weights, grads.weights)],
        [b - step * g for b, g in zip(params.biases, grads.biases)],
    )
    return new, value


@dataclass
class OutlierScoreSeries:
    sensor: str
    window_starts: list[int] = field(default_factory=list)
    scores: list[float] = field(default_factory=list)

    def __len__(self):
        return len(self.scores)

    def append(self, window_start: int, score: float) -> None:
        self.window_starts.append(int(window_start))
        self.scores.append(float(score))

    def array(self) -> np.ndarray:
        return np.asarray(self.scores, dtype=float)


class OnlineDetector:
    """Score-then-train autoencoder for one sensor's FPD stream."""

    def __init__(self, input_dim: int, kind: str = EMD, lr: float = 0.05, seed: int = 0,
                 decay: float = 0.99, w_min: float = 0.05,
                 hidden_dim: int | None = None, bottleneck_dim: int | None = None):
        _check_kind(kind)
        self.kind = kind
        self.lr = lr
        self.seed = seed
        self.params = AeParams.init(input_dim, seed, hidden_dim, bottleneck_dim)
        self.estimator = WeightEstimator(decay=decay, w_min=w_min)
        self.stats = StepStats()

    def score_and_learn(self, d) -> float:
        d = np.asarray(d, dtype=float)
        score = loss(self.kind, d, forward(self.params, d))
        w = anomaly_weight(self.estimator, score)
        self.params, _ = train_step(self.params, d, self.kind, w, self.lr, self.stats)
        return score

    def save(self, path: str | Path) -> None:
        save_params(path, self.params, self.kind, self.seed)


def process_stream(fpds: Sequence[Fpd], kind: str = EMD, lr: float = 0.05, seed: int = 0,
                   **detector_kw) -> OutlierScoreSeries:
    """Raw outlier score for every FPD of one sensor, in order."""
    if not fpds:
        return OutlierScoreSeries(sensor="")
    sensor = fpds[0].sensor
    if any(f.sensor != sensor for f in fpds):
        raise ValueError("all FPDs must come from the same sensor")
    det = OnlineDetector(len(fpds[0].probs), kind, lr, seed, **detector_kw)
    out = OutlierScoreSeries(sensor)
    for f in fpds:
        out.append(f.window_start, det.score_and_learn(f.probs))
    return out


def save_params(path: str | Path, params: AeParams, kind: str, seed: int) -> None:
    dims = ",".join(str(x) for x in params.dims)
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(f"# dims={dims} loss={kind} seed={seed}\n")
        for v in params.flat():
            fh.write(f"{float(v)!r}\n")


def load_params(path: str | Path) -> tuple[AeParams, str, int]:
    with Path(path).open(encoding="utf-8") as fh:
        header = fh.readline()
        if not header.startswith("#"):
            raise ValueError(f"{path}: missing parameter header")
        meta = dict(tok.split("=", 1) for tok in header[1:].split())
        vec = np.array([float(line) for line in fh if line.strip()])
    dims = tuple(int(x) for x in meta["dims"].split(","))
    return AeParams.from_flat(dims, vec), meta["loss"], int(meta["seed"])


def write_scores(series: Sequence[OutlierScoreSeries], path: str | Path) -> None:
    """Score dump as CSV: sensor,window_start,score."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sensor", "window_start", "score"])
        for s in series:
            for t, v in zip(s.window_starts, s.scores):
                w.writerow([s.sensor, t, repr(v)])
