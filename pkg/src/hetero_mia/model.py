"""Fully-connected softmax classifier in float64 numpy with analytic gradients.

The same machinery backs the federated target model, the attacker's shadow
model and the attack classifier.

Seeding: ``init_model`` draws from PCG64 seeded with ``seed``.  ``train``
shuffles epoch ``e`` (counted globally through ``start_epoch``) with a
Fisher-Yates permutation from ``make_rng(cfg.seed, e)``, so splitting a run
into consecutive chunks of epochs reproduces the unsplit run bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, TrainingError
from .seeding import make_rng

__all__ = [
    "Architecture",
    "ModelParams",
    "TrainConfig",
    "init_model",
    "forward",
    "predict",
    "predict_proba",
    "loss_and_grad",
    "train",
    "accuracy",
]


@dataclass(frozen=True)
class Architecture:
    """Layer widths ``(d, hidden..., K)``; hidden layers use ReLU, the output softmax."""

    widths: tuple[int, ...]

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        object.__setattr__(self, "widths", widths)
        if len(widths) < 2:
            raise ConfigError("architecture needs at least an input and an output width")
        if any(w < 1 for w in widths):
            raise ConfigError(f"zero-width layer in {widths}")
        if widths[-1] < 2:
            raise ConfigError("output layer needs at least two classes")

    @classmethod
    def mlp(cls, d: int, n_classes: int, hidden: Sequence[int] = (32,)) -> "Architecture":
        return cls((d, *hidden, n_classes))

    @property
    def n_in(self) -> int:
        return self.widths[0]

    @property
    def n_out(self) -> int:
        return self.widths[-1]


@dataclass(frozen=True)
class ModelParams:
    """Weights are stored ``(fan_in, fan_out)`` so that ``h @ W + b`` is a layer."""

    arch: Architecture
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    def __post_init__(self):
        ws = tuple(np.array(w, dtype=np.float64) for w in self.weights)
        bs = tuple(np.array(b, dtype=np.float64) for b in self.biases)
        pairs = list(zip(self.arch.widths[:-1], self.arch.widths[1:]))
        if len(ws) != len(pairs) or len(bs) != len(pairs):
            raise ValueError("layer count does not match architecture")
        for (fi, fo), w, b in zip(pairs, ws, bs):
            if w.shape != (fi, fo) or b.shape != (fo,):
                raise ValueError(f"layer shape {w.shape}/{b.shape} does not match ({fi}, {fo})")
        for a in (*ws, *bs):
            a.setflags(write=False)
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "biases", bs)

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def arrays(self) -> list[np.ndarray]:
        """Weights and biases interleaved per layer: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def flatten(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def from_flat(self, flat: np.ndarray) -> "ModelParams":
        flat = np.asarray(flat, dtype=np.float64)
        ws, bs, pos = [], [], 0
        for w, b in zip(self.weights, self.biases):
            ws.append(flat[pos : pos + w.size].reshape(w.shape))
            pos += w.size
            bs.append(flat[pos : pos + b.size])
            pos += b.size
        if pos != flat.size:
            raise ValueError(f"flat vector has {flat.size} entries, expected {pos}")
        return replace(self, weights=tuple(ws), biases=tuple(bs))

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def to_dict(self) -> dict:
        return {
            "widths": list(self.arch.widths),
            "activation": "relu",
            "output": "softmax",
            "layers": [
                {"weight": w.tolist(), "bias": b.tolist()} for w, b in zip(self.weights, self.biases)
            ],
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "ModelParams":
        return cls(
            Architecture(tuple(raw["widths"])),
            tuple(np.array(layer["weight"], dtype=np.float64) for layer in raw["layers"]),
            tuple(np.array(layer["bias"], dtype=np.float64) for layer in raw["layers"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: str | Path) -> "ModelParams":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.05
    epochs: int = 20
    batch_size: int = 16
    seed: int = 0
    l2: float = 0.0

    def __post_init__(self):
        if not self.lr >= 0:
            raise ConfigError(f"learning rate must be non-negative, got {self.lr}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        if self.l2 < 0:
            raise ConfigError(f"L2 coefficient must be non-negative, got {self.l2}")


def init_model(arch: Architecture, seed: int) -> ModelParams:
    """He-uniform weights, ``U(-sqrt(6 / fan_in), +sqrt(6 / fan_in))``, zero biases."""
    rng = make_rng(seed)
    ws, bs = [], []
    for fan_in, fan_out in zip(arch.widths[:-1], arch.widths[1:]):
        limit = np.sqrt(6.0 / fan_in)
        ws.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        bs.append(np.zeros(fan_out))
    return ModelParams(arch, tuple(ws), tuple(bs))


def _as_batch(params: ModelParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != params.arch.n_in:
        raise ValueError(f"input has {x.shape[1]} features, model expects {params.arch.n_in}")
    return x


def forward(params: ModelParams, x: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    """Return (layer inputs, output logits); layer inputs[0] is ``x`` itself."""
    h = _as_batch(params, x)
    inputs = []
    last = params.n_layers - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        z = h @ w + b
        h = z if i == last else np.maximum(z, 0.0)
    return inputs, h


def _log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def predict_proba(params: ModelParams, x: np.ndarray) -> np.ndarray:
    _, logits = forward(params, x)
    return np.exp(_log_softmax(logits))


def predict(params: ModelParams, x: np.ndarray) -> np.ndarray:
    """Class probabilities; a single feature vector gives a length-K vector."""
    probs = predict_proba(params, x)
    return probs[0] if np.ndim(x) == 1 else probs


def _check_labels(params: ModelParams, y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    if y.size and (y.min() < 0 or y.max() >= params.arch.n_out):
        raise ValueError(f"labels must lie in [0, {params.arch.n_out})")
    return y


def loss_and_grad(
    params: ModelParams, x: np.ndarray, y: np.ndarray, l2: float = 0.0
) -> tuple[float, ModelParams]:
    """Mean cross-entropy (plus ``l2/2 * sum |W|^2`` over weights) and its exact gradient."""
    y = _check_labels(params, y)
    inputs, logits = forward(params, x)
    n = len(y)
    if n == 0:
        raise ValueError("empty batch")
    if len(inputs[0]) != n:
        raise ValueError("feature and label counts differ")
    logp = _log_softmax(logits)
    loss = -float(logp[np.arange(n), y].mean())

    delta = np.exp(logp)
    delta[np.arange(n), y] -= 1.0
    delta /= n
    gw, gb = [None] * params.n_layers, [None] * params.n_layers
    for i in range(params.n_layers - 1, -1, -1):
        h = inputs[i]
        gw[i] = h.T @ delta
        gb[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ params.weights[i].T) * (h > 0)
    if l2:
        loss += 0.5 * l2 * sum(float(np.sum(w * w)) for w in params.weights)
        gw = [g + l2 * w for g, w in zip(gw, params.weights)]
    return loss, replace(params, weights=tuple(gw), biases=tuple(gb))


def train(
    params: ModelParams,
    x: np.ndarray,
    y: np.ndarray,
    cfg: TrainConfig,
    start_epoch: int = 0,
) -> tuple[ModelParams, list[float]]:
    """Mini-batch SGD; returns the final params and the per-epoch mean batch loss."""
    x = _as_batch(params, x)
    y = _check_labels(params, y)
    n = len(y)
    if n == 0:
        raise ValueError("cannot train on an empty dataset")
    ws = [w.copy() for w in params.weights]
    bs = [b.copy() for b in params.biases]
    current = params
    history = []
    for epoch in range(start_epoch, start_epoch + cfg.epochs):
        order = make_rng(cfg.seed, epoch).permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, grads = loss_and_grad(current, x[idx], y[idx], cfg.l2)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch starting at {start}")
            total += loss * len(idx)
            for i in range(len(ws)):
                ws[i] -= cfg.lr * grads.weights[i]
                bs[i] -= cfg.lr * grads.biases[i]
            current = ModelParams(params.arch, tuple(ws), tuple(bs))
        history.append(total / n)
    if not current.is_finite():
        raise TrainingError("parameters became non-finite")
    return current, history


def accuracy(params: ModelParams, x: np.ndarray, y: np.ndarray) -> float:
    """Top-1 accuracy; ties in the softmax go to the lowest class index."""
    probs = predict_proba(params, x)
    return float(np.mean(np.argmax(probs, axis=1) == np.asarray(y)))
