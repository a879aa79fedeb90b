"""Softmax regression trained with mini-batch SGD, plus the update algebra used by aggregators."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np


class ModelError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class _Params:
    weights: np.ndarray  # C x F
    bias: np.ndarray  # C

    @property
    def shape(self) -> tuple[int, int]:
        return self.weights.shape

    def _check(self, other: "_Params") -> None:
        if self.weights.shape != other.weights.shape or self.bias.shape != other.bias.shape:
            raise ModelError(f"shape mismatch: {self.shape} vs {other.shape}")

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias)))

    def same_as(self, other: "_Params") -> bool:
        return np.array_equal(self.weights, other.weights) and np.array_equal(self.bias, other.bias)


class ModelParams(_Params):
    pass


class ModelDelta(_Params):
    """Parameter difference ``new - reference``."""


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.02
    local_epochs: int = 1
    batch_size: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ModelError("learning_rate must be >= 0")
        if self.local_epochs < 1 or self.batch_size < 1:
            raise ModelError("local_epochs and batch_size must be >= 1")


def init_model(feature_count: int, class_count: int, seed: int = 0) -> ModelParams:
    # zero init; the objective is convex so nothing is lost
    if feature_count < 1 or class_count < 1:
        raise ModelError("feature_count and class_count must be >= 1")
    return ModelParams(np.zeros((class_count, feature_count)), np.zeros(class_count))


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _probs(m: _Params, X: np.ndarray) -> np.ndarray:
    z = X @ m.weights.T + m.bias
    z -= z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def gradient(m: ModelParams, X: np.ndarray, y: np.ndarray) -> ModelDelta:
    """Exact gradient of the mean cross-entropy over the batch."""
    if len(y) == 0:
        raise ModelError("empty batch")
    p = _probs(m, X)
    p[np.arange(len(y)), y] -= 1.0
    p /= len(y)
    return ModelDelta(p.T @ X, p.sum(axis=0))


def loss(m: ModelParams, X: np.ndarray, y: np.ndarray) -> float:
    lp = _log_softmax(X @ m.weights.T + m.bias)
    return float(-lp[np.arange(len(y)), y].mean())


def sgd_train(
    m: ModelParams,
    X: np.ndarray,
    y: np.ndarray,
    cfg: TrainConfig,
    rng: np.random.Generator | None = None,
) -> ModelParams:
    """Run ``cfg.local_epochs`` shuffled passes of mini-batch SGD; ``m`` is left untouched."""
    n = len(y)
    if n == 0:
        raise ModelError("cannot train on an empty shard")
    if X.shape[1] != m.weights.shape[1]:
        raise ModelError(f"feature dimension {X.shape[1]} does not match model {m.weights.shape[1]}")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    W = m.weights.copy()
    b = m.bias.copy()
    lr, bs = cfg.learning_rate, cfg.batch_size
    rows = np.arange(bs)
    for _ in range(cfg.local_epochs):
        order = rng.permutation(n)
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            xb = X[idx]
            z = xb @ W.T + b
            z -= z.max(axis=1, keepdims=True)
            p = np.exp(z)
            p /= p.sum(axis=1, keepdims=True)
            p[rows[: len(idx)], y[idx]] -= 1.0
            p *= lr / len(idx)
            W -= p.T @ xb
            b -= p.sum(axis=0)
    return ModelParams(W, b)


def delta(new: ModelParams, ref: ModelParams) -> ModelDelta:
    new._check(ref)
    return ModelDelta(new.weights - ref.weights, new.bias - ref.bias)


def apply_delta(m: ModelParams, d: ModelDelta) -> ModelParams:
    m._check(d)
    return ModelParams(m.weights + d.weights, m.bias + d.bias)


def _mean(items: Sequence[_Params]) -> tuple[np.ndarray, np.ndarray]:
    first = items[0]
    for it in items[1:]:
        first._check(it)
    # plain left-to-right sum so a single item comes back bit-for-bit
    W = first.weights.copy()
    b = first.bias.copy()
    for it in items[1:]:
        W += it.weights
        b += it.bias
    k = float(len(items))
    return W / k, b / k


def apply_averaged_deltas(m: ModelParams, deltas: Sequence[ModelDelta]) -> ModelParams:
    if not deltas:
        raise ModelError("no deltas to average")
    W, b = _mean(deltas)
    return apply_delta(m, ModelDelta(W, b))


def average_models(models: Sequence[ModelParams]) -> ModelParams:
    if not models:
        raise ModelError("no models to average")
    W, b = _mean(models)
    return ModelParams(W, b)


def evaluate(m: ModelParams, X: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Return (accuracy, mean cross-entropy). Argmax ties go to the lowest class id."""
    if len(y) == 0:
        raise ModelError("cannot evaluate on an empty set")
    logits = X @ m.weights.T + m.bias
    acc = float(np.mean(np.argmax(logits, axis=1) == y))
    lp = _log_softmax(logits)
    return acc, float(-lp[np.arange(len(y)), y].mean())


def save_model(m: ModelParams, path: str | Path) -> None:
    C, F = m.weights.shape
    lines = [f"{C} {F}"]
    lines += [" ".join(repr(float(v)) for v in row) for row in m.weights]
    lines.append(" ".join(repr(float(v)) for v in m.bias))
    Path(path).write_text("\n".join(lines) + "\n")


def load_model(path: str | Path) -> ModelParams:
    lines = Path(path).read_text().split("\n")
    C, F = (int(t) for t in lines[0].split())
    W = np.array([[float(t) for t in ln.split()] for ln in lines[1:1 + C]])
    b = np.array([float(t) for t in lines[1 + C].split()])
    if W.shape != (C, F) or b.shape != (C,):
        raise ModelError(f"{path}: checkpoint does not match header {C} {F}")
    return ModelParams(W, b)
