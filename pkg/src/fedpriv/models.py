"""Minimal supervised models with analytic gradients over flat parameter vectors.

Two architectures: multinomial logistic regression (hidden_dim=0) and a
one-hidden-layer ReLU MLP. Parameters live in a single float64 vector laid
out layer by layer with the output layer last, so tail-perturbation and
weighted aggregation can treat models as plain vectors.

All functions are pure: they never mutate their inputs and are safe to call
concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description; hidden_dim=0 means logistic regression."""

    input_dim: int
    hidden_dim: int
    num_classes: int
    activation: str = "relu"

    def __post_init__(self) -> None:
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if self.hidden_dim < 0:
            raise ValueError("hidden_dim must be >= 0")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation: {self.activation!r}")

    @property
    def param_count(self) -> int:
        d, h, n = self.input_dim, self.hidden_dim, self.num_classes
        if h == 0:
            return n * (d + 1)
        return h * (d + 1) + n * (h + 1)


@dataclass(frozen=True)
class Prediction:
    """Softmax probabilities and, when a label was supplied, the sample loss."""

    probs: np.ndarray
    loss: float | None = None


def init_params(spec: ModelSpec, rng: np.random.Generator) -> np.ndarray:
    """Seeded uniform init in [-a, a] with a = sqrt(6 / (fan_in + fan_out)) per layer."""
    d, h, n = spec.input_dim, spec.hidden_dim, spec.num_classes
    parts = []
    if h == 0:
        a = math.sqrt(6.0 / (d + n))
        parts.append(rng.uniform(-a, a, n * (d + 1)))
    else:
        a1 = math.sqrt(6.0 / (d + h))
        parts.append(rng.uniform(-a1, a1, h * (d + 1)))
        a2 = math.sqrt(6.0 / (h + n))
        parts.append(rng.uniform(-a2, a2, n * (h + 1)))
    return np.concatenate(parts)


def unpack(spec: ModelSpec, params: np.ndarray):
    """Split the flat vector into per-layer views (W1, b1, W2, b2) or (W, b)."""
    if params.shape != (spec.param_count,):
        raise ValueError(
            f"parameter vector has length {params.shape}, expected ({spec.param_count},)"
        )
    d, h, n = spec.input_dim, spec.hidden_dim, spec.num_classes
    if h == 0:
        w = params[: n * d].reshape(n, d)
        b = params[n * d :]
        return w, b
    o = 0
    w1 = params[o : o + h * d].reshape(h, d)
    o += h * d
    b1 = params[o : o + h]
    o += h
    w2 = params[o : o + n * h].reshape(n, h)
    o += n * h
    b2 = params[o:]
    return w1, b1, w2, b2


def _logits_and_hidden(spec: ModelSpec, params: np.ndarray, x: np.ndarray):
    """Forward pass on a (n, input_dim) batch; returns logits and hidden acts."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != spec.input_dim:
        raise ValueError(f"feature dim {x.shape[1]} != input_dim {spec.input_dim}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite feature values")
    if spec.hidden_dim == 0:
        w, b = unpack(spec, params)
        return x @ w.T + b, None, x
    w1, b1, w2, b2 = unpack(spec, params)
    pre = x @ w1.T + b1
    hid = np.maximum(pre, 0.0)
    return hid @ w2.T + b2, (pre, hid), x


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max-logit subtraction for stability."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def predict_proba(spec: ModelSpec, params: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Softmax probabilities for a batch (n, input_dim) -> (n, num_classes)."""
    logits, _, _ = _logits_and_hidden(spec, params, x)
    return softmax(logits)


def forward(
    spec: ModelSpec, params: np.ndarray, x: np.ndarray, label: int | None = None
) -> Prediction:
    """Single-sample forward pass; includes cross-entropy loss when a label is given."""
    logits, _, _ = _logits_and_hidden(spec, params, np.asarray(x, dtype=np.float64))
    probs = softmax(logits)[0]
    loss = None
    if label is not None:
        loss = float(-log_softmax(logits)[0, int(label)])
    return Prediction(probs=probs, loss=loss)


def per_sample_losses(
    spec: ModelSpec, params: np.ndarray, x: np.ndarray, y: np.ndarray
) -> np.ndarray:
    """Cross-entropy of each sample in a batch, (n,)."""
    logits, _, _ = _logits_and_hidden(spec, params, x)
    y = np.asarray(y, dtype=np.int64)
    return -log_softmax(logits)[np.arange(len(y)), y]


def grad_from_dlogits(
    spec: ModelSpec, params: np.ndarray, x: np.ndarray, dlogits: np.ndarray
) -> np.ndarray:
    """Backpropagate a gradient w.r.t. the logits into a flat parameter gradient."""
    logits, cache, x = _logits_and_hidden(spec, params, x)
    del logits
    if spec.hidden_dim == 0:
        gw = dlogits.T @ x
        gb = dlogits.sum(axis=0)
        return np.concatenate([gw.ravel(), gb])
    pre, hid = cache
    _, _, w2, _ = unpack(spec, params)
    gw2 = dlogits.T @ hid
    gb2 = dlogits.sum(axis=0)
    dhid = dlogits @ w2
    dhid = np.where(pre > 0.0, dhid, 0.0)
    gw1 = dhid.T @ x
    gb1 = dhid.sum(axis=0)
    return np.concatenate([gw1.ravel(), gb1, gw2.ravel(), gb2])


def loss_and_grad(
    spec: ModelSpec, params: np.ndarray, x: np.ndarray, y: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over a batch and its analytic gradient.

    Args:
        x: (n, input_dim) features, n >= 1.
        y: (n,) integer class ids.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    n = x.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    logits, _, _ = _logits_and_hidden(spec, params, x)
    logp = log_softmax(logits)
    loss = float(-logp[np.arange(n), y].mean())
    if not math.isfinite(loss):
        raise FloatingPointError("non-finite loss")
    probs = np.exp(logp)
    dlogits = probs.copy()
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n
    return loss, grad_from_dlogits(spec, params, x, dlogits)


def per_sample_grad(
    spec: ModelSpec, params: np.ndarray, x: np.ndarray, y: int
) -> np.ndarray:
    """Cross-entropy gradient of a single sample."""
    _, g = loss_and_grad(spec, params, np.asarray(x, dtype=np.float64)[None, :], [int(y)])
    return g


def sgd_epochs(
    spec: ModelSpec,
    params: np.ndarray,
    x: np.ndarray,
    y: np.ndarray,
    lr: float,
    epochs: int,
    batch_size: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Mini-batch SGD on cross-entropy; shuffling is driven solely by rng.

    Returns updated parameters; the input vector is not modified.
    """
    if lr < 0:
        raise ValueError("lr must be >= 0")
    if epochs < 1 or batch_size < 1:
        raise ValueError("epochs and batch_size must be >= 1")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n = x.shape[0]
    if n == 0:
        raise ValueError("empty dataset")
    out = params.copy()
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            _, g = loss_and_grad(spec, out, x[idx], y[idx])
            out -= lr * g
    return out


def accuracy(spec: ModelSpec, params: np.ndarray, x: np.ndarray, y: np.ndarray) -> float:
    """Fraction of samples whose argmax prediction matches the label."""
    logits, _, _ = _logits_and_hidden(spec, params, x)
    return float((logits.argmax(axis=1) == np.asarray(y)).mean())
