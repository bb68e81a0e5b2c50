"""One-hidden-layer ReLU MLP with softmax cross-entropy and manual gradients.

Parameters live in a single flat float64 vector (``W1`` row-major, ``b1``,
``W2`` row-major, ``b2``); weight matrices are stored ``(out, in)``. A hidden
width of zero gives a linear softmax classifier with layout ``W (C, d), b (C)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from prunebench import kernels
from prunebench.errors import EmptyBatchError, InputShapeError, LabelError


@dataclass(frozen=True)
class ModelLayout:
    input_dim: int
    hidden_dim: int
    num_classes: int

    def __post_init__(self):
        if self.input_dim < 1:
            raise ValueError(f"input_dim must be >= 1, got {self.input_dim}")
        if self.hidden_dim < 0:
            raise ValueError(f"hidden_dim must be >= 0, got {self.hidden_dim}")
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")

    @property
    def num_params(self) -> int:
        d, h, C = self.input_dim, self.hidden_dim, self.num_classes
        if h == 0:
            return d * C + C
        return d * h + h + h * C + C

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.input_dim, self.hidden_dim, self.num_classes


@dataclass(frozen=True, eq=False)
class ModelParams:
    layout: ModelLayout
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 1 or w.shape[0] != self.layout.num_params:
            raise InputShapeError(
                f"weights must have length {self.layout.num_params}, got shape {w.shape}"
            )
        if not np.all(np.isfinite(w)):
            raise ValueError("weights contain non-finite entries")
        object.__setattr__(self, "weights", w)

    def copy(self) -> "ModelParams":
        return ModelParams(self.layout, self.weights.copy())

    def unpack(self):
        """Views ``(W1, b1, W2, b2)``; ``W1``/``b1`` are ``None`` for a linear model."""
        return kernels.unpack_np(self.weights, *self.layout.dims)

    def __eq__(self, other):
        if not isinstance(other, ModelParams):
            return NotImplemented
        return self.layout == other.layout and np.array_equal(self.weights, other.weights)


def init_params(layout: ModelLayout, seed: int) -> ModelParams:
    """Uniform(+-1/sqrt(fan_in)) weights per layer, zero biases."""
    rng = np.random.default_rng(seed)
    theta = np.zeros(layout.num_params)
    W1, _, W2, _ = kernels.unpack_np(theta, *layout.dims)
    if W1 is not None:
        bound = 1.0 / np.sqrt(layout.input_dim)
        W1[...] = rng.uniform(-bound, bound, size=W1.shape)
        fan_in = layout.hidden_dim
    else:
        fan_in = layout.input_dim
    bound = 1.0 / np.sqrt(fan_in)
    W2[...] = rng.uniform(-bound, bound, size=W2.shape)
    return ModelParams(layout, theta)


def _as_matrix(params: ModelParams, x) -> np.ndarray:
    X = np.asarray(x, dtype=np.float64)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.ndim != 2 or X.shape[1] != params.layout.input_dim:
        raise InputShapeError(
            f"expected feature dimension {params.layout.input_dim}, got shape {np.shape(x)}"
        )
    return X, single


def forward(params: ModelParams, x) -> np.ndarray:
    """Softmax class probabilities for one sample or a batch of rows."""
    X, single = _as_matrix(params, x)
    Z = kernels.logits(params.weights, *params.layout.dims, X)
    Z = Z - Z.max(axis=1, keepdims=True)
    E = np.exp(Z)
    P = E / E.sum(axis=1, keepdims=True)
    return P[0] if single else P


def sample_losses(params: ModelParams, X, y) -> np.ndarray:
    """Cross-entropy of every row of ``X`` against ``y`` (log-sum-exp form)."""
    X, _ = _as_matrix(params, X)
    y = np.atleast_1d(np.asarray(y))
    C = params.layout.num_classes
    if y.shape[0] != X.shape[0]:
        raise InputShapeError(f"{X.shape[0]} feature rows but {y.shape[0]} labels")
    if np.any((y < 0) | (y >= C)):
        bad = int(np.flatnonzero((y < 0) | (y >= C))[0])
        raise LabelError(f"label {y[bad]} at position {bad} outside [0, {C})")
    Z = kernels.logits(params.weights, *params.layout.dims, X)
    m = Z.max(axis=1)
    lse = np.log(np.exp(Z - m[:, None]).sum(axis=1)) + m
    return lse - Z[np.arange(X.shape[0]), y.astype(np.int64)]


def sample_loss(params: ModelParams, x, y: int) -> float:
    return float(sample_losses(params, np.asarray(x, dtype=np.float64)[None, :], [y])[0])


def batch_grad(params: ModelParams, batch: Sequence[tuple] | tuple) -> tuple[np.ndarray, float]:
    """Gradient of the mean cross-entropy over ``batch`` and the mean loss itself.

    ``batch`` is either a sequence of ``(x, y)`` pairs or an ``(X, y)`` pair of arrays.
    """
    if isinstance(batch, tuple) and len(batch) == 2 and np.ndim(batch[0]) == 2:
        X, y = batch
    else:
        if len(batch) == 0:
            raise EmptyBatchError("batch is empty")
        X = np.stack([np.asarray(x, dtype=np.float64) for x, _ in batch])
        y = np.array([lab for _, lab in batch])
    X, _ = _as_matrix(params, X)
    y = np.asarray(y, dtype=np.int64)
    if X.shape[0] == 0:
        raise EmptyBatchError("batch is empty")
    C = params.layout.num_classes
    if np.any((y < 0) | (y >= C)):
        raise LabelError(f"labels must lie in [0, {C})")
    grad = np.zeros_like(params.weights)
    idx = np.arange(X.shape[0], dtype=np.int64)
    losses = kernels.loss_grad(params.weights, *params.layout.dims, X, y, idx, grad)
    return grad, float(np.mean(losses))


def flops_per_sample(layout: ModelLayout, pass_: str = "forward_backward") -> int:
    """Coarse FLOPs count: 2 per multiply-accumulate, backward costs twice the forward."""
    d, h, C = layout.dims
    macs = d * C if h == 0 else d * h + h * C
    fwd = 2 * macs
    if pass_ == "forward":
        return fwd
    if pass_ == "forward_backward":
        return 3 * fwd
    raise ValueError(f"unknown pass {pass_!r}; expected 'forward' or 'forward_backward'")
