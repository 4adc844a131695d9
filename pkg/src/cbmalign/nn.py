"""Neural-network primitives on top of the autodiff engine.

Dense layers with Glorot-uniform init, label-smoothed cross-entropy over
probability vectors, and AdamW (decoupled weight decay).
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor
from .errors import ConfigError, NumericError

PROB_FLOOR = 1e-12  # clamp applied to probabilities before log


def glorot_uniform(out_dim: int, in_dim: int, rng: np.random.Generator) -> np.ndarray:
    bound = np.sqrt(6.0 / (in_dim + out_dim))
    return rng.uniform(-bound, bound, size=(out_dim, in_dim))


class DenseLayer:
    """Affine map y = x W^T + b with weights of shape (out, in)."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator | None = None):
        if in_dim < 1 or out_dim < 1:
            raise ConfigError(f"dense layer needs positive dims, got in={in_dim} out={out_dim}")
        if rng is None:
            rng = np.random.default_rng(0)
        self.weight = Tensor(glorot_uniform(out_dim, in_dim, rng), requires_grad=True)
        self.bias = Tensor(np.zeros(out_dim), requires_grad=True)

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ConfigError(
                f"dense layer expects input (batch, {self.in_dim}), got {x.shape}")
        return (x @ self.weight.T) + self.bias

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]


def one_hot(indices: np.ndarray, num_classes: int) -> np.ndarray:
    indices = np.asarray(indices, dtype=np.int64)
    if indices.ndim != 1:
        raise ConfigError(f"class indices must be 1-d, got shape {indices.shape}")
    if indices.min(initial=0) < 0 or indices.max(initial=0) >= num_classes:
        raise ConfigError(f"class index out of range [0, {num_classes})")
    out = np.zeros((indices.shape[0], num_classes))
    out[np.arange(indices.shape[0]), indices] = 1.0
    return out


def cross_entropy(probabilities: Tensor, target, smoothing: float, num_classes: int) -> Tensor:
    """Batch-mean cross-entropy -sum_k q_k log p_k with smoothed targets.

    ``target`` is either a vector of class indices or a one-hot array. The
    smoothed target is q = (1-s) * onehot + s / K. Probabilities are clamped
    at PROB_FLOOR before the log.
    """
    if not 0.0 <= smoothing <= 1.0:
        raise ConfigError(f"smoothing must be in [0, 1], got {smoothing}")
    if probabilities.ndim != 2 or probabilities.shape[1] != num_classes:
        raise ConfigError(
            f"expected probabilities of shape (batch, {num_classes}), got {probabilities.shape}")
    target = np.asarray(target)
    if target.ndim == 1:
        target = one_hot(target, num_classes)
    elif target.shape != probabilities.shape:
        raise ConfigError(
            f"one-hot target shape {target.shape} does not match {probabilities.shape}")
    batch = probabilities.shape[0]
    q = (1.0 - smoothing) * target + smoothing / num_classes
    log_p = probabilities.clamp_min(PROB_FLOOR).log()
    return (log_p * Tensor(q)).sum().scale(-1.0 / batch)


class AdamW:
    """Bias-corrected adaptive optimizer with decoupled weight decay.

    Update per step: theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)
    - lr * weight_decay * theta, with decay applied to the pre-step value.
    """

    def __init__(self, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, weight_decay: float = 0.0):
        if lr < 0 or weight_decay < 0:
            raise ConfigError("lr and weight_decay must be nonnegative")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self._moments: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def step(self, named_params: list[tuple[str, Tensor]]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for idx, (name, p) in enumerate(named_params):
            g = p.grad if p.grad is not None else np.zeros(p.shape)
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for parameter '{name}'")
            m, v = self._moments.get(idx, (np.zeros(p.shape), np.zeros(p.shape)))
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * g * g
            self._moments[idx] = (m, v)
            m_hat = m / bc1
            v_hat = v / bc2
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps) \
                - self.lr * self.weight_decay * p.data
