"""Minimal dense neural layer: ReLU MLPs with exact analytical gradients and Adam.

Everything is float64 and functional-style: forward returns a cache that
backward consumes, adam_step returns fresh arrays. The networks here are tiny,
so determinism and testability beat speed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, TrainingError, UsageError

Array = np.ndarray


@dataclass
class Mlp:
    """Stack of affine layers, ReLU between them.

    weights[k] has shape (out_k, in_k); biases[k] has shape (out_k,).
    relu_output controls whether the last layer is ReLU-activated too
    (feature heads) or left linear (score / value heads).
    """

    weights: list[Array]
    biases: list[Array]
    relu_output: bool = False

    def __post_init__(self) -> None:
        if not self.weights or len(self.weights) != len(self.biases):
            raise ConfigurationError("weights and biases must be non-empty and aligned")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                raise ConfigurationError(f"layer {k}: weight {w.shape} / bias {b.shape} mismatch")
            if k > 0 and w.shape[1] != self.weights[k - 1].shape[0]:
                raise ConfigurationError(
                    f"layer {k}: input width {w.shape[1]} != previous output "
                    f"{self.weights[k - 1].shape[0]}"
                )

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    def arrays(self) -> list[Array]:
        """Parameters as a flat list [W0, b0, W1, b1, ...] (shared, not copied)."""
        out: list[Array] = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def copy(self) -> "Mlp":
        return Mlp([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                   self.relu_output)


def init_mlp(sizes: tuple[int, ...], rng: np.random.Generator, relu_output: bool = False) -> Mlp:
    """Glorot-uniform weights (±sqrt(6/(fan_in+fan_out))), zero biases.

    sizes = (in, hidden..., out).
    """
    if len(sizes) < 2:
        raise ConfigurationError("an MLP needs at least input and output sizes")
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return Mlp(weights, biases, relu_output)


def mlp_forward(mlp: Mlp, x: Array) -> tuple[Array, list[Array]]:
    """Forward pass. x is (in,) or (batch, in); returns (output, cache).

    The cache holds the input of every layer (post-activation of the previous
    one), which together with the params is enough for exact backprop.
    """
    squeeze = x.ndim == 1
    h = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if h.shape[1] != mlp.in_dim:
        raise ConfigurationError(f"input width {h.shape[1]} != expected {mlp.in_dim}")
    cache = []
    last = len(mlp.weights) - 1
    for k, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        cache.append(h)
        z = h @ w.T + b
        h = np.maximum(z, 0.0) if (k < last or mlp.relu_output) else z
    return (h[0] if squeeze else h), cache


def mlp_backward(mlp: Mlp, cache: list[Array], grad_out: Array
                 ) -> tuple[list[tuple[Array, Array]], Array]:
    """Exact gradients of sum(output * grad_out) w.r.t. params and input.

    cache must come from mlp_forward on the same params. Returns
    ([(dW, db) per layer], grad_input) with batch gradients summed over rows.
    """
    if len(cache) != len(mlp.weights):
        raise UsageError("cache does not match this MLP (stale or from another network)")
    squeeze = grad_out.ndim == 1 and cache[0].ndim == 2 and cache[0].shape[0] == 1 \
        and grad_out.shape[0] == mlp.out_dim
    g = np.atleast_2d(np.asarray(grad_out, dtype=np.float64))
    grads: list[tuple[Array, Array]] = [None] * len(mlp.weights)  # type: ignore[list-item]
    last = len(mlp.weights) - 1
    for k in range(last, -1, -1):
        h_in = cache[k]
        if h_in.shape[1] != mlp.weights[k].shape[1]:
            raise UsageError("cache does not match this MLP (stale or from another network)")
        if k < last or mlp.relu_output:
            # recompute the pre-activation mask; cheaper than caching z
            z = h_in @ mlp.weights[k].T + mlp.biases[k]
            g = g * (z > 0.0)
        grads[k] = (g.T @ h_in, g.sum(axis=0))
        g = g @ mlp.weights[k]
    return grads, (g[0] if squeeze else g)


def softmax(scores: Array, axis: int = -1) -> Array:
    """Stable softmax (max-subtraction)."""
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        raise UsageError("softmax of an empty score vector")
    shifted = s - s.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


@dataclass
class AdamState:
    """Bias-corrected Adam accumulators for a fixed list of parameter arrays."""

    m: list[Array]
    v: list[Array]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: list[Array], beta1: float = 0.9, beta2: float = 0.999,
                   eps: float = 1e-8) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params],
                   0, beta1, beta2, eps)


def adam_step(params: list[Array], grads: list[Array], state: AdamState, lr: float
              ) -> tuple[list[Array], AdamState]:
    """One standard bias-corrected Adam update; returns new params and state."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ConfigurationError("params, grads and Adam state must have matching layouts")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise TrainingError("non-finite gradient in Adam update")
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m2 = b1 * m + (1.0 - b1) * g
        v2 = b2 * v + (1.0 - b2) * g * g
        step = lr * (m2 / c1) / (np.sqrt(v2 / c2) + state.eps)
        new_params.append(p - step)
        new_m.append(m2)
        new_v.append(v2)
    return new_params, AdamState(new_m, new_v, t, b1, b2, state.eps)
