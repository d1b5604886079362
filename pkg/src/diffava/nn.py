"""Differentiable building blocks with hand-written backward passes, plus Adam.

Parameters are plain ``dict[str, np.ndarray]`` so they can be snapshotted,
flattened for gradient checks and updated in place by the optimizer.
"""
from __future__ import annotations

import numpy as np

from .numerics import Rng

Params = dict  # name -> float64 ndarray

_GELU_C = np.sqrt(2.0 / np.pi)


def init_linear(rng: Rng, fan_in: int, fan_out: int, gain: float = 1.0, bias: float = 0.0):
    w = rng.normal((fan_in, fan_out)) * (gain / np.sqrt(fan_in))
    b = np.full(fan_out, float(bias))
    return w, b


def linear(x, w, b=None):
    y = x @ w
    return y if b is None else y + b


def linear_backward(dy, x, w, with_bias=True):
    """Returns (dx, dw, db)."""
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    dw = x2.T @ dy2
    db = dy2.sum(axis=0) if with_bias else None
    return dy @ w.T, dw, db


def gelu(x):
    t = np.tanh(_GELU_C * (x + 0.044715 * x**3))
    return 0.5 * x * (1.0 + t)


def gelu_backward(dy, x):
    t = np.tanh(_GELU_C * (x + 0.044715 * x**3))
    dt = (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * dt)


def layer_norm(x, gamma, beta, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    return xhat * gamma + beta, (xhat, inv)


def layer_norm_backward(dy, cache, gamma):
    """Returns (dx, dgamma, dbeta)."""
    xhat, inv = cache
    d = dy.shape[-1]
    dxhat = dy * gamma
    dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    flat = (-1, d)
    return dx, (dy * xhat).reshape(flat).sum(0), dy.reshape(flat).sum(0)


def normalize_rows(x):
    """Unit-normalize the last axis; returns (y, norms)."""
    n = np.sqrt((x * x).sum(axis=-1, keepdims=True))
    return x / n, n


def normalize_rows_backward(dy, y, norms):
    return (dy - y * (y * dy).sum(axis=-1, keepdims=True)) / norms


def sinusoidal_embedding(positions, dim: int, max_period: float = 10000.0):
    """Transformer-style sin/cos embedding; ``positions`` may be fractional."""
    positions = np.asarray(positions, dtype=np.float64)
    half = dim // 2
    freqs = np.exp(-np.log(max_period) * np.arange(half) / max(half, 1))
    ang = positions[..., None] * freqs
    emb = np.concatenate([np.sin(ang), np.cos(ang)], axis=-1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros(emb.shape[:-1] + (1,))], axis=-1)
    return emb


def param_count(params: Params) -> int:
    return int(sum(v.size for v in params.values()))


def zeros_like_params(params: Params) -> Params:
    return {k: np.zeros_like(v) for k, v in params.items()}


def copy_params(params: Params) -> Params:
    return {k: v.copy() for k, v in params.items()}


class Adam:
    """Adam with bias correction; updates the parameter arrays in place."""

    def __init__(self, params: Params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, trainable=None):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.keys = list(params) if trainable is None else list(trainable)
        self.m = {k: np.zeros_like(params[k]) for k in self.keys}
        self.v = {k: np.zeros_like(params[k]) for k in self.keys}
        self.t = 0

    def step(self, grads: Params):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for k in self.keys:
            g = grads[k]
            self.m[k] *= self.b1
            self.m[k] += (1.0 - self.b1) * g
            self.v[k] *= self.b2
            self.v[k] += (1.0 - self.b2) * g * g
            self.params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
