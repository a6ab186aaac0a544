"""Numeric building blocks: activations, GRU cells with manual backward
passes, Glorot initialization, and Adam with a warmup + inverse-sqrt
learning-rate schedule.

Everything is dtype-polymorphic: production paths run float32, the
gradient checker reruns the identical code in float64.
"""

from __future__ import annotations

import numpy as np


def sigmoid(x):
    """Numerically safe logistic; never overflows, saturates cleanly."""
    t = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + t), t / (1.0 + t))


def softmax(x, axis=-1):
    m = np.max(x, axis=axis, keepdims=True)
    e = np.exp(x - m)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(x, axis=-1):
    m = np.max(x, axis=axis, keepdims=True)
    s = x - m
    return s - np.log(np.sum(np.exp(s), axis=axis, keepdims=True))


def glorot(rng: np.random.Generator, shape, dtype=np.float32):
    fan_in, fan_out = shape[0], shape[-1]
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape).astype(dtype)


def gru_step(x, h_prev, W, U, b):
    """One GRU step.  x: (..., d_in), h_prev: (..., d).  W: (d_in, 3d),
    U: (d, 3d), b: (3d,), gate order [update | reset | candidate].

    Returns (h, cache) where cache feeds gru_step_backward.
    """
    d = h_prev.shape[-1]
    a = x @ W + b
    rec_zr = h_prev @ U[:, : 2 * d]
    z = sigmoid(a[..., :d] + rec_zr[..., :d])
    r = sigmoid(a[..., d : 2 * d] + rec_zr[..., d:])
    rh = r * h_prev
    n = np.tanh(a[..., 2 * d :] + rh @ U[:, 2 * d :])
    h = (1.0 - z) * n + z * h_prev
    return h, (x, h_prev, z, r, n, rh)


def gru_step_backward(dh, cache, W, U, grads, w_name, u_name, b_name):
    """Backward of gru_step.  Accumulates parameter grads into `grads`
    under the given names; returns (dx, dh_prev)."""
    x, h_prev, z, r, n, rh = cache
    d = h_prev.shape[-1]

    dn = dh * (1.0 - z)
    dz = dh * (h_prev - n)
    dh_prev = dh * z

    dan = dn * (1.0 - n * n)
    drh = dan @ U[:, 2 * d :].T
    dr = drh * h_prev
    dh_prev = dh_prev + drh * r

    daz = dz * z * (1.0 - z)
    dar = dr * r * (1.0 - r)

    da = np.concatenate([daz, dar, dan], axis=-1)
    x2 = x if x.ndim == 2 else x[None, :]
    da2 = da if da.ndim == 2 else da[None, :]
    hp2 = h_prev if h_prev.ndim == 2 else h_prev[None, :]
    rh2 = rh if rh.ndim == 2 else rh[None, :]

    grads[w_name] += x2.T @ da2
    grads[b_name] += da2.sum(axis=0)
    dU = grads[u_name]
    dU[:, :d] += hp2.T @ da2[:, :d]
    dU[:, d : 2 * d] += hp2.T @ da2[:, d : 2 * d]
    dU[:, 2 * d :] += rh2.T @ da2[:, 2 * d :]

    dx = da @ W.T
    dh_prev = dh_prev + daz @ U[:, :d].T + dar @ U[:, d : 2 * d].T
    return dx, dh_prev


class Adam:
    """Adam with warmup + inverse-sqrt decay: lr(t) = peak * min(t/w, sqrt(w/t))."""

    def __init__(self, params: dict, lr_peak: float, betas=(0.9, 0.999),
                 warmup_steps: int = 200, eps: float = 1e-8):
        self.params = params
        self.lr_peak = lr_peak
        self.beta1, self.beta2 = betas
        self.warmup = max(1, int(warmup_steps))
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def lr_at(self, t: int) -> float:
        return self.lr_peak * min(t / self.warmup, np.sqrt(self.warmup / t))

    def step(self, grads: dict):
        self.t += 1
        lr = self.lr_at(self.t)
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for k, p in self.params.items():
            g = grads[k]
            m = self.m[k]
            v = self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            if lr != 0.0:
                p -= (lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)
