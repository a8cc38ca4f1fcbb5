"""Differentiable layers used by the gait model.

Layout is channel-last throughout: ``(..., T, J, C)`` with frames on axis -3,
points on axis -2 and channels on axis -1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ShapeMismatch

BN_EPS = 1e-5


linear = ag.linear


def temporal_conv(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """1-D convolution over the frame axis, independently per point.

    ``weight`` has shape ``(k, C_in, C_out)`` with odd ``k``; zero padding of
    ``(k - 1) // 2`` frames on each side keeps T unchanged.
    """
    if x.ndim < 3:
        raise ShapeMismatch(f"temporal_conv needs (..., T, J, C), got {x.shape}")
    k, c_in, c_out = weight.shape
    if k % 2 != 1:
        raise ShapeMismatch(f"kernel size must be odd, got {k}")
    if x.shape[-1] != c_in:
        raise ShapeMismatch(f"temporal_conv channels {x.shape[-1]} != {c_in}")
    if k == 1:
        return linear(x, ag.reshape(weight, (c_in, c_out)), bias)

    pad = (k - 1) // 2
    T = x.shape[-3]
    xd = x.data
    widths = [(0, 0)] * xd.ndim
    widths[-3] = (pad, pad)
    xp = np.pad(xd, widths)
    cols = np.concatenate([xp[..., i:i + T, :, :] for i in range(k)], axis=-1)
    wd = weight.data.reshape(k * c_in, c_out)
    y = cols @ wd
    need_x = x.requires_grad
    if bias is not None:
        y += bias.data
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def back(g):
        g2 = g.reshape(-1, c_out)
        gw = (cols.reshape(-1, k * c_in).T @ g2).reshape(k, c_in, c_out)
        gx = None
        if need_x:
            gcols = g @ wd.T
            gxp = np.zeros(xp.shape, dtype=ag.DTYPE)
            for i in range(k):
                gxp[..., i:i + T, :, :] += gcols[..., i * c_in:(i + 1) * c_in]
            gx = gxp[..., pad:pad + T, :, :]
        return (gx, gw) if bias is None else (gx, gw, g2.sum(axis=0))

    return ag._emit(y, inputs, back)


@dataclass
class BatchNormState:
    """Running statistics for one batch-norm layer (not differentiated)."""

    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1

    @classmethod
    def fresh(cls, channels: int, momentum: float = 0.1) -> "BatchNormState":
        return cls(np.zeros(channels), np.ones(channels), momentum)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState,
               train: bool) -> Tensor:
    """Per-channel normalization over every axis except the last."""
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeMismatch(f"batch_norm params {gamma.shape}/{beta.shape} for {c} channels")
    shape = x.shape
    xd = x.data.reshape(-1, c)
    n = xd.shape[0]
    if train:
        mu = xd.mean(axis=0)
        centered = xd - mu
        var = (centered * centered).mean(axis=0)
        m = state.momentum
        state.running_mean = (1 - m) * state.running_mean + m * mu
        unbiased = var * n / max(n - 1, 1)
        state.running_var = (1 - m) * state.running_var + m * unbiased
    else:
        centered = xd - state.running_mean
        var = state.running_var
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = centered * inv_std
    gd = gamma.data
    y = xhat * gd + beta.data

    def back(g):
        g = g.reshape(-1, c)
        ggamma = (g * xhat).sum(axis=0)
        gbeta = g.sum(axis=0)
        gxhat = g * gd
        if train:
            gx = inv_std * (gxhat - gbeta * gd / n - xhat * (ggamma * gd / n))
        else:
            gx = gxhat * inv_std
        return gx.reshape(shape), ggamma, gbeta

    return ag._emit(y.reshape(shape), (x, gamma, beta), back)


def avg_pool_points(x: Tensor, window: int) -> Tensor:
    """Non-overlapping mean over contiguous groups of ``window`` points (axis -2)."""
    j, c = x.shape[-2], x.shape[-1]
    if window <= 0 or j % window:
        raise ShapeMismatch(f"cannot pool {j} points by window {window}")
    grouped = ag.reshape(x, x.shape[:-2] + (j // window, window, c))
    return ag.mean(grouped, axis=-2)


def multi_head_attention(x: Tensor, w_q: Tensor, w_k: Tensor, w_v: Tensor, w_out: Tensor,
                         b_q: Tensor, b_k: Tensor, b_v: Tensor, b_out: Tensor,
                         heads: int) -> Tensor:
    """Scaled dot-product self-attention over the point axis, per frame."""
    c = x.shape[-1]
    if c % heads:
        raise ShapeMismatch(f"{c} channels not divisible by {heads} heads")
    for w in (w_q, w_k, w_v, w_out):
        if w.shape != (c, c):
            raise ShapeMismatch(f"attention weight {w.shape} for C={c}")
    lead = x.shape[:-2]
    j = x.shape[-2]
    d = c // heads
    flat = ag.reshape(x, (-1, j, c))

    def split_heads(w, b):
        return ag.permute(ag.reshape(linear(flat, w, b), (-1, j, heads, d)), (0, 2, 1, 3))

    q, k, v = split_heads(w_q, b_q), split_heads(w_k, b_k), split_heads(w_v, b_v)
    scores = ag.mul_scalar(ag.matmul(q, ag.transpose(k)), 1.0 / np.sqrt(d))
    attn = ag.softmax(scores, axis=-1)
    mixed = ag.permute(ag.matmul(attn, v), (0, 2, 1, 3))
    out = linear(ag.reshape(mixed, (-1, j, c)), w_out, b_out)
    return ag.reshape(out, lead + (j, c))
