"""Differentiable ops needed by the generator, discriminator and losses."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, make_op


class ShapeError(ValueError):
    pass


class ConfigurationError(ValueError):
    pass


def linear(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    if x.ndim != 2 or W.ndim != 2 or x.shape[1] != W.shape[1]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {W.shape}")
    if b is not None and b.shape != (W.shape[0],):
        raise ShapeError(f"linear: bias {b.shape} incompatible with weight {W.shape}")
    xd, Wd = x.data, W.data
    out = xd @ Wd.T
    if b is None:
        return make_op(out, (x, W), lambda g: (g @ Wd, g.T @ xd))
    return make_op(out + b.data, (x, W, b), lambda g: (g @ Wd, g.T @ xd, g.sum(axis=0)))


def _out_size(size: int, k: int, stride: int, padding: int) -> int:
    # floor semantics, as stride-2 3x3 convs on even sizes require
    span = size + 2 * padding - k
    if span < 0:
        raise ConfigurationError(
            f"conv2d: kernel {k} with padding {padding} does not fit input size {size}")
    return span // stride + 1


def conv2d(x: Tensor, W: Tensor, b: Tensor | None = None, stride: int = 1,
           padding: int = 0) -> Tensor:
    """Cross-correlation of an NCHW batch with square kernels (k = 1 or 3)."""
    if x.ndim != 4 or W.ndim != 4 or x.shape[1] != W.shape[1]:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with weight {W.shape}")
    F, C, k, k2 = W.shape
    if k != k2 or k not in (1, 3):
        raise ConfigurationError(f"conv2d: unsupported kernel {k}x{k2}")
    N, _, H, Wd = x.shape
    Ho = _out_size(H, k, stride, padding)
    Wo = _out_size(Wd, k, stride, padding)
    Wm = W.data.reshape(F, C * k * k)
    hs, ws = stride * (Ho - 1) + 1, stride * (Wo - 1) + 1
    Hp, Wp = H + 2 * padding, Wd + 2 * padding

    # im2col with the batch axis innermost: rows (C, i, j), columns (Ho, Wo, N).
    # Small feature maps then still copy in long contiguous runs.
    xt = np.zeros((C, Hp, Wp, N))
    xt[:, padding:padding + H, padding:padding + Wd] = x.data.transpose(1, 2, 3, 0)
    if k == 1:
        cols = np.ascontiguousarray(xt[:, :hs:stride, :ws:stride]).reshape(C, -1)
    else:
        cols6 = np.empty((C, k, k, Ho, Wo, N))
        for i in range(k):
            for j in range(k):
                cols6[:, i, j] = xt[:, i:i + hs:stride, j:j + ws:stride]
        cols = cols6.reshape(C * k * k, -1)
    del xt

    out = (Wm @ cols).reshape(F, Ho, Wo, N).transpose(3, 0, 1, 2)
    if b is not None:
        out = out + b.data[None, :, None, None]
    need_x, need_w = x.requires_grad, W.requires_grad

    def backward(g):
        gm = g.transpose(1, 2, 3, 0).reshape(F, -1)
        gW = (gm @ cols.T).reshape(W.shape) if need_w else None
        gx = None
        if need_x:
            gc = (Wm.T @ gm).reshape(C, k, k, Ho, Wo, N)
            gxt = np.zeros((C, Hp, Wp, N))
            for i in range(k):
                for j in range(k):
                    gxt[:, i:i + hs:stride, j:j + ws:stride] += gc[:, i, j]
            gx = gxt[:, padding:padding + H, padding:padding + Wd].transpose(3, 0, 1, 2)
        if b is None:
            return gx, gW
        return gx, gW, (g.sum(axis=(0, 2, 3)) if b.requires_grad else None)

    parents = (x, W) if b is None else (x, W, b)
    return make_op(out, parents, backward)


@dataclass
class RunningStats:
    mean: np.ndarray
    var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    @classmethod
    def fresh(cls, n: int, momentum: float = 0.1, eps: float = 1e-5) -> RunningStats:
        return cls(np.zeros(n), np.ones(n), momentum, eps)


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, state: RunningStats,
              training: bool = True) -> Tensor:
    """Per-feature (2-D input) or per-channel (4-D input) batch normalization.

    In training mode the running statistics are updated in place with an
    exponential moving average (unbiased variance, as torch does).
    """
    if x.ndim == 2:
        axes, bshape = (0,), (1, -1)
    elif x.ndim == 4:
        axes, bshape = (0, 2, 3), (1, -1, 1, 1)
    else:
        raise ShapeError(f"batchnorm: expected 2-D or 4-D input, got {x.shape}")
    C = x.shape[1]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ShapeError(f"batchnorm: {C} features but gamma {gamma.shape}, beta {beta.shape}")
    xd = x.data
    g_ = gamma.data.reshape(bshape)

    if training:
        m = xd.size // C
        if m < 2:
            raise ValueError("batchnorm: a single value per feature gives degenerate batch statistics")
        mu = xd.mean(axis=axes)
        centered = xd - mu.reshape(bshape)
        var = np.square(centered).mean(axis=axes)
        state.mean *= 1 - state.momentum
        state.mean += state.momentum * mu
        state.var *= 1 - state.momentum
        state.var += state.momentum * var * m / (m - 1)
        invstd = 1.0 / np.sqrt(var + state.eps)
        xhat = centered * invstd.reshape(bshape)
        out = xhat * g_ + beta.data.reshape(bshape)

        def backward(g):
            dxhat = g * g_
            s1 = dxhat.sum(axis=axes).reshape(bshape)
            s2 = (dxhat * xhat).sum(axis=axes).reshape(bshape)
            gx = invstd.reshape(bshape) / m * (m * dxhat - s1 - xhat * s2)
            if not gamma.requires_grad:
                return gx, None, None
            return gx, (g * xhat).sum(axis=axes), g.sum(axis=axes)
    else:
        invstd = 1.0 / np.sqrt(state.var + state.eps)
        xhat = (xd - state.mean.reshape(bshape)) * invstd.reshape(bshape)
        out = xhat * g_ + beta.data.reshape(bshape)
        scale = g_ * invstd.reshape(bshape)

        def backward(g):
            return g * scale, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return make_op(out, (x, gamma, beta), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_op(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return make_op(y, (x,), lambda g: (g * (1.0 - y * y),))


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "tanh":
        return tanh(x)
    raise ValueError(f"unknown activation {kind!r}")


def upsample_nearest2x(x: Tensor) -> Tensor:
    N, C, H, W = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)
    return make_op(out, (x,), lambda g: (g.reshape(N, C, H, 2, W, 2).sum(axis=(3, 5)),))


def global_avg_pool(x: Tensor) -> Tensor:
    N, C, H, W = x.shape
    return make_op(x.data.mean(axis=(2, 3)), (x,),
                   lambda g: (np.broadcast_to(g[:, :, None, None] / (H * W), x.shape).copy(),))


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


@dataclass
class SpectralNormState:
    """Left/right singular-vector estimates carried between forward passes."""
    u: np.ndarray
    v: np.ndarray
    power_iterations: int = 1
    degenerate: bool = field(default=False, compare=False)

    @classmethod
    def init(cls, weight: np.ndarray, seed: int = 0, power_iterations: int = 1) -> SpectralNormState:
        Wm = weight.reshape(weight.shape[0], -1)
        u = _unit(np.random.default_rng(seed).standard_normal(Wm.shape[0]))
        return cls(u, _unit(Wm.T @ u), power_iterations)


def power_iterate(Wm: np.ndarray, state: SpectralNormState, n: int) -> None:
    u, v = state.u, state.v
    for _ in range(n):
        v = _unit(Wm.T @ u)
        u = _unit(Wm @ v)
    state.u, state.v = u, v


def spectral_normalize(W: Tensor, state: SpectralNormState, n_iter: int | None = None) -> Tensor:
    """Return ``W / sigma`` with sigma = u^T W v from power iteration.

    ``n_iter`` defaults to ``state.power_iterations``; pass 0 to reuse the stored
    vectors untouched (eval mode). u and v are constants for differentiation.
    """
    Wm = W.data.reshape(W.shape[0], -1)
    if state.u.shape[0] != Wm.shape[0] or state.v.shape[0] != Wm.shape[1]:
        raise ShapeError(f"spectral_normalize: state vectors do not fit weight {W.shape}")
    if not np.any(Wm):
        state.degenerate = True
        warnings.warn("spectral_normalize: all-zero weight left unnormalized", RuntimeWarning)
        return W
    state.degenerate = False
    power_iterate(Wm, state, state.power_iterations if n_iter is None else n_iter)
    u, v = state.u, state.v
    sigma = float(u @ Wm @ v)
    if sigma <= 0:
        # stale vectors pointing the wrong way; refresh once
        power_iterate(Wm, state, 1)
        u, v = state.u, state.v
        sigma = float(u @ Wm @ v)
    uv = np.outer(u, v).reshape(W.shape)
    Wd = W.data

    def backward(g):
        return (g - (g * Wd).sum() / sigma * uv) / sigma,

    return make_op(Wd / sigma, (W,), backward)


def bce_with_logits(logits: Tensor, targets) -> Tensor:
    """Mean binary cross-entropy on raw logits, overflow-free."""
    t = np.asarray(targets.data if isinstance(targets, Tensor) else targets, dtype=np.float64)
    t = np.broadcast_to(t, logits.shape)
    x = logits.data
    loss = np.maximum(x, 0) - x * t + np.log1p(np.exp(-np.abs(x)))
    n = x.size

    def backward(g):
        sig = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                       np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
        return g * (sig - t) / n,

    return make_op(np.asarray(loss.mean()), (logits,), backward)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy against integer labels."""
    x = logits.data
    shifted = x - x.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    n = x.shape[0]
    rows = np.arange(n)
    loss = -logp[rows, labels].mean()

    def backward(g):
        p = np.exp(logp)
        p[rows, labels] -= 1.0
        return g * p / n,

    return make_op(np.asarray(loss), (logits,), backward)
