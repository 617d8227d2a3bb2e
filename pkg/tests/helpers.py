"""Independent oracles shared by the test modules."""
from __future__ import annotations

import numpy as np

from hqgan.tensor import Tensor


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if scale == 0 else float(np.linalg.norm(a - b) / scale)


def numeric_grad(f, x: np.ndarray, h: float = 1e-6, indices=None) -> np.ndarray:
    """Central differences of scalar f() w.r.t. array x (modified in place, restored)."""
    g = np.zeros_like(x)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for i in (range(flat.size) if indices is None else indices):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gf[i] = (fp - fm) / (2 * h)
    return g


def gradcheck(build, tensors: list[Tensor], h: float = 1e-6, max_per_tensor: int | None = None,
              seed: int = 0) -> float:
    """Relative error between autodiff and finite differences.

    ``build()`` must return a scalar Tensor computed from ``tensors``. The
    error is taken over the concatenated gradient of all tensors, so inputs
    whose true gradient is exactly zero (a bias feeding batch norm) do not
    turn finite-difference noise into a spurious 100% error.
    With ``max_per_tensor`` only a random subset of coordinates is compared.
    """
    for t in tensors:
        t.grad = None
    build().backward()
    rng = np.random.default_rng(seed)
    ana_all, num_all = [], []
    for t in tensors:
        idx = None
        if max_per_tensor is not None and t.size > max_per_tensor:
            idx = rng.choice(t.size, max_per_tensor, replace=False)
        num = numeric_grad(lambda: float(build().data), t.data, h, idx)
        ana = np.zeros_like(t.data) if t.grad is None else t.grad
        if idx is not None:
            num, ana = num.reshape(-1)[idx], ana.reshape(-1)[idx]
        ana_all.append(np.ravel(ana))
        num_all.append(np.ravel(num))
    return rel_err(np.concatenate(ana_all), np.concatenate(num_all))


def projected(out: Tensor, seed: int = 99) -> Tensor:
    """Scalar <out, R> with a fixed random R, so every output entry matters."""
    R = np.random.default_rng(seed).standard_normal(out.shape)
    return (out * Tensor(R)).sum()


def conv2d_loop(x: np.ndarray, W: np.ndarray, b, stride: int, padding: int) -> np.ndarray:
    N, C, H, Wd = x.shape
    F, _, k, _ = W.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    Ho = (H + 2 * padding - k) // stride + 1
    Wo = (Wd + 2 * padding - k) // stride + 1
    out = np.zeros((N, F, Ho, Wo))
    for n in range(N):
        for f in range(F):
            for i in range(Ho):
                for j in range(Wo):
                    patch = xp[n, :, i * stride:i * stride + k, j * stride:j * stride + k]
                    out[n, f, i, j] = np.sum(patch * W[f]) + (0.0 if b is None else b[f])
    return out
