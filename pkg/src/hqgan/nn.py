"""Layer containers with torch-like parameter/buffer traversal."""
from __future__ import annotations

import contextlib
from typing import Iterator

import numpy as np

from . import functional as F
from .tensor import Tensor, parameter

INIT_STD = 0.02


class Module:
    """Base class; parameters are Tensor attributes with ``requires_grad``.

    Buffers are numpy arrays exposed through :meth:`named_buffers` by the
    modules that own them (batch-norm running stats, spectral-norm vectors).
    """

    training = True

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def children(self) -> Iterator[tuple[str, Module]]:
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
        for name, child in self.children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def _own_buffers(self) -> Iterator[tuple[str, np.ndarray]]:
        return iter(())

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, buf in self._own_buffers():
            yield prefix + name, buf
        for name, child in self.children():
            yield from child.named_buffers(f"{prefix}{name}.")

    def state(self) -> list[tuple[str, np.ndarray]]:
        """Parameters then buffers, in stable traversal order."""
        items = [(n, p.data) for n, p in self.named_parameters()]
        return items + list(self.named_buffers())

    def load_state(self, entries: dict[str, np.ndarray], strict: bool = True) -> None:
        targets = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        if strict:
            missing = [n for n in list(targets) + list(buffers) if n not in entries]
            if missing:
                raise KeyError(f"missing entry for layer {missing[0]!r}")
        for name, value in entries.items():
            if name in targets:
                dest = targets[name].data
            elif name in buffers:
                dest = buffers[name]
            elif strict:
                raise KeyError(f"unexpected layer {name!r}")
            else:
                continue
            if dest.shape != value.shape:
                raise ValueError(f"shape mismatch at layer {name!r}: model {dest.shape}, stored {value.shape}")
            dest[...] = value

    def train(self, mode: bool = True) -> Module:
        self.training = mode
        for _, child in self.children():
            child.train(mode)
        return self

    def eval(self) -> Module:
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


@contextlib.contextmanager
def frozen(model: Module):
    """Treat the model's parameters as constants inside the block.

    Gradients still flow through the model to its inputs, but no weight
    gradients are computed for it.
    """
    params = model.parameters()
    flags = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield model
    finally:
        for p, flag in zip(params, flags):
            p.requires_grad = flag


def count_trainable(model: Module) -> int:
    return sum(p.size for p in model.parameters())


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, bias: bool = True,
                 rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.weight = parameter(rng.normal(0.0, INIT_STD, (out_features, in_features)))
        self.bias = parameter(np.zeros(out_features)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 3,
                 stride: int = 1, padding: int | None = None, bias: bool = True,
                 spectral: bool = False, rng: np.random.Generator | None = None,
                 sn_seed: int = 0):
        rng = rng or np.random.default_rng(0)
        shape = (out_channels, in_channels, kernel_size, kernel_size)
        self.weight = parameter(rng.normal(0.0, INIT_STD, shape))
        self.bias = parameter(np.zeros(out_channels)) if bias else None
        self.stride = stride
        self.padding = kernel_size // 2 if padding is None else padding
        self.sn = F.SpectralNormState.init(self.weight.data, seed=sn_seed) if spectral else None

    def effective_weight(self) -> Tensor:
        if self.sn is None:
            return self.weight
        return F.spectral_normalize(self.weight, self.sn, None if self.training else 0)

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.effective_weight(), self.bias, self.stride, self.padding)

    def _own_buffers(self):
        if self.sn is not None:
            yield "sn_u", self.sn.u
            yield "sn_v", self.sn.v


class BatchNorm(Module):
    """Batch norm over dim 1 of 2-D or 4-D input."""

    def __init__(self, num_features: int, momentum: float = 0.1, eps: float = 1e-5):
        self.weight = parameter(np.ones(num_features))
        self.bias = parameter(np.zeros(num_features))
        self.stats = F.RunningStats.fresh(num_features, momentum, eps)

    def forward(self, x: Tensor) -> Tensor:
        return F.batchnorm(x, self.weight, self.bias, self.stats, self.training)

    def _own_buffers(self):
        yield "running_mean", self.stats.mean
        yield "running_var", self.stats.var
