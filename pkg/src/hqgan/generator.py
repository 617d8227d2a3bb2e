from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import functional as F
from .functional import ShapeError
from .nn import BatchNorm, Conv2d, Linear, Module, count_trainable
from .quantum import QuantumBlock
from .tensor import Tensor

__all__ = [
    "GeneratorConfig", "ClassicalBlock", "QuantumBlock", "ResUpBlock", "Generator",
    "classical_block_forward", "generator_forward", "residual_upblock_forward",
    "count_trainable", "sample_latent",
]


@dataclass
class GeneratorConfig:
    block_kind: str = "classical"
    n_qubits: int = 5
    base_channels: int = 256
    output_channels: int = 3
    output_size: int = 32
    latent: str = "uniform"

    def __post_init__(self):
        if self.block_kind not in ("classical", "quantum"):
            raise ValueError(f"block_kind must be classical or quantum, got {self.block_kind!r}")
        doublings = math.log2(self.output_size / 4) if self.output_size >= 8 else 0
        if self.output_size < 8 or doublings != int(doublings):
            raise ValueError(f"output_size must be 4 * 2^k with k >= 1, got {self.output_size}")
        if self.base_channels >> self.n_upblocks < 1:
            raise ValueError("base_channels too small for the number of upsampling blocks")

    @property
    def n_upblocks(self) -> int:
        # the final stage is a bare upsample + conv, not a residual block
        return int(math.log2(self.output_size // 4)) - 1


def sample_latent(rng: np.random.Generator, n: int, dim: int, kind: str = "uniform") -> np.ndarray:
    if kind == "uniform":
        return rng.uniform(-np.pi / 2, np.pi / 2, (n, dim))
    if kind == "normal":
        return rng.standard_normal((n, dim))
    raise ValueError(f"unknown latent distribution {kind!r}")


class ClassicalBlock(Module):
    """n -> 1 (no bias) -> ReLU -> 1 -> n (with bias): 3n parameters."""

    def __init__(self, n: int = 5, rng: np.random.Generator | None = None):
        self.fc1 = Linear(n, 1, bias=False, rng=rng)
        self.fc2 = Linear(1, n, bias=True, rng=rng)

    def forward(self, z: Tensor) -> Tensor:
        return self.fc2(F.relu(self.fc1(z)))


def classical_block_forward(z: Tensor, block: ClassicalBlock) -> Tensor:
    return block(z)


class ResUpBlock(Module):
    """Nearest 2x upsample, then two conv-BN-ReLU stages plus a 1x1 shortcut."""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator | None = None):
        self.conv1 = Conv2d(in_channels, out_channels, 3, bias=False, rng=rng)
        self.bn1 = BatchNorm(out_channels)
        self.conv2 = Conv2d(out_channels, out_channels, 3, bias=False, rng=rng)
        self.bn2 = BatchNorm(out_channels)
        self.shortcut = Conv2d(in_channels, out_channels, 1, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        up = F.upsample_nearest2x(x)
        h = F.relu(self.bn1(self.conv1(up)))
        h = F.relu(self.bn2(self.conv2(h)))
        return h + self.shortcut(up)


def residual_upblock_forward(x: Tensor, block: ResUpBlock) -> Tensor:
    return block(x)


class Generator(Module):
    def __init__(self, cfg: GeneratorConfig | None = None, rng: np.random.Generator | None = None):
        cfg = cfg or GeneratorConfig()
        rng = rng or np.random.default_rng(0)
        self.cfg = cfg
        n, c = cfg.n_qubits, cfg.base_channels
        if cfg.block_kind == "quantum":
            self.block = QuantumBlock(n, rng=rng)
        else:
            self.block = ClassicalBlock(n, rng=rng)
        self.fc = Linear(n, c * 16, rng=rng)
        self.bn = BatchNorm(c * 16)
        self.upblocks = []
        for _ in range(cfg.n_upblocks):
            self.upblocks.append(ResUpBlock(c, c // 2, rng=rng))
            c //= 2
        self.final_conv = Conv2d(c, cfg.output_channels, 3, bias=True, rng=rng)

    def forward(self, z: Tensor, trace: list | None = None) -> Tensor:
        n = self.cfg.n_qubits
        if z.ndim != 2 or z.shape[1] != n:
            raise ShapeError(f"generator expects latents of shape (N, {n}), got {z.shape}")
        h = self.bn(self.fc(self.block(z)))
        _record(trace, h)
        h = h.reshape(z.shape[0], self.cfg.base_channels, 4, 4)
        _record(trace, h)
        for blk in self.upblocks:
            h = blk(h)
            _record(trace, h)
        h = F.upsample_nearest2x(h)
        _record(trace, h)
        out = F.tanh(self.final_conv(h))
        _record(trace, out)
        return out

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Images from fresh latents in eval mode; restores the previous mode."""
        was_training = self.training
        self.eval()
        try:
            z = sample_latent(rng, n, self.cfg.n_qubits, self.cfg.latent)
            return self(Tensor(z)).data
        finally:
            self.train(was_training)


def _record(trace, t: Tensor) -> None:
    if trace is not None:
        trace.append(t.shape)


def generator_forward(z_batch: Tensor, G: Generator) -> Tensor:
    return G(z_batch)
