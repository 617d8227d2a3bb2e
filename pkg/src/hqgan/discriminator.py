"""ResNet-18-shaped discriminator backbone with classical and hybrid heads.

Backbone changes from the stock classifier: 3x3 stride-1 spectral-normalized
stem, no max-pool, identity in place of the final FC (features out).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import functional as F
from .nn import BatchNorm, Conv2d, Linear, Module
from .quantum import QuantumBlock
from .tensor import Tensor

FULL_STAGES = [64, 64, 128, 256, 512]
DESK_STAGES = [16, 16, 32, 64, 128]


@dataclass
class BackboneConfig:
    stage_channels: list[int] = field(default_factory=lambda: list(FULL_STAGES))
    blocks_per_stage: int = 2
    input_size: int = 32

    def __post_init__(self):
        if len(self.stage_channels) != 5:
            raise ValueError("stage_channels needs the stem width plus four stage widths")
        if self.input_size % 8:
            raise ValueError("input_size must be divisible by 8 (three stride-2 stages)")

    @property
    def feature_dim(self) -> int:
        return self.stage_channels[-1]


@dataclass
class HeadConfig:
    kind: str = "classical"
    n_qubits: int = 5

    def __post_init__(self):
        if self.kind not in ("classical", "hybrid"):
            raise ValueError(f"head kind must be classical or hybrid, got {self.kind!r}")
        if self.kind == "hybrid" and self.n_qubits < 1:
            raise ValueError("hybrid head requires n_qubits >= 1")


class BasicBlock(Module):
    def __init__(self, cin: int, cout: int, stride: int, rng: np.random.Generator):
        self.conv1 = Conv2d(cin, cout, 3, stride=stride, bias=False, rng=rng)
        self.bn1 = BatchNorm(cout)
        self.conv2 = Conv2d(cout, cout, 3, bias=False, rng=rng)
        self.bn2 = BatchNorm(cout)
        if stride != 1 or cin != cout:
            self.down_conv = Conv2d(cin, cout, 1, stride=stride, bias=False, rng=rng)
            self.down_bn = BatchNorm(cout)
        else:
            self.down_conv = self.down_bn = None

    def forward(self, x: Tensor) -> Tensor:
        h = F.relu(self.bn1(self.conv1(x)))
        h = self.bn2(self.conv2(h))
        skip = x if self.down_conv is None else self.down_bn(self.down_conv(x))
        return F.relu(h + skip)


class Backbone(Module):
    def __init__(self, cfg: BackboneConfig | None = None, rng: np.random.Generator | None = None):
        cfg = cfg or BackboneConfig()
        rng = rng or np.random.default_rng(0)
        self.cfg = cfg
        stem, *widths = cfg.stage_channels
        self.conv1 = Conv2d(3, stem, 3, stride=1, bias=False, spectral=True, rng=rng,
                            sn_seed=int(rng.integers(2 ** 31)))
        self.bn1 = BatchNorm(stem)
        self.blocks = []
        cin = stem
        for stage, cout in enumerate(widths):
            for b in range(cfg.blocks_per_stage):
                stride = 2 if stage > 0 and b == 0 else 1
                self.blocks.append(BasicBlock(cin, cout, stride, rng))
                cin = cout

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != 3:
            raise F.ShapeError(f"backbone expects (N, 3, H, W) images, got {x.shape}")
        h = F.relu(self.bn1(self.conv1(x)))
        for blk in self.blocks:
            h = blk(h)
        return F.global_avg_pool(h)


def build_backbone(cfg: BackboneConfig | None = None, weights=None,
                   rng: np.random.Generator | None = None) -> Backbone:
    """Fresh backbone, optionally initialized from a WeightStore (all layers stay trainable)."""
    model = Backbone(cfg, rng)
    if weights is not None:
        from .transfer import load_into
        load_into(model, weights)
    return model


class ClassicalHead(Module):
    def __init__(self, features: int, rng: np.random.Generator | None = None):
        self.fc = Linear(features, 1, rng=rng)

    def forward(self, h: Tensor) -> Tensor:
        return self.fc(h)


class HybridHead(Module):
    """features -> n_qubits projection -> circuit -> scalar logit."""

    def __init__(self, features: int, n_qubits: int = 5, rng: np.random.Generator | None = None):
        self.proj = Linear(features, n_qubits, rng=rng)
        self.circuit = QuantumBlock(n_qubits, rng=rng)
        self.out = Linear(n_qubits, 1, rng=rng)

    def forward(self, h: Tensor) -> Tensor:
        return self.out(self.circuit(self.proj(h)))

    def expectations(self, h: Tensor) -> np.ndarray:
        return self.circuit(self.proj(h)).data


def classical_head(features: Tensor, head: ClassicalHead) -> Tensor:
    return head(features)


def hybrid_head(features: Tensor, head: HybridHead) -> Tensor:
    return head(features)


class Discriminator(Module):
    def __init__(self, backbone_cfg: BackboneConfig | None = None, head_cfg: HeadConfig | None = None,
                 rng: np.random.Generator | None = None, weights=None):
        rng = rng or np.random.default_rng(0)
        head_cfg = head_cfg or HeadConfig()
        self.backbone = build_backbone(backbone_cfg, weights, rng)
        d = self.backbone.cfg.feature_dim
        if head_cfg.kind == "hybrid":
            self.head = HybridHead(d, head_cfg.n_qubits, rng=rng)
        else:
            self.head = ClassicalHead(d, rng=rng)
        self.head_cfg = head_cfg

    def forward(self, x: Tensor) -> Tensor:
        return self.head(self.backbone(x))
