"""Backbone pretraining and the WeightStore file format.

File layout (all integers little-endian u32, values little-endian f64)::

    b"HQGW" | version | record_count
    repeated: name_len | name (utf-8) | ndim | dims... | values...
    sha256 digest (32 bytes) of everything before it
"""
from __future__ import annotations

import hashlib
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import functional as F
from .data import Dataset, batch_iter, normalize
from .discriminator import Backbone, BackboneConfig
from .nn import Linear, Module
from .optim import Adam
from .tensor import Tensor

log = logging.getLogger(__name__)

MAGIC = b"HQGW"
FORMAT_VERSION = 1
_DIGEST = 32


class WeightFormatError(ValueError):
    pass


class ChecksumError(WeightFormatError):
    pass


class UnsupportedVersionError(WeightFormatError):
    pass


@dataclass
class WeightStore:
    records: list[tuple[str, np.ndarray]]
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        names = [n for n, _ in self.records]
        if len(set(names)) != len(names):
            dup = next(n for n in names if names.count(n) > 1)
            raise WeightFormatError(f"duplicate layer name {dup!r}")
        self.records = [(n, np.array(a, dtype=np.float64)) for n, a in self.records]

    @classmethod
    def from_module(cls, model: Module) -> WeightStore:
        return cls(model.state())

    def as_dict(self) -> dict[str, np.ndarray]:
        return dict(self.records)

    def to_bytes(self) -> bytes:
        parts = [MAGIC, struct.pack("<II", self.format_version, len(self.records))]
        for name, values in self.records:
            raw = name.encode("utf-8")
            parts.append(struct.pack("<I", len(raw)) + raw)
            parts.append(struct.pack(f"<I{values.ndim}I", values.ndim, *values.shape))
            parts.append(values.astype("<f8").tobytes())
        body = b"".join(parts)
        return body + hashlib.sha256(body).digest()

    @property
    def checksum(self) -> str:
        return self.to_bytes()[-_DIGEST:].hex()

    @classmethod
    def from_bytes(cls, blob: bytes) -> WeightStore:
        if len(blob) < 12 + _DIGEST or blob[:4] != MAGIC:
            raise WeightFormatError("not a weight file (bad magic or too short)")
        body, digest = blob[:-_DIGEST], blob[-_DIGEST:]
        if hashlib.sha256(body).digest() != digest:
            raise ChecksumError("weight file checksum mismatch")
        version, count = struct.unpack_from("<II", body, 4)
        if version != FORMAT_VERSION:
            raise UnsupportedVersionError(f"weight format version {version} not supported")
        pos, records = 12, []
        try:
            for _ in range(count):
                (n,) = struct.unpack_from("<I", body, pos)
                name = body[pos + 4:pos + 4 + n].decode("utf-8")
                pos += 4 + n
                (ndim,) = struct.unpack_from("<I", body, pos)
                shape = struct.unpack_from(f"<{ndim}I", body, pos + 4)
                pos += 4 + 4 * ndim
                size = int(np.prod(shape, dtype=np.int64))
                values = np.frombuffer(body, dtype="<f8", count=size, offset=pos).reshape(shape)
                pos += 8 * size
                records.append((name, values.astype(np.float64)))
        except (struct.error, ValueError) as exc:
            raise WeightFormatError(f"truncated weight record: {exc}") from exc
        if pos != len(body):
            raise WeightFormatError(f"{len(body) - pos} trailing bytes after last record")
        return cls(records, version)


def save_weights(store: WeightStore, path: str | Path) -> None:
    Path(path).write_bytes(store.to_bytes())


def load_weights(path: str | Path) -> WeightStore:
    return WeightStore.from_bytes(Path(path).read_bytes())


def load_into(model: Module, store: WeightStore | str | Path, strict: bool = True) -> None:
    """Copy stored values into ``model`` in place; layers stay trainable."""
    if not isinstance(store, WeightStore):
        store = load_weights(store)
    model.load_state(store.as_dict(), strict=strict)


class Classifier(Module):
    """Backbone plus a temporary linear softmax head."""

    def __init__(self, cfg: BackboneConfig, n_classes: int, rng: np.random.Generator):
        self.backbone = Backbone(cfg, rng)
        self.head = Linear(cfg.feature_dim, n_classes, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.head(self.backbone(x))

    def features_and_probs(self, images: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        was = self.training
        self.eval()
        try:
            h = self.backbone(Tensor(images))
            logits = self.head(h).data
        finally:
            self.train(was)
        p = np.exp(logits - logits.max(axis=1, keepdims=True))
        return h.data, p / p.sum(axis=1, keepdims=True)


@dataclass
class PretrainReport:
    epochs: int
    accuracy: float
    losses: list[float] = field(default_factory=list)
    probe_images: np.ndarray | None = None
    probe_features: np.ndarray | None = None

    def __post_init__(self):
        if len(self.losses) != self.epochs:
            raise ValueError("loss list length must equal epochs")
        if not 0.0 <= self.accuracy <= 1.0:
            raise ValueError("accuracy outside [0, 1]")


def _accuracy(model: Classifier, images: np.ndarray, labels: np.ndarray, chunk: int = 256) -> float:
    hits = 0
    for s in range(0, len(labels), chunk):
        _, p = model.features_and_probs(images[s:s + chunk])
        hits += int((p.argmax(axis=1) == labels[s:s + chunk]).sum())
    return hits / len(labels)


def pretrain_classifier(dataset: Dataset, n_classes: int, epochs: int,
                        cfg: BackboneConfig | None = None, batch_size: int = 32,
                        learning_rate: float = 1e-3, seed: int = 0,
                        n_probe: int = 8) -> tuple[Classifier, PretrainReport]:
    """Train backbone + softmax head; labels must be remapped to 0..n_classes-1."""
    if len(dataset) == 0:
        raise ValueError("pretraining needs a non-empty dataset")
    if n_classes < 2:
        raise ValueError("n_classes must be >= 2")
    labels = np.asarray(dataset.labels)
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError(f"labels must lie in 0..{n_classes - 1}")
    cfg = cfg or BackboneConfig(input_size=dataset.images.shape[-1])
    if dataset.images.shape[-1] != cfg.input_size:
        raise F.ShapeError(f"images are {dataset.images.shape[-1]}px, backbone expects {cfg.input_size}px")
    rng = np.random.default_rng(seed)
    model = Classifier(cfg, n_classes, rng)
    opt = Adam(model.parameters(), lr=learning_rate, betas=(0.9, 0.999))
    bs = min(batch_size, len(dataset))
    losses = []
    for epoch in range(epochs):
        total, n = 0.0, 0
        for batch in batch_iter(dataset, bs, seed, epoch):
            opt.zero_grad()
            loss = F.cross_entropy(model(Tensor(batch.images)), batch.labels)
            loss.backward()
            opt.step()
            total += float(loss.data)
            n += 1
        losses.append(total / max(n, 1))
        log.info("pretrain epoch %d loss %.4f", epoch, losses[-1])
    images = normalize(dataset.images)
    acc = _accuracy(model, images, labels)
    probe = images[:n_probe]
    feats, _ = model.features_and_probs(probe)
    return model, PretrainReport(epochs, acc, losses, probe, feats)


def pretrain_backbone(dataset: Dataset, n_classes: int, epochs: int,
                      **kwargs) -> tuple[WeightStore, PretrainReport]:
    """Pretrain as a classifier and return the backbone weights only."""
    model, report = pretrain_classifier(dataset, n_classes, epochs, **kwargs)
    return WeightStore.from_module(model.backbone), report
