"""CIFAR-10 binary ingestion, class filtering, normalization and a synthetic
shapes dataset for desk-scale runs."""
from __future__ import annotations

import colorsys
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

log = logging.getLogger(__name__)

CIFAR_RECORD_BYTES = 1 + 3 * 32 * 32
CIFAR_RECORDS_PER_FILE = 10_000
CIFAR_TRAIN_FILES = [f"data_batch_{i}.bin" for i in range(1, 6)]
CIFAR_TEST_FILE = "test_batch.bin"
CIFAR_CLASSES = ("airplane", "automobile", "bird", "cat", "deer",
                 "dog", "frog", "horse", "ship", "truck")

SHAPES = ("disc", "square", "bar")


class CifarFormatError(ValueError):
    pass


@dataclass
class Dataset:
    """Raw uint8 images (N, 3, H, W) with integer labels."""
    images: np.ndarray
    labels: np.ndarray
    counts: dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ValueError("images and labels differ in length")
        if not self.counts:
            values, counts = np.unique(self.labels, return_counts=True)
            self.counts = {int(v): int(c) for v, c in zip(values, counts)}

    def __len__(self) -> int:
        return len(self.labels)


@dataclass
class ImageBatch:
    images: np.ndarray
    labels: np.ndarray


def read_cifar_batch(path: str | Path) -> Dataset:
    path = Path(path)
    raw = np.fromfile(path, dtype=np.uint8)
    expected = CIFAR_RECORD_BYTES * CIFAR_RECORDS_PER_FILE
    if raw.size != expected:
        raise CifarFormatError(f"{path.name}: expected {expected} bytes, found {raw.size}")
    records = raw.reshape(CIFAR_RECORDS_PER_FILE, CIFAR_RECORD_BYTES)
    labels = records[:, 0].astype(np.int64)
    if labels.max() > 9:
        raise CifarFormatError(f"{path.name}: label byte {labels.max()} outside 0..9")
    images = records[:, 1:].reshape(-1, 3, 32, 32)
    return Dataset(images, labels)


def load_cifar10(directory: str | Path) -> tuple[Dataset, Dataset]:
    """Decode the binary-version batches into (train, test)."""
    directory = Path(directory)
    for sub in ("cifar-10-batches-bin",):
        if (directory / sub).is_dir():
            directory = directory / sub
    missing = [f for f in CIFAR_TRAIN_FILES + [CIFAR_TEST_FILE] if not (directory / f).exists()]
    if missing:
        raise FileNotFoundError(f"CIFAR-10 files missing under {directory}: {', '.join(missing)}")
    parts = [read_cifar_batch(directory / f) for f in CIFAR_TRAIN_FILES]
    train = Dataset(np.concatenate([p.images for p in parts]), np.concatenate([p.labels for p in parts]))
    test = read_cifar_batch(directory / CIFAR_TEST_FILE)
    return train, test


def filter_class(dataset: Dataset, labels) -> Dataset:
    labels = [int(l) for l in np.atleast_1d(labels)]
    bad = [l for l in labels if not 0 <= l <= 9]
    if bad:
        raise ValueError(f"class labels must be in 0..9, got {bad}")
    mask = np.isin(dataset.labels, labels)
    out = Dataset(dataset.images[mask], dataset.labels[mask])
    if len(out) == 0:
        warnings.warn(f"filter_class: no images with labels {labels}", RuntimeWarning)
    log.info("filter_class %s -> %s", labels, out.counts)
    return out


def cap_samples(dataset: Dataset, cap: int | None) -> Dataset:
    if cap is None:
        return dataset
    if cap > len(dataset):
        raise ValueError(f"sample cap {cap} exceeds the {len(dataset)} available images")
    return Dataset(dataset.images[:cap], dataset.labels[:cap])


def normalize(images: np.ndarray) -> np.ndarray:
    """uint8 [0, 255] -> float64 [-1, 1] via x / 127.5 - 1."""
    return np.asarray(images, dtype=np.float64) / 127.5 - 1.0


def denormalize(images: np.ndarray) -> np.ndarray:
    """Inverse of :func:`normalize`, rounded and clipped to bytes."""
    return np.clip(np.rint((np.asarray(images) + 1.0) * 127.5), 0, 255).astype(np.uint8)


def _draw(kind: str, size: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    r = size * rng.uniform(0.22, 0.34)
    cx = rng.uniform(r, size - r)
    cy = rng.uniform(r, size - r)
    if kind == "disc":
        mask = (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r
    elif kind == "square":
        mask = (np.abs(xx - cx) <= r * 0.85) & (np.abs(yy - cy) <= r * 0.85)
    elif kind == "bar":
        half_w, half_h = r, max(r / 3.0, 1.0)
        if rng.random() < 0.5:
            half_w, half_h = half_h, half_w
        mask = (np.abs(xx - cx) <= half_w) & (np.abs(yy - cy) <= half_h)
    else:
        raise ValueError(f"unknown shape {kind!r}")
    fg = np.array(colorsys.hsv_to_rgb(rng.random(), rng.uniform(0.6, 1.0), rng.uniform(0.75, 1.0)))
    bg = np.array(colorsys.hsv_to_rgb(rng.random(), rng.uniform(0.0, 0.5), rng.uniform(0.05, 0.3)))
    img = np.where(mask[None], fg[:, None, None], bg[:, None, None])
    img = img + rng.normal(0.0, 0.02, img.shape)
    return np.clip(np.rint(img * 255), 0, 255).astype(np.uint8)


def synthetic_shapes_dataset(n_per_class: int, size: int = 16, classes=SHAPES,
                             seed: int | list[int] = 0) -> Dataset:
    """Coloured discs / squares / bars with jittered position, scale and hue.

    Labels are indices into ``classes``; output is byte-deterministic for a seed.
    """
    if size not in (8, 16, 32):
        raise ValueError(f"synthetic size must be 8, 16 or 32, got {size}")
    classes = list(classes)
    rng = np.random.default_rng(seed)
    images = np.empty((n_per_class * len(classes), 3, size, size), dtype=np.uint8)
    labels = np.repeat(np.arange(len(classes)), n_per_class)
    for i, label in enumerate(labels):
        images[i] = _draw(classes[label], size, rng)
    order = rng.permutation(len(labels))
    return Dataset(images[order], labels[order])


def batch_iter(dataset: Dataset | np.ndarray, batch_size: int, seed: int,
               epoch: int = 0) -> Iterator[ImageBatch]:
    """Shuffled full batches; the trailing partial batch is dropped.

    The permutation depends on (seed, epoch) only.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if isinstance(dataset, Dataset):
        images, labels = dataset.images, dataset.labels
    else:
        images, labels = dataset, np.zeros(len(dataset), dtype=np.int64)
    order = np.random.default_rng([seed, epoch]).permutation(len(images))
    for start in range(0, len(order) - batch_size + 1, batch_size):
        idx = order[start:start + batch_size]
        batch = images[idx]
        if batch.dtype == np.uint8:
            batch = normalize(batch)
        yield ImageBatch(batch, labels[idx])


@dataclass
class DatasetSpec:
    source: str = "synthetic"
    classes: list[int] = field(default_factory=lambda: [2])
    split: str = "train"
    sample_cap: int | None = None
    seed: int = 0
    # synthetic-only knobs
    size: int = 16
    synthetic_count: int = 512

    def __post_init__(self):
        if self.source not in ("cifar10", "synthetic"):
            raise ValueError(f"dataset source must be cifar10 or synthetic, got {self.source!r}")
        if self.split not in ("train", "test"):
            raise ValueError(f"split must be train or test, got {self.split!r}")


def resolve(spec: DatasetSpec, data_dir: str | Path | None = None) -> Dataset:
    """Materialize the split described by ``spec``."""
    if spec.source == "cifar10":
        if data_dir is None:
            raise FileNotFoundError("cifar10 source needs a data directory")
        train, test = load_cifar10(data_dir)
        ds = filter_class(train if spec.split == "train" else test, spec.classes)
        return cap_samples(ds, spec.sample_cap)
    # synthetic classes index SHAPES; train and test come from disjoint seeds
    kinds = [SHAPES[c % len(SHAPES)] for c in spec.classes]
    split_seed = [spec.seed, 0 if spec.split == "train" else 1]
    per_class = -(-spec.synthetic_count // len(kinds))
    ds = synthetic_shapes_dataset(per_class, spec.size, kinds, seed=split_seed)
    ds = Dataset(ds.images[:spec.synthetic_count], np.asarray(spec.classes)[ds.labels[:spec.synthetic_count]])
    return cap_samples(ds, spec.sample_cap)
