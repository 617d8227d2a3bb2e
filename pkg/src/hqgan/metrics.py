"""FID, KID and Inception Score over features from a pluggable extractor."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .functional import ShapeError


@dataclass
class FeatureSet:
    features: np.ndarray
    source: str = "real"
    extractor_id: str = "identity"

    def __post_init__(self):
        self.features = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        if self.features.ndim != 2:
            raise ShapeError(f"features must be N x d, got {self.features.shape}")
        if self.source not in ("real", "generated"):
            raise ValueError(f"source must be real or generated, got {self.source!r}")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features contain non-finite entries")

    def __len__(self) -> int:
        return self.features.shape[0]


@dataclass
class ClassProbabilities:
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 2 or p.shape[0] == 0:
            raise ValueError("class probabilities need at least one row")
        if np.any(p < 0) or np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-8):
            raise ValueError("rows must be nonnegative and sum to 1")
        self.probs = p


class Extractor:
    """Eval-mode wrapper around a pretrained classifier (features + class posteriors)."""

    def __init__(self, classifier, extractor_id: str | None = None, chunk: int = 256):
        from .transfer import WeightStore
        self.classifier = classifier.eval()
        self.input_size = classifier.backbone.cfg.input_size
        self.chunk = chunk
        if extractor_id is None:
            digest = hashlib.sha256(WeightStore.from_module(classifier).to_bytes()).hexdigest()
            extractor_id = f"desk-backbone-{digest[:12]}"
        self.id = extractor_id

    def __call__(self, images: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        images = np.asarray(images, dtype=np.float64)
        if images.ndim != 4 or images.shape[1] != 3 or images.shape[2:] != (self.input_size,) * 2:
            raise ShapeError(f"extractor expects (N, 3, {self.input_size}, {self.input_size}), got {images.shape}")
        if images.size and (images.min() < -1.0 - 1e-9 or images.max() > 1.0 + 1e-9):
            raise ValueError("extractor input must lie in [-1, 1]")
        feats, probs = [], []
        for s in range(0, len(images), self.chunk):
            f, p = self.classifier.features_and_probs(images[s:s + self.chunk])
            feats.append(f)
            probs.append(p)
        return np.concatenate(feats), np.concatenate(probs)


def extract_features(images: np.ndarray, extractor: Extractor, source: str = "real") -> FeatureSet:
    feats, _ = extractor(images)
    return FeatureSet(feats, source, extractor.id)


def class_probabilities(images: np.ndarray, extractor: Extractor) -> ClassProbabilities:
    _, probs = extractor(images)
    return ClassProbabilities(probs)


def matrix_sqrt_psd(A: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition, negative eigenvalues clipped."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ShapeError(f"matrix_sqrt_psd needs a square matrix, got {A.shape}")
    if np.max(np.abs(A - A.T), initial=0.0) > 1e-8:
        raise ValueError("matrix_sqrt_psd: input is not symmetric")
    w, V = np.linalg.eigh((A + A.T) / 2)
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def _check_pair(real: FeatureSet, gen: FeatureSet) -> tuple[np.ndarray, np.ndarray]:
    if real.extractor_id != gen.extractor_id:
        raise ValueError(f"feature sets come from different extractors: {real.extractor_id} vs {gen.extractor_id}")
    x, y = real.features, gen.features
    if x.shape[1] != y.shape[1]:
        raise ShapeError(f"feature dims differ: {x.shape[1]} vs {y.shape[1]}")
    if len(x) < 2 or len(y) < 2:
        raise ValueError("FID/KID need at least 2 samples per set")
    return x, y


def _stats(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return x.mean(axis=0), np.atleast_2d(np.cov(x, rowvar=False))


def fid(real: FeatureSet, gen: FeatureSet) -> float:
    x, y = _check_pair(real, gen)
    mu_r, s_r = _stats(x)
    mu_g, s_g = _stats(y)
    root_r = matrix_sqrt_psd(s_r)
    cross = matrix_sqrt_psd(root_r @ s_g @ root_r)
    value = float(np.sum((mu_r - mu_g) ** 2) + np.trace(s_r) + np.trace(s_g) - 2.0 * np.trace(cross))
    return max(value, 0.0)


def polynomial_kernel(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return (a @ b.T / a.shape[1] + 1.0) ** 3


def kid(real: FeatureSet, gen: FeatureSet) -> float:
    """Unbiased squared MMD with the cubic polynomial kernel."""
    x, y = _check_pair(real, gen)
    n, m = len(x), len(y)
    kxx = polynomial_kernel(x, x)
    kyy = polynomial_kernel(y, y)
    kxy = polynomial_kernel(x, y)
    t1 = (kxx.sum() - np.trace(kxx)) / (n * (n - 1))
    t2 = (kyy.sum() - np.trace(kyy)) / (m * (m - 1))
    return float(t1 + t2 - 2.0 * kxy.mean())


def kid_blocks(real: FeatureSet, gen: FeatureSet, n_blocks: int = 10,
               seed: int = 0) -> tuple[float, float]:
    """Mean and std of KID over disjoint random blocks, for error bars."""
    rng = np.random.default_rng(seed)
    n = min(len(real), len(gen)) // n_blocks
    if n < 2:
        raise ValueError("too few samples for the requested number of blocks")
    ri, gi = rng.permutation(len(real)), rng.permutation(len(gen))
    vals = [kid(FeatureSet(real.features[ri[b * n:(b + 1) * n]], "real", real.extractor_id),
                FeatureSet(gen.features[gi[b * n:(b + 1) * n]], "generated", gen.extractor_id))
            for b in range(n_blocks)]
    return float(np.mean(vals)), float(np.std(vals))


def inception_score(probs: ClassProbabilities | np.ndarray, splits: int = 1) -> tuple[float, float]:
    if not isinstance(probs, ClassProbabilities):
        probs = ClassProbabilities(probs)
    p = probs.probs
    if splits < 1 or splits > len(p):
        raise ValueError(f"splits must be in 1..{len(p)}")
    scores = []
    for part in np.array_split(p, splits):
        marginal = part.mean(axis=0)
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(part > 0, part * (np.log(part) - np.log(marginal)), 0.0)
        # rounding can push the mean KL a hair outside [0, log C]
        kl = np.clip(terms.sum(axis=1).mean(), 0.0, np.log(p.shape[1]))
        scores.append(np.exp(kl))
    return float(np.mean(scores)), float(np.std(scores))
