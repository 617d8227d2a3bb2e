"""Alternating D/G updates with BCE-with-logits and Adam, plus periodic metrics."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import functional as F
from . import metrics as M
from .data import Dataset, batch_iter, normalize
from .discriminator import FULL_STAGES, BackboneConfig, Discriminator, HeadConfig
from .generator import Generator, GeneratorConfig, sample_latent
from .nn import Module, frozen
from .optim import Adam
from .tensor import Tensor, no_grad

log = logging.getLogger(__name__)

# experiment id -> (generator kind, discriminator kind)
EXPERIMENTS = {
    1: ("classical", "classical"),
    2: ("classical", "hybrid"),
    3: ("hybrid", "classical"),
    4: ("hybrid", "hybrid"),
    5: ("hybrid", "hybrid"),
}


class TrainingAborted(RuntimeError):
    def __init__(self, message: str, snapshot: dict):
        super().__init__(message)
        self.snapshot = snapshot


@dataclass
class TrainConfig:
    learning_rate: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    batch_size: int = 8
    epochs: int = 100
    metric_every: int = 10
    seed: int = 0
    n_eval: int | None = None

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 0 or self.metric_every < 1:
            raise ValueError("learning_rate, batch_size and metric_every must be positive; epochs >= 0")
        for name in ("beta1", "beta2"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in (0, 1)")
        if self.n_eval is not None and self.n_eval < 2:
            raise ValueError("n_eval must be >= 2")


@dataclass
class ModelConfig:
    generator_kind: str = "classical"
    discriminator_kind: str = "classical"
    n_qubits: int = 5
    image_size: int = 32
    gen_base_channels: int = 256
    backbone_channels: list[int] = field(default_factory=lambda: list(FULL_STAGES))
    blocks_per_stage: int = 2
    latent: str = "uniform"

    def __post_init__(self):
        for kind in (self.generator_kind, self.discriminator_kind):
            if kind not in ("classical", "hybrid"):
                raise ValueError(f"network kind must be classical or hybrid, got {kind!r}")

    @classmethod
    def for_experiment(cls, experiment: int, **overrides) -> ModelConfig:
        if experiment not in EXPERIMENTS:
            raise ValueError(f"experiment id must be 1-5, got {experiment}")
        g, d = EXPERIMENTS[experiment]
        return cls(generator_kind=g, discriminator_kind=d, **overrides)

    def generator_config(self) -> GeneratorConfig:
        kind = "quantum" if self.generator_kind == "hybrid" else "classical"
        return GeneratorConfig(kind, self.n_qubits, self.gen_base_channels, 3, self.image_size, self.latent)

    def backbone_config(self) -> BackboneConfig:
        return BackboneConfig(list(self.backbone_channels), self.blocks_per_stage, self.image_size)

    def head_config(self) -> HeadConfig:
        return HeadConfig(self.discriminator_kind, self.n_qubits)


@dataclass
class StepRecord:
    step: int
    epoch: int
    d_loss: float
    g_loss: float


@dataclass
class MetricRecord:
    epoch: int
    fid: float
    kid: float
    is_mean: float
    is_std: float
    extractor_id: str
    n_eval: int


@dataclass
class RunLog:
    steps: list[StepRecord] = field(default_factory=list)
    metrics: list[MetricRecord] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)


def param_norms(model: Module) -> dict[str, float]:
    return {n: float(np.linalg.norm(p.data)) for n, p in model.named_parameters()}


def _finite_or_abort(value: float, what: str, G: Module, D: Module, context: dict | None) -> float:
    if not np.isfinite(value):
        snap = dict(context or {})
        snap["generator_norms"] = param_norms(G)
        snap["discriminator_norms"] = param_norms(D)
        raise TrainingAborted(f"{what} is not finite ({value}) at step {snap.get('step')}", snap)
    return value


def train_step(G: Module, D: Module, real_batch: np.ndarray, opt_g: Adam, opt_d: Adam,
               sample_z: Callable[[int], np.ndarray], context: dict | None = None) -> tuple[float, float]:
    """One D update on real + detached fakes, then one G update on fresh latents."""
    n = len(real_batch)
    with no_grad():
        fake = G(Tensor(sample_z(n))).data
    opt_d.zero_grad()
    d_loss = F.bce_with_logits(D(Tensor(real_batch)), 1.0) + F.bce_with_logits(D(Tensor(fake)), 0.0)
    d_val = _finite_or_abort(float(d_loss.data), "discriminator loss", G, D, context)
    d_loss.backward()
    opt_d.step()

    opt_g.zero_grad()
    with frozen(D):  # D weight gradients would be discarded anyway
        g_loss = F.bce_with_logits(D(G(Tensor(sample_z(n)))), 1.0)
        g_val = _finite_or_abort(float(g_loss.data), "generator loss", G, D, context)
        g_loss.backward()
    opt_g.step()
    opt_d.zero_grad()
    return d_val, g_val


@dataclass
class EvalResult:
    fid: float
    kid: float
    is_mean: float
    is_std: float
    n_eval: int
    extractor_id: str


def evaluate_epoch(G, test_images: np.ndarray, extractor: M.Extractor, n_gen: int | None = None,
                   seed=0, real: M.FeatureSet | None = None, splits: int = 1) -> EvalResult:
    """Metrics of ``n_gen`` fresh samples (eval-mode G) against held-out real images."""
    n_gen = len(test_images) if n_gen is None else n_gen
    if real is None:
        real = M.extract_features(test_images, extractor, "real")
    with no_grad():
        fake_images = G.sample(n_gen, np.random.default_rng(seed))
    feats, probs = extractor(fake_images)
    gen = M.FeatureSet(feats, "generated", extractor.id)
    is_mean, is_std = M.inception_score(M.ClassProbabilities(probs), splits)
    return EvalResult(M.fid(real, gen), M.kid(real, gen), is_mean, is_std, n_gen, extractor.id)


def build_models(model_cfg: ModelConfig, seed: int, pretrained=None) -> tuple[Generator, Discriminator]:
    g_seq, d_seq = np.random.SeedSequence([seed, 1]).spawn(2)
    G = Generator(model_cfg.generator_config(), np.random.default_rng(g_seq))
    D = Discriminator(model_cfg.backbone_config(), model_cfg.head_config(),
                      np.random.default_rng(d_seq), weights=pretrained)
    return G, D


def _evaluation_epochs(cfg: TrainConfig) -> list[int]:
    epochs = set(range(0, cfg.epochs + 1, cfg.metric_every))
    epochs.add(cfg.epochs)
    return sorted(epochs)


def train(config: TrainConfig, model_config: ModelConfig, train_data: Dataset | np.ndarray,
          test_images: np.ndarray | None = None, extractor: M.Extractor | None = None,
          pretrained=None, on_evaluate: Callable[[int, Generator], None] | None = None,
          models: tuple[Generator, Discriminator] | None = None) -> RunLog:
    """Run ``config.epochs`` epochs of train_step; metrics at epoch 0, every ``metric_every`` and the last."""
    G, D = models or build_models(model_config, config.seed, pretrained)
    hyper = dict(lr=config.learning_rate, betas=(config.beta1, config.beta2))
    opt_g, opt_d = Adam(G.parameters(), **hyper), Adam(D.parameters(), **hyper)
    z_rng = np.random.default_rng([config.seed, 2])
    gcfg = G.cfg

    def sample_z(n: int) -> np.ndarray:
        return sample_latent(z_rng, n, gcfg.n_qubits, gcfg.latent)

    images = train_data.images if isinstance(train_data, Dataset) else train_data
    if images.dtype == np.uint8:
        images = normalize(images)
    if len(images) < config.batch_size:
        raise ValueError(f"{len(images)} training images cannot fill a batch of {config.batch_size}")

    runlog = RunLog()
    eval_epochs = set(_evaluation_epochs(config)) if extractor is not None and test_images is not None else set()
    real = M.extract_features(test_images, extractor, "real") if eval_epochs else None
    n_eval = config.n_eval or (len(test_images) if test_images is not None else 0)

    def evaluate(epoch: int) -> None:
        if epoch not in eval_epochs:
            return
        res = evaluate_epoch(G, test_images, extractor, n_eval, seed=[config.seed, 3, epoch], real=real)
        runlog.metrics.append(MetricRecord(epoch, res.fid, res.kid, res.is_mean, res.is_std,
                                           res.extractor_id, res.n_eval))
        log.info("epoch %d fid %.4f kid %.4f is %.3f", epoch, res.fid, res.kid, res.is_mean)
        if on_evaluate is not None:
            on_evaluate(epoch, G)

    G.train()
    D.train()
    evaluate(0)
    step = 0
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        G.train()
        for batch in batch_iter(images, config.batch_size, config.seed, epoch):
            ctx = {"step": step, "epoch": epoch, "seed": config.seed}
            d, g = train_step(G, D, batch.images, opt_g, opt_d, sample_z, ctx)
            runlog.steps.append(StepRecord(step, epoch, d, g))
            step += 1
        runlog.epoch_seconds.append(time.perf_counter() - t0)
        evaluate(epoch + 1)
    return runlog
