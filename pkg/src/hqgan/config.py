"""Flat ``key = value`` experiment configuration files."""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

from .data import SHAPES
from .discriminator import FULL_STAGES
from .quantum import MAX_QUBITS
from .trainer import EXPERIMENTS, ModelConfig, TrainConfig


class ConfigError(ValueError):
    def __init__(self, message: str, field_name: str | None = None, line: int | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field_name is not None:
            where.append(f"field '{field_name}'")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.field_name = field_name
        self.line = line


def _int_list(text: str) -> list[int]:
    return [int(t) for t in text.replace(" ", "").split(",") if t]


def _opt_int(text: str) -> int | None:
    return None if text.lower() in ("", "none") else int(text)


def _opt_str(text: str) -> str | None:
    return None if text.lower() in ("", "none") else text


@dataclass
class ExperimentConfig:
    experiment: int = 4
    generator: str | None = None
    discriminator: str | None = None
    # data
    dataset: str = "synthetic"
    classes: list[int] | None = None
    sample_cap: int | None = None
    test_cap: int | None = None
    image_size: int = 32
    train_count: int = 512
    test_count: int = 256
    data_dir: str | None = None
    # training
    epochs: int = 100
    batch_size: int = 8
    learning_rate: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    metric_every: int = 10
    seed: int = 0
    n_eval: int | None = None
    # models
    n_qubits: int = 5
    latent: str = "uniform"
    gen_base_channels: int = 256
    backbone_channels: list[int] = field(default_factory=lambda: list(FULL_STAGES))
    blocks_per_stage: int = 2
    # transfer
    discriminator_init: str = "pretrained"
    pretrained: str | None = None
    pretrain_epochs: int = 5
    pretrain_per_class: int = 256
    # outputs
    output_dir: str = "runs/default"
    grid_count: int = 16
    grid_cols: int = 4

    def target_classes(self) -> list[int]:
        if self.classes is not None:
            return list(self.classes)
        if self.experiment == 5:
            return [1, 2, 5] if self.dataset == "cifar10" else [0, 1, 2]
        return [2] if self.dataset == "cifar10" else [0]

    def run_groups(self) -> list[list[int]]:
        """Experiment 5 trains one model per class; the others train one model on all classes."""
        classes = self.target_classes()
        return [[c] for c in classes] if self.experiment == 5 else [classes]

    def model_config(self) -> ModelConfig:
        return ModelConfig.for_experiment(
            self.experiment, n_qubits=self.n_qubits, image_size=self.image_size,
            gen_base_channels=self.gen_base_channels, backbone_channels=list(self.backbone_channels),
            blocks_per_stage=self.blocks_per_stage, latent=self.latent)

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.learning_rate, self.beta1, self.beta2, self.batch_size, self.epochs,
                           self.metric_every, self.seed, self.n_eval)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, list):
                v = ",".join(str(x) for x in v)
            lines.append(f"{f.name} = {'none' if v is None else v}")
        return "\n".join(lines) + "\n"


_PARSERS = {
    "experiment": int, "generator": _opt_str, "discriminator": _opt_str, "dataset": str,
    "classes": _int_list, "sample_cap": _opt_int, "test_cap": _opt_int, "image_size": int,
    "train_count": int, "test_count": int, "data_dir": _opt_str,
    "epochs": int, "batch_size": int, "learning_rate": float, "beta1": float, "beta2": float,
    "metric_every": int, "seed": int, "n_eval": _opt_int,
    "n_qubits": int, "latent": str, "gen_base_channels": int, "backbone_channels": _int_list,
    "blocks_per_stage": int, "discriminator_init": str, "pretrained": _opt_str,
    "pretrain_epochs": int, "pretrain_per_class": int,
    "output_dir": str, "grid_count": int, "grid_cols": int,
}


def parse_config(text: str) -> tuple[ExperimentConfig, dict[str, int]]:
    """Parse and validate; returns the config and the line number of each key."""
    values: dict[str, object] = {}
    lines: dict[str, int] = {}
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", line=no)
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in _PARSERS:
            raise ConfigError("unknown key", key, no)
        if key in values:
            raise ConfigError(f"duplicate key (first on line {lines[key]})", key, no)
        try:
            values[key] = _PARSERS[key](value)
        except ValueError:
            raise ConfigError(f"cannot parse {value!r}", key, no) from None
        lines[key] = no
    cfg = ExperimentConfig(**values)
    validate(cfg, lines)
    return cfg, lines


def load_config(path: str | Path) -> tuple[ExperimentConfig, dict[str, int]]:
    return parse_config(Path(path).read_text())


def validate(cfg: ExperimentConfig, lines: dict[str, int] | None = None) -> None:
    lines = lines or {}

    def fail(name: str, message: str):
        raise ConfigError(message, name, lines.get(name))

    if cfg.experiment not in EXPERIMENTS:
        fail("experiment", f"experiment id must be 1-5, got {cfg.experiment}")
    g, d = EXPERIMENTS[cfg.experiment]
    if cfg.generator is not None and cfg.generator != g:
        fail("generator", f"experiment {cfg.experiment} uses a {g} generator, not {cfg.generator}")
    if cfg.discriminator is not None and cfg.discriminator != d:
        fail("discriminator", f"experiment {cfg.experiment} uses a {d} discriminator, not {cfg.discriminator}")
    if cfg.dataset not in ("cifar10", "synthetic"):
        fail("dataset", "must be cifar10 or synthetic")
    limit = 9 if cfg.dataset == "cifar10" else len(SHAPES) - 1
    classes = cfg.target_classes()
    if not classes or any(not 0 <= c <= limit for c in classes) or len(set(classes)) != len(classes):
        fail("classes", f"need distinct labels in 0..{limit}")
    if cfg.dataset == "cifar10" and cfg.image_size != 32:
        fail("image_size", "CIFAR-10 images are 32x32")
    if cfg.dataset == "synthetic" and cfg.image_size not in (8, 16, 32):
        fail("image_size", "synthetic images must be 8, 16 or 32 pixels")
    for name in ("sample_cap", "test_cap", "n_eval"):
        v = getattr(cfg, name)
        if v is not None and v < 2:
            fail(name, "must be >= 2")
    if cfg.discriminator_init not in ("pretrained", "random"):
        fail("discriminator_init", "must be pretrained or random")
    for name in ("train_count", "test_count", "pretrain_per_class", "grid_count", "grid_cols"):
        if getattr(cfg, name) < 1:
            fail(name, "must be >= 1")
    if cfg.pretrain_epochs < 0:
        fail("pretrain_epochs", "must be >= 0")
    if not 1 <= cfg.n_qubits <= MAX_QUBITS:
        fail("n_qubits", f"must be in 1..{MAX_QUBITS}")
    if cfg.latent not in ("uniform", "normal"):
        fail("latent", "must be uniform or normal")
    try:
        cfg.train_config()
    except ValueError as exc:
        name = next((n for n in ("learning_rate", "beta1", "beta2", "batch_size", "epochs",
                                 "metric_every") if n in str(exc)), "epochs")
        fail(name, str(exc))
    try:
        mc = cfg.model_config()
        mc.generator_config()
        mc.backbone_config()
        mc.head_config()
    except ValueError as exc:
        fail("gen_base_channels" if "base_channels" in str(exc) else "backbone_channels", str(exc))
