"""Command-line experiment runner.

Exit codes: 0 success, 1 unexpected error, 2 invalid config or missing paths,
3 training aborted (non-finite loss), 4 output directory locked by another run.
"""
from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as C
from .data import SHAPES, Dataset, DatasetSpec, cap_samples, filter_class, load_cifar10, normalize, resolve, \
    synthetic_shapes_dataset
from .export import export_curves, export_samples
from .metrics import Extractor
from .transfer import WeightStore, load_weights, pretrain_classifier, save_weights
from .trainer import TrainingAborted, build_models, train

log = logging.getLogger("hqgan")

DATA_DIR_ENV = "HQGAN_DATA_DIR"
LOCK_NAME = ".hqgan.lock"
PRETRAIN_SEED = 0

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_ABORT, EXIT_LOCKED = 0, 1, 2, 3, 4


class RunLocked(RuntimeError):
    pass


@contextlib.contextmanager
def output_lock(directory: Path):
    directory.mkdir(parents=True, exist_ok=True)
    lock = directory / LOCK_NAME
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise RunLocked(f"{directory} is in use by another run (remove {lock} if stale)") from None
    with os.fdopen(fd, "w") as fh:
        fh.write(str(os.getpid()))
    try:
        yield
    finally:
        lock.unlink(missing_ok=True)


def apply_overrides(cfg: C.ExperimentConfig, args: argparse.Namespace) -> C.ExperimentConfig:
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.out is not None:
        updates["output_dir"] = args.out
    if args.pretrained is not None:
        updates["pretrained"] = args.pretrained
    data_dir = args.data_dir or cfg.data_dir or os.environ.get(DATA_DIR_ENV)
    if data_dir is not None:
        updates["data_dir"] = data_dir
    cfg = replace(cfg, **updates)
    C.validate(cfg)
    return cfg


def check_paths(cfg: C.ExperimentConfig) -> None:
    if cfg.dataset == "cifar10":
        if cfg.data_dir is None:
            raise C.ConfigError(f"cifar10 needs --data-dir or ${DATA_DIR_ENV}", "data_dir")
        if not Path(cfg.data_dir).is_dir():
            raise C.ConfigError(f"directory {cfg.data_dir} does not exist", "data_dir")
    if cfg.pretrained is not None and not Path(cfg.pretrained).is_file():
        raise C.ConfigError(f"weight file {cfg.pretrained} does not exist", "pretrained")


def plan(cfg: C.ExperimentConfig) -> str:
    mc = cfg.model_config()
    out = Path(cfg.output_dir)
    lines = [
        f"experiment {cfg.experiment}: generator={mc.generator_kind} discriminator={mc.discriminator_kind}",
        f"dataset {cfg.dataset} classes={cfg.target_classes()} image_size={cfg.image_size}",
        f"training epochs={cfg.epochs} batch={cfg.batch_size} lr={cfg.learning_rate} "
        f"betas=({cfg.beta1}, {cfg.beta2}) seed={cfg.seed} metric_every={cfg.metric_every}",
        f"discriminator init: {cfg.pretrained or cfg.discriminator_init}",
    ]
    for group in cfg.run_groups():
        lines.append(f"run classes={group} -> {run_dir(cfg, group)}")
    lines.append(f"outputs under {out}")
    return "\n".join(lines)


def run_dir(cfg: C.ExperimentConfig, group: list[int]) -> Path:
    out = Path(cfg.output_dir)
    return out / f"class_{group[0]}" if cfg.experiment == 5 else out


class DataSource:
    """Loads each split once and hands out the target / pretraining subsets."""

    def __init__(self, cfg: C.ExperimentConfig):
        self.cfg = cfg
        self._cifar = load_cifar10(cfg.data_dir) if cfg.dataset == "cifar10" else None

    def target(self, classes: list[int]) -> tuple[Dataset, np.ndarray]:
        cfg = self.cfg
        if self._cifar is not None:
            train_ds = cap_samples(filter_class(self._cifar[0], classes), cfg.sample_cap)
            test_ds = cap_samples(filter_class(self._cifar[1], classes), cfg.test_cap)
        else:
            common = dict(source="synthetic", classes=classes, size=cfg.image_size)
            train_ds = resolve(DatasetSpec(split="train", sample_cap=cfg.sample_cap,
                                           synthetic_count=cfg.train_count, **common))
            test_ds = resolve(DatasetSpec(split="test", sample_cap=cfg.test_cap,
                                          synthetic_count=cfg.test_count, **common))
        return train_ds, normalize(test_ds.images)

    def pretraining(self) -> tuple[Dataset, int]:
        """Classes disjoint from the GAN targets, relabelled 0..k-1."""
        cfg = self.cfg
        targets = set(cfg.target_classes())
        n_all = 10 if self._cifar is not None else len(SHAPES)
        others = [c for c in range(n_all) if c not in targets]
        if len(others) < 2:
            others = list(range(n_all))
        if self._cifar is not None:
            train = self._cifar[0]
            idx = np.concatenate([np.flatnonzero(train.labels == c)[:cfg.pretrain_per_class] for c in others])
            idx.sort()
            remap = {c: i for i, c in enumerate(others)}
            labels = np.array([remap[int(l)] for l in train.labels[idx]])
            return Dataset(train.images[idx], labels), len(others)
        ds = synthetic_shapes_dataset(cfg.pretrain_per_class, cfg.image_size, [SHAPES[c] for c in others],
                                      seed=[PRETRAIN_SEED, 2])
        return ds, len(others)


def _write_abort(directory: Path, exc: TrainingAborted) -> None:
    snap = {k: v for k, v in exc.snapshot.items()}
    (directory / "abort.json").write_text(json.dumps({"error": str(exc), **snap}, indent=2, default=float))


def execute(cfg: C.ExperimentConfig) -> int:
    out = Path(cfg.output_dir)
    source = DataSource(cfg)
    (out / "config.resolved").write_text(cfg.to_text())

    pre_ds, n_classes = source.pretraining()
    classifier, report = pretrain_classifier(pre_ds, n_classes, cfg.pretrain_epochs,
                                             cfg.model_config().backbone_config(), seed=PRETRAIN_SEED)
    log.info("pretraining accuracy %.4f over %d images", report.accuracy, len(pre_ds))
    extractor = Extractor(classifier)
    save_weights(WeightStore.from_module(classifier), out / "extractor.hqw")

    if cfg.pretrained is not None:
        init = load_weights(cfg.pretrained)
    elif cfg.discriminator_init == "pretrained":
        init = WeightStore.from_module(classifier.backbone)
        save_weights(init, out / "backbone_pretrained.hqw")
    else:
        init = None

    for group in cfg.run_groups():
        directory = run_dir(cfg, group)
        directory.mkdir(parents=True, exist_ok=True)
        train_ds, test_images = source.target(group)
        G, D = build_models(cfg.model_config(), cfg.seed, init)

        def snapshot(epoch, G, directory=directory):
            export_samples(G, cfg.grid_count, cfg.grid_cols, directory / f"samples_epoch_{epoch}.png",
                           seed=[cfg.seed, 4])

        try:
            runlog = train(cfg.train_config(), cfg.model_config(), train_ds, test_images, extractor,
                           on_evaluate=snapshot, models=(G, D))
        except TrainingAborted as exc:
            _write_abort(directory, exc)
            log.error("%s", exc)
            return EXIT_ABORT
        export_curves(runlog, directory / "runlog.csv")
        save_weights(WeightStore.from_module(G), directory / "generator.hqw")
        save_weights(WeightStore.from_module(D), directory / "discriminator.hqw")
        if runlog.metrics:
            last = runlog.metrics[-1]
            log.info("classes %s final fid %.4f kid %.4f is %.4f", group, last.fid, last.kid, last.is_mean)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hqgan", description="Hybrid quantum-classical GAN experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an experiment from a key = value config file")
    run.add_argument("config", type=Path)
    run.add_argument("--dry-run", action="store_true", help="validate and print the plan only")
    run.add_argument("--seed", type=int)
    run.add_argument("--data-dir", help=f"CIFAR-10 binary directory (default ${DATA_DIR_ENV})")
    run.add_argument("--pretrained", help="WeightStore file for the discriminator backbone")
    run.add_argument("--out", help="output directory (overrides output_dir)")
    run.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg, _ = C.load_config(args.config)
        cfg = apply_overrides(cfg, args)
        check_paths(cfg)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except C.ConfigError as exc:
        print(f"invalid config {args.config}: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if args.dry_run:
        print(plan(cfg))
        return EXIT_OK
    try:
        with output_lock(Path(cfg.output_dir)):
            return execute(cfg)
    except RunLocked as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_LOCKED
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
