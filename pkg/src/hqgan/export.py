"""RunLog CSV files and lossless PNG sample grids."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
from PIL import Image

from .data import denormalize
from .tensor import no_grad
from .trainer import MetricRecord, RunLog, StepRecord

STEP_COLUMNS = ["step", "epoch", "d_loss", "g_loss"]
METRIC_COLUMNS = ["epoch", "fid", "kid", "is_mean", "is_std", "extractor_id", "n_eval"]
TIMING_COLUMNS = ["epoch", "seconds"]


def companion_paths(path: str | Path) -> tuple[Path, Path, Path]:
    """runlog.csv -> (runlog.csv, runlog_metrics.csv, runlog_epochs.csv)."""
    path = Path(path)
    return (path, path.with_name(f"{path.stem}_metrics.csv"),
            path.with_name(f"{path.stem}_epochs.csv"))


def _write(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def export_curves(runlog: RunLog, path: str | Path) -> None:
    # repr() keeps every float bit-exact through a text round trip
    loss_path, metric_path, timing_path = companion_paths(path)
    _write(loss_path, STEP_COLUMNS,
           ([s.step, s.epoch, repr(s.d_loss), repr(s.g_loss)] for s in runlog.steps))
    _write(metric_path, METRIC_COLUMNS,
           ([m.epoch, repr(m.fid), repr(m.kid), repr(m.is_mean), repr(m.is_std), m.extractor_id, m.n_eval]
            for m in runlog.metrics))
    _write(timing_path, TIMING_COLUMNS, ([i, repr(t)] for i, t in enumerate(runlog.epoch_seconds)))


def _read(path: Path, header: list[str]) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != header:
            raise ValueError(f"{path.name}: expected columns {header}, found {reader.fieldnames}")
        return list(reader)


def read_curves(path: str | Path) -> RunLog:
    loss_path, metric_path, timing_path = companion_paths(path)
    steps = [StepRecord(int(r["step"]), int(r["epoch"]), float(r["d_loss"]), float(r["g_loss"]))
             for r in _read(loss_path, STEP_COLUMNS)]
    metrics = [MetricRecord(int(r["epoch"]), float(r["fid"]), float(r["kid"]), float(r["is_mean"]),
                            float(r["is_std"]), r["extractor_id"], int(r["n_eval"]))
               for r in _read(metric_path, METRIC_COLUMNS)]
    seconds = [float(r["seconds"]) for r in _read(timing_path, TIMING_COLUMNS)] if timing_path.exists() else []
    return RunLog(steps, metrics, seconds)


def tile(images: np.ndarray, grid_cols: int) -> np.ndarray:
    """(N, 3, h, w) in [-1, 1] -> (rows*h, cols*w, 3) bytes, unused cells black."""
    n, c, h, w = images.shape
    if grid_cols < 1:
        raise ValueError("grid_cols must be >= 1")
    rows = -(-n // grid_cols)
    grid = np.zeros((rows * h, grid_cols * w, c), dtype=np.uint8)
    tiles = denormalize(images).transpose(0, 2, 3, 1)
    for i, t in enumerate(tiles):
        r, q = divmod(i, grid_cols)
        grid[r * h:(r + 1) * h, q * w:(q + 1) * w] = t
    return grid


def save_grid(images: np.ndarray, grid_cols: int, path: str | Path) -> None:
    if len(images) < 1:
        raise ValueError("need at least one image")
    Image.fromarray(tile(images, grid_cols)).save(Path(path), format="PNG")


def read_grid(path: str | Path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB"))


def export_samples(G, count: int, grid_cols: int, path: str | Path, seed=0) -> None:
    if count < 1:
        raise ValueError("count must be >= 1")
    with no_grad():
        images = G.sample(count, np.random.default_rng(seed))
    save_grid(images, grid_cols, path)
