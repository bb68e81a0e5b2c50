"""Warm-up loss scoring and top-M / random subset selection."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from prunebench import kernels
from prunebench.datagen import DeviceDataset
from prunebench.errors import BatchTooLargeError, EmptySelectionError, MaskError, UnobservedSampleError
from prunebench.model import ModelParams
from prunebench.trainer import Schedule, epoch_batches, lr_table


@dataclass(frozen=True)
class WarmupConfig:
    """Warm-up length is ``iterations`` if given, else ``epochs`` full passes."""

    batch_size: int = 32
    epochs: int = 1
    iterations: int | None = None
    schedule: Schedule = field(default_factory=lambda: Schedule("constant", 0.05))
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.iterations is None and self.epochs < 1:
            raise ValueError("warm-up needs at least one epoch")
        if self.iterations is not None and self.iterations < 1:
            raise ValueError("T0 must be >= 1")

    def iterations_for(self, N: int) -> int:
        if self.iterations is not None:
            return self.iterations
        return self.epochs * -(-N // self.batch_size)


@dataclass(frozen=True)
class PruningConfig:
    rho: float
    method: str = "importance"
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.rho <= 1:
            raise ValueError(f"rho must lie in (0, 1], got {self.rho}")
        if self.method not in ("importance", "random"):
            raise ValueError(f"unknown pruning method {self.method!r}")


@dataclass(eq=False)
class ImportanceScores:
    loss_sum: np.ndarray
    observe_count: np.ndarray
    warm_params: ModelParams
    iterations: int = 0
    wall_clock_s: float = 0.0


@dataclass(frozen=True, eq=False)
class SelectionMask:
    retained: np.ndarray

    @property
    def M(self) -> int:
        return int(np.count_nonzero(self.retained))

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.retained)

    def __len__(self):
        return self.retained.shape[0]


def warmup_score(shard: DeviceDataset, init: ModelParams, cfg: WarmupConfig) -> ImportanceScores:
    """Run T0 SGD steps on the full shard, summing each batch member's pre-update loss."""
    N, b = shard.N, cfg.batch_size
    if b > N:
        raise BatchTooLargeError(f"device {shard.device_id}: batch size {b} exceeds shard size {N}")
    T0 = cfg.iterations_for(N)
    if T0 < 1:
        raise ValueError("T0 must be >= 1")
    rng = np.random.default_rng(cfg.seed)
    order, starts = epoch_batches(N, b, T0, rng)
    lrs = lr_table(cfg.schedule.with_horizon(T0), T0)
    theta = init.weights.copy()
    loss_sum = np.zeros(N)
    counts = np.zeros(N, dtype=np.int64)
    t0 = time.perf_counter()
    kernels.sgd_steps(theta, *init.layout.dims, shard.features, shard.labels,
                      order, starts, lrs, loss_sum, counts)
    elapsed = time.perf_counter() - t0
    return ImportanceScores(loss_sum, counts, ModelParams(init.layout, theta), T0, elapsed)


def normalized_scores(scores: ImportanceScores) -> np.ndarray:
    counts = np.asarray(scores.observe_count)
    missing = np.flatnonzero(counts == 0)
    if missing.size:
        raise UnobservedSampleError(int(missing[0]))
    return np.asarray(scores.loss_sum, dtype=np.float64) / counts


def retained_count(N: int, rho: float) -> int:
    if not 0 < rho <= 1:
        raise ValueError(f"rho must lie in (0, 1], got {rho}")
    M = math.floor(rho * N)
    if M < 1:
        raise EmptySelectionError(f"rho={rho} retains no samples out of {N}")
    return M


def select_top_m(scores, rho: float) -> SelectionMask:
    """Keep the floor(rho*N) highest scores; equal scores favour the lower index."""
    scores = np.ascontiguousarray(scores, dtype=np.float64)
    if scores.ndim != 1 or scores.size == 0:
        raise ValueError("scores must be a non-empty vector")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    M = retained_count(scores.shape[0], rho)
    return SelectionMask(kernels.topm_mask(scores, M))


def select_random(N: int, rho: float, seed: int) -> SelectionMask:
    M = retained_count(N, rho)
    rng = np.random.default_rng(seed)
    mask = np.zeros(N, dtype=np.bool_)
    mask[rng.choice(N, size=M, replace=False)] = True
    return SelectionMask(mask)


def apply_mask(shard: DeviceDataset, mask: SelectionMask) -> DeviceDataset:
    if len(mask) != shard.N:
        raise MaskError(f"mask length {len(mask)} != shard size {shard.N}")
    return shard.take(mask.indices)


def write_scores_csv(path, scores: ImportanceScores | None, mask: SelectionMask) -> None:
    """Audit export: ``index,score,count,retained``."""
    N = len(mask)
    if scores is not None:
        counts = scores.observe_count
        norm = np.where(counts > 0, scores.loss_sum / np.maximum(counts, 1), np.nan)
    else:
        counts = np.zeros(N, dtype=np.int64)
        norm = np.full(N, np.nan)
    with open(path, "w", newline="") as fh:
        fh.write("index,score,count,retained\n")
        for n in range(N):
            fh.write(f"{n},{float(norm[n])!r},{int(counts[n])},{int(mask.retained[n])}\n")
