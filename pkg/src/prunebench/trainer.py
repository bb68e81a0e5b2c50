"""Mini-batch training on a device shard, learning-rate schedules, evaluation."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from prunebench import kernels
from prunebench.datagen import DeviceDataset
from prunebench.errors import EmptyDatasetError, ScheduleOverrunError
from prunebench.model import ModelParams, sample_losses


@dataclass(frozen=True)
class Schedule:
    kind: str = "cosine"
    eta0: float = 0.05
    eta_min: float = 0.0
    horizon: int = 1

    def __post_init__(self):
        if self.kind not in ("constant", "cosine"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.eta0 < 0 or self.eta_min < 0:
            raise ValueError("learning rates must be non-negative")
        if self.eta_min > self.eta0:
            raise ValueError("eta_min must not exceed eta0")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")

    def with_horizon(self, horizon: int) -> "Schedule":
        return Schedule(self.kind, self.eta0, self.eta_min, max(int(horizon), 1))


def lr_at(s: Schedule, t: int) -> float:
    if t < 0 or t > s.horizon:
        raise ScheduleOverrunError(f"step {t} outside schedule horizon [0, {s.horizon}]")
    if s.kind == "constant":
        return s.eta0
    return s.eta_min + 0.5 * (s.eta0 - s.eta_min) * (1.0 + math.cos(math.pi * t / s.horizon))


def lr_table(s: Schedule, steps: int) -> np.ndarray:
    """Learning rates for updates ``0 .. steps-1``."""
    return np.array([lr_at(s, t) for t in range(steps)], dtype=np.float64)


@dataclass(frozen=True)
class Adam:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    schedule: Schedule = field(default_factory=Schedule)
    optimizer: str | Adam = "sgd"
    seed: int = 0
    eval_every: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.eval_every < 0:
            raise ValueError("eval_every must be >= 0")
        if not (self.optimizer == "sgd" or isinstance(self.optimizer, Adam)):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass(frozen=True)
class TraceRow:
    step: int
    train_loss: float
    train_acc: float
    test_loss: float
    test_acc: float


@dataclass(eq=False)
class TrainingTrace:
    rows: list[TraceRow]
    total_steps: int
    final_params: ModelParams
    wall_clock_s: float = 0.0

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("step,train_loss,train_acc,test_loss,test_acc\n")
            for r in self.rows:
                fh.write(f"{r.step},{r.train_loss!r},{r.train_acc!r},{r.test_loss!r},{r.test_acc!r}\n")


def planned_steps(epochs: int, M: int, b: int) -> int:
    return epochs * -(-M // b)


def epoch_batches(N: int, b: int, steps: int, rng: np.random.Generator):
    """Concatenated per-epoch permutations plus batch boundaries for ``steps`` updates.

    Each epoch is cut into ``ceil(N/b)`` batches with a short final batch.
    """
    per_epoch = -(-N // b)
    n_epochs = -(-steps // per_epoch)
    order = np.concatenate([rng.permutation(N) for _ in range(n_epochs)]) if n_epochs else np.empty(0, np.int64)
    local = np.minimum(np.arange(per_epoch + 1) * b, N)
    starts = (np.arange(n_epochs)[:, None] * N + local[None, :-1]).ravel()
    starts = np.append(starts, n_epochs * N)[: steps + 1]
    return order.astype(np.int64), starts.astype(np.int64)


def evaluate(params: ModelParams, data: DeviceDataset) -> tuple[float, float]:
    """Mean cross-entropy and argmax accuracy (ties go to the lowest class index)."""
    if data.N == 0:
        raise EmptyDatasetError("cannot evaluate on an empty dataset")
    losses = sample_losses(params, data.features, data.labels)
    Z = kernels.logits(params.weights, *params.layout.dims, data.features)
    acc = float(np.mean(np.argmax(Z, axis=1) == data.labels))
    return float(np.mean(losses)), acc


def _record(params, shard, eval_set, step):
    tl, ta = evaluate(params, shard)
    if eval_set is not None and eval_set.N:
        vl, va = evaluate(params, eval_set)
    else:
        vl, va = float("nan"), float("nan")
    return TraceRow(step, tl, ta, vl, va)


def _adam_steps(theta, dims, X, y, order, starts, lrs, opt, state):
    m, v, t0 = state
    grad = np.empty_like(theta)
    for s in range(lrs.shape[0]):
        idx = order[starts[s] : starts[s + 1]]
        kernels.loss_grad(theta, *dims, X, y, idx, grad)
        t = t0 + s + 1
        m *= opt.beta1
        m += (1.0 - opt.beta1) * grad
        v *= opt.beta2
        v += (1.0 - opt.beta2) * grad * grad
        mhat = m / (1.0 - opt.beta1**t)
        vhat = v / (1.0 - opt.beta2**t)
        theta -= lrs[s] * mhat / (np.sqrt(vhat) + opt.eps)
    return m, v, t0 + lrs.shape[0]


def train(init: ModelParams, shard: DeviceDataset, cfg: TrainConfig,
          eval_set: DeviceDataset | None = None, record_train_on: DeviceDataset | None = None) -> TrainingTrace:
    """Run ``planned_steps(E, N, b)`` updates over epoch-shuffled mini-batches.

    The cosine horizon is the number of planned steps. ``record_train_on``
    overrides the set used for the trace's train metrics (defaults to ``shard``).
    """
    if shard.N == 0:
        raise EmptyDatasetError(f"device {shard.device_id}: training shard is empty")
    N, b = shard.N, cfg.batch_size
    steps = planned_steps(cfg.epochs, N, b)
    schedule = cfg.schedule.with_horizon(steps)
    lrs = lr_table(schedule, steps)
    rng = np.random.default_rng(cfg.seed)
    order, starts = epoch_batches(N, b, steps, rng)

    theta = init.weights.copy()
    dims = init.layout.dims
    X, y = shard.features, shard.labels
    scratch_sum = np.zeros(N)
    scratch_cnt = np.zeros(N, dtype=np.int64)
    metrics_on = record_train_on if record_train_on is not None else shard

    if cfg.eval_every > 0:
        marks = list(range(0, steps, cfg.eval_every)) + [steps]
    else:
        marks = [0, steps]
    rows = []
    adam_state = (np.zeros_like(theta), np.zeros_like(theta), 0)
    elapsed = 0.0
    for a, z in zip(marks[:-1], marks[1:]):
        if cfg.eval_every > 0:
            rows.append(_record(ModelParams(init.layout, theta), metrics_on, eval_set, a))
        seg_starts = starts[a : z + 1]
        t_start = time.perf_counter()
        if cfg.optimizer == "sgd":
            kernels.sgd_steps(theta, *dims, X, y, order, seg_starts, lrs[a:z], scratch_sum, scratch_cnt)
        else:
            adam_state = _adam_steps(theta, dims, X, y, order, seg_starts, lrs[a:z], cfg.optimizer, adam_state)
        elapsed += time.perf_counter() - t_start
    final = ModelParams(init.layout, theta)
    rows.append(_record(final, metrics_on, eval_set, steps))
    return TrainingTrace(rows, steps, final, elapsed)
