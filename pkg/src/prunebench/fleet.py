"""Per-device score -> select -> train -> cost pipeline and fleet aggregation."""
from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from prunebench.costmodel import CostReport, CostWeights, DeviceProfile, aggregate_cost, device_cost
from prunebench.datagen import (
    Dataset,
    DatasetSpec,
    DeviceDataset,
    PartitionSpec,
    generate_synthetic,
    load_dataset,
    partition,
    train_test_split,
)
from prunebench.errors import ComparisonError, DevicePipelineError, PruneBenchError
from prunebench.model import ModelLayout, flops_per_sample, init_params
from prunebench.pruner import (
    ImportanceScores,
    PruningConfig,
    SelectionMask,
    WarmupConfig,
    apply_mask,
    normalized_scores,
    select_random,
    select_top_m,
    warmup_score,
)
from prunebench.trainer import TrainConfig, TrainingTrace, train

log = logging.getLogger(__name__)

METHODS = ("importance", "random", "full")
_METHOD_CODE = {"full": 0, "importance": 1, "random": 2}

# sub-seed stream tags
_SPLIT, _PARTITION, _INIT, _WARMUP, _RANDOM_MASK, _TRAIN = range(6)


def sub_seed(*keys: int) -> int:
    """Independent 32-bit seed for a tuple of non-negative integer keys."""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSpec | str
    partition: PartitionSpec
    model: ModelLayout
    warmup: WarmupConfig
    train: TrainConfig
    pruning: PruningConfig
    profile: DeviceProfile | tuple[DeviceProfile, ...]
    weights: CostWeights = field(default_factory=CostWeights)
    seeds: tuple[int, ...] = (0,)
    test_fraction: float = 0.2
    methods: tuple[str, ...] = ("importance", "random", "full")

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("seeds must be non-empty")
        if not 0 < self.test_fraction < 1:
            raise ValueError("test_fraction must lie in (0, 1)")
        if isinstance(self.profile, tuple) and len(self.profile) != self.partition.num_devices:
            raise ValueError("per-device profile list must have one entry per device")
        for m in self.methods:
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r}")

    def profile_for(self, device_id: int) -> DeviceProfile:
        if isinstance(self.profile, tuple):
            return self.profile[device_id]
        return self.profile


@dataclass(eq=False)
class DeviceResult:
    device_id: int
    method: str
    rho: float
    N: int
    M: int
    train_loss: float
    train_acc: float
    test_loss: float
    test_acc: float
    cost: CostReport
    trace: TrainingTrace | None = None
    mask: SelectionMask | None = None
    scores: ImportanceScores | None = None
    warmup_wall_s: float = 0.0
    train_wall_s: float = 0.0


@dataclass(eq=False)
class FleetResult:
    method: str
    rho: float
    seed: int
    devices: list[DeviceResult]
    weights: np.ndarray  # p_k = N_k / sum N_j
    train_acc: float
    train_loss: float
    test_acc: float
    test_loss: float
    latency_s: float
    energy_J: float
    storage_bytes: int
    score_flops: int
    select_flops: int
    train_flops: int
    aggregate_cost: float

    @property
    def total_flops(self) -> int:
        return self.score_flops + self.select_flops + self.train_flops


def load_corpus(cfg: ExperimentConfig) -> Dataset:
    if isinstance(cfg.dataset, DatasetSpec):
        return generate_synthetic(cfg.dataset)
    return load_dataset(cfg.dataset)


@dataclass(frozen=True, eq=False)
class SeedContext:
    """Shards and the shared test set for one master seed."""

    seed: int
    shards: list[DeviceDataset]
    test_set: DeviceDataset


def prepare_seed(cfg: ExperimentConfig, corpus: Dataset, seed: int) -> SeedContext:
    train_part, test_part = train_test_split(corpus, cfg.test_fraction, sub_seed(seed, _SPLIT))
    pspec = replace(cfg.partition, seed=sub_seed(seed, _PARTITION, cfg.partition.seed))
    shards = partition(train_part, pspec)
    return SeedContext(seed, shards, DeviceDataset.from_dataset(test_part, -1))


def run_device(shard: DeviceDataset, test_set: DeviceDataset, cfg: ExperimentConfig,
               method: str, rho: float | None = None, seed: int = 0) -> DeviceResult:
    """One device's pipeline. ``full`` ignores ``rho`` and trains on the whole shard."""
    k = shard.device_id
    rho = cfg.pruning.rho if rho is None else rho
    layout = cfg.model
    init = init_params(layout, sub_seed(seed, _INIT, k))
    c = flops_per_sample(layout, "forward_backward")
    b = cfg.train.batch_size
    profile = cfg.profile_for(k)
    scores = None
    mask = None
    warm_iters = 0
    scored = 0
    warm_wall = 0.0
    if method == "importance":
        wcfg = replace(cfg.warmup, seed=sub_seed(seed, _WARMUP, k))
        scores = warmup_score(shard, init, wcfg)
        mask = select_top_m(normalized_scores(scores), rho)
        start = scores.warm_params
        warm_iters, scored, warm_wall = scores.iterations, shard.N, scores.wall_clock_s
    elif method == "random":
        mask = select_random(shard.N, rho, sub_seed(seed, _RANDOM_MASK, k, cfg.pruning.seed))
        start = init
    elif method == "full":
        rho = 1.0
        start = init
    else:
        raise ValueError(f"unknown method {method!r}")
    subset = apply_mask(shard, mask) if mask is not None else shard
    tcfg = replace(cfg.train, seed=sub_seed(seed, _TRAIN, k, _METHOD_CODE[method]))
    trace = train(start, subset, tcfg, eval_set=test_set, record_train_on=shard)
    final = trace.rows[-1]
    cost = device_cost(steps=trace.total_steps, c=c, b=b, profile=profile, retained=subset.N,
                       warmup_iters=warm_iters, scored_samples=scored)
    return DeviceResult(k, method, float(rho), shard.N, subset.N, final.train_loss, final.train_acc,
                        final.test_loss, final.test_acc, cost, trace, mask, scores,
                        warm_wall, trace.wall_clock_s)


def aggregate(devices: list[DeviceResult], weights: CostWeights, seed: int) -> FleetResult:
    devices = sorted(devices, key=lambda r: r.device_id)
    sizes = np.array([r.N for r in devices], dtype=np.float64)
    p = sizes / sizes.sum()

    def wavg(attr):
        return float(sum(pk * getattr(r, attr) for pk, r in zip(p, devices)))

    costs = [r.cost for r in devices]
    return FleetResult(
        method=devices[0].method,
        rho=devices[0].rho,
        seed=seed,
        devices=devices,
        weights=p,
        train_acc=wavg("train_acc"),
        train_loss=wavg("train_loss"),
        test_acc=wavg("test_acc"),
        test_loss=wavg("test_loss"),
        latency_s=float(sum(c.latency_s for c in costs)),
        energy_J=float(sum(c.energy_J for c in costs)),
        storage_bytes=int(sum(c.storage_bytes for c in costs)),
        score_flops=int(sum(c.score_flops for c in costs)),
        select_flops=int(sum(c.select_flops for c in costs)),
        train_flops=int(sum(c.train_flops for c in costs)),
        aggregate_cost=aggregate_cost(weights, costs),
    )


def _run_tasks(tasks, workers: int):
    """Run ``(key, fn)`` tasks; returns ``{key: result}``. Order of execution is irrelevant."""
    def call(item):
        key, fn = item
        return key, fn()

    if workers <= 1:
        return dict(call(t) for t in tasks)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return dict(pool.map(call, tasks))


def _device_task(ctx: SeedContext, shard, cfg, method, rho):
    def fn():
        try:
            return run_device(shard, ctx.test_set, cfg, method, rho, ctx.seed)
        except PruneBenchError as exc:
            raise DevicePipelineError(shard.device_id, method, exc) from exc
    return fn


def run_grid(cfg: ExperimentConfig, rhos, methods=None, workers: int = 1,
             contexts: dict[int, SeedContext] | None = None) -> list[FleetResult]:
    """Fleet results for every (rho, method, seed), sorted by that key.

    ``full`` is rho-independent: it runs once per seed and is reported at rho=1.
    """
    methods = tuple(methods or cfg.methods)
    rhos = sorted({float(r) for r in rhos})
    if not rhos:
        raise ValueError("rhos must be non-empty")
    for r in rhos:
        if not 0 < r <= 1:
            raise ValueError(f"rho must lie in (0, 1], got {r}")
    if contexts is None:
        corpus = load_corpus(cfg)
        contexts = {s: prepare_seed(cfg, corpus, s) for s in cfg.seeds}
    tasks = []
    for seed in cfg.seeds:
        ctx = contexts[seed]
        for method in methods:
            for rho in ([1.0] if method == "full" else rhos):
                for shard in ctx.shards:
                    key = (rho, method, seed, shard.device_id)
                    tasks.append((key, _device_task(ctx, shard, cfg, method, rho)))
    log.info("running %d device pipelines with %d worker(s)", len(tasks), workers)
    done = _run_tasks(tasks, workers)
    groups: dict[tuple, list[DeviceResult]] = {}
    for (rho, method, seed, _), res in done.items():
        groups.setdefault((rho, method, seed), []).append(res)
    out = [aggregate(devs, cfg.weights, key[2]) for key, devs in groups.items()]
    out.sort(key=lambda f: (f.rho, f.method, f.seed))
    return out


def run_fleet(cfg: ExperimentConfig, workers: int = 1) -> list[FleetResult]:
    """All configured methods and seeds at the configured rho."""
    return run_grid(cfg, [cfg.pruning.rho], workers=workers)


def sweep_rho(cfg: ExperimentConfig, rhos, methods=None, workers: int = 1) -> list[FleetResult]:
    return run_grid(cfg, rhos, methods, workers)


def accuracy_gap(importance: FleetResult, random: FleetResult) -> float:
    if importance.method != "importance" or random.method != "random":
        raise ComparisonError(f"expected importance vs random, got {importance.method} vs {random.method}")
    if importance.rho != random.rho or importance.seed != random.seed:
        raise ComparisonError(
            f"mismatched runs: rho {importance.rho} vs {random.rho}, seed {importance.seed} vs {random.seed}"
        )
    if [d.N for d in importance.devices] != [d.N for d in random.devices]:
        raise ComparisonError("runs were made on different partitions")
    return importance.test_acc - random.test_acc


def gap_table(results: list[FleetResult]) -> list[tuple[float, int, float]]:
    by_key = {(f.rho, f.method, f.seed): f for f in results}
    rows = []
    for (rho, method, seed), f in sorted(by_key.items()):
        if method == "importance" and (rho, "random", seed) in by_key:
            rows.append((rho, seed, accuracy_gap(f, by_key[(rho, "random", seed)])))
    return rows


SWEEP_COLUMNS = (
    "rho", "method", "seed", "device",
    "fleet_train_acc", "fleet_test_acc", "fleet_test_loss",
    "latency_s", "energy_J", "storage_bytes", "score_flops", "train_flops", "aggregate_cost",
)


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def sweep_rows(results: list[FleetResult], weights: CostWeights, include_devices: bool = True):
    for f in results:
        yield (f.rho, f.method, f.seed, "fleet", f.train_acc, f.test_acc, f.test_loss, f.latency_s,
               f.energy_J, f.storage_bytes, f.score_flops, f.train_flops, f.aggregate_cost)
        if include_devices:
            for d in f.devices:
                c = d.cost
                yield (f.rho, f.method, f.seed, d.device_id, d.train_acc, d.test_acc, d.test_loss,
                       c.latency_s, c.energy_J, c.storage_bytes, c.score_flops, c.train_flops,
                       aggregate_cost(weights, [c]))


def write_sweep_csv(path, results: list[FleetResult], weights: CostWeights, include_devices: bool = True) -> int:
    n = 0
    with open(path, "w", newline="") as fh:
        fh.write(",".join(SWEEP_COLUMNS) + "\n")
        for row in sweep_rows(results, weights, include_devices):
            fh.write(",".join(_fmt(v) for v in row) + "\n")
            n += 1
    return n


def write_gap_csv(path, results: list[FleetResult]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("rho,seed,accuracy_gap\n")
        for rho, seed, gap in gap_table(results):
            fh.write(f"{rho!r},{seed},{gap!r}\n")


def write_traces(out_dir, results: list[FleetResult]) -> list[Path]:
    out_dir = Path(out_dir)
    paths = []
    for f in results:
        for d in f.devices:
            if d.trace is None:
                continue
            suffix = f"_rho{f.rho:g}" if f.method != "full" else ""
            p = out_dir / f"trace_{d.device_id}_{f.method}_{f.seed}{suffix}.csv"
            d.trace.to_csv(p)
            paths.append(p)
    return paths


def read_sweep_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != SWEEP_COLUMNS:
            raise ValueError(f"unexpected sweep.csv columns {reader.fieldnames}")
        return list(reader)
