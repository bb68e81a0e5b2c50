"""Analytic FLOPs / latency / energy / storage accounting per device."""
from __future__ import annotations

from dataclasses import asdict, dataclass

from prunebench.errors import UndefinedRatioError

SELECT_FLOPS_PER_SAMPLE = 5


@dataclass(frozen=True)
class DeviceProfile:
    throughput: float = 1e9  # FLOPs/s
    power: float = 2.0  # W
    per_sample_bytes: int = 162

    def __post_init__(self):
        if not (self.throughput > 0 and self.power > 0 and self.per_sample_bytes > 0):
            raise ValueError("device profile entries must be strictly positive")


@dataclass(frozen=True)
class CostWeights:
    lambda_tau: float = 1.0
    lambda_E: float = 1.0
    lambda_S: float = 0.0

    def __post_init__(self):
        if min(self.lambda_tau, self.lambda_E, self.lambda_S) < 0:
            raise ValueError("cost weights must be non-negative")


@dataclass(frozen=True)
class CostReport:
    """Training latency and energy cover the training phase only; scoring is itemised."""

    train_flops: int = 0
    score_flops: int = 0
    select_flops: int = 0
    latency_s: float = 0.0
    energy_J: float = 0.0
    storage_bytes: int = 0
    steps: int = 0

    @property
    def total_flops(self) -> int:
        return self.score_flops + self.select_flops + self.train_flops

    def as_dict(self) -> dict:
        d = asdict(self)
        d["total_flops"] = self.total_flops
        return d


def iter_flops(c: int, b: int) -> int:
    return int(c) * int(b)


def training_cost(T: int, c: int, b: int, profile: DeviceProfile) -> CostReport:
    flops = int(T) * iter_flops(c, b)
    latency = flops / profile.throughput
    return CostReport(train_flops=flops, latency_s=latency, energy_J=profile.power * latency, steps=int(T))


def scoring_cost(T0: int, c: int, b: int, profile: DeviceProfile) -> CostReport:
    return CostReport(score_flops=int(T0) * iter_flops(c, b))


def selection_flops(N: int) -> int:
    return SELECT_FLOPS_PER_SAMPLE * int(N)


def device_cost(*, steps: int, c: int, b: int, profile: DeviceProfile, retained: int,
                warmup_iters: int = 0, scored_samples: int = 0) -> CostReport:
    """Full per-device report: scoring (if any), selection, training, storage of the kept set."""
    tr = training_cost(steps, c, b, profile)
    return CostReport(
        train_flops=tr.train_flops,
        score_flops=scoring_cost(warmup_iters, c, b, profile).score_flops,
        select_flops=selection_flops(scored_samples),
        latency_s=tr.latency_s,
        energy_J=tr.energy_J,
        storage_bytes=int(retained) * profile.per_sample_bytes,
        steps=tr.steps,
    )


def aggregate_cost(weights: CostWeights, per_device) -> float:
    per_device = list(per_device)
    if not per_device:
        raise ValueError("aggregate_cost needs at least one device report")
    tau = sum(r.latency_s for r in per_device)
    energy = sum(r.energy_J for r in per_device)
    storage = sum(r.storage_bytes for r in per_device)
    return weights.lambda_tau * tau + weights.lambda_E * energy + weights.lambda_S * storage


def cost_reduction_ratio(pruned: CostReport, full: CostReport) -> float:
    if full.train_flops <= 0:
        raise UndefinedRatioError("full-data training cost is zero")
    return pruned.train_flops / full.train_flops
