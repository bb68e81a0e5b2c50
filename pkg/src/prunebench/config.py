"""Strict JSON experiment configuration.

Unknown keys, wrong types and out-of-range values are rejected with a
JSON-pointer path to the offending field. Every omitted key gets a default,
and the fully resolved document is what the run manifest records and hashes.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from prunebench import datagen
from prunebench.costmodel import CostWeights, DeviceProfile
from prunebench.datagen import DatasetSpec, PartitionSpec
from prunebench.errors import ConfigError, DatasetFormatError
from prunebench.fleet import ExperimentConfig
from prunebench.model import ModelLayout
from prunebench.pruner import PruningConfig, WarmupConfig
from prunebench.trainer import Adam, Schedule, TrainConfig

BUNDLED_CONFIG = Path(__file__).parent / "configs" / "default.json"


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", strict=True)


class DatasetSection(_Strict):
    num_samples: int = Field(30000, ge=1)
    num_classes: int = Field(10, ge=2, le=0xFFFF)
    feature_dim: int = Field(20, ge=1)
    class_separation: float = Field(3.0, gt=0)
    noise_std: float = Field(1.0, gt=0)
    label_noise: float = Field(0.1, ge=0, lt=1)
    seed: int = Field(0, ge=0)
    per_sample_bytes: Optional[int] = Field(None, ge=1)


class DatasetRef(DatasetSection):
    path: Optional[str] = None

    @model_validator(mode="after")
    def _path_excludes_generator(self):
        if self.path is not None:
            extra = sorted(self.model_fields_set - {"path"})
            if extra:
                raise ValueError(f"'path' cannot be combined with generator keys {extra}")
        return self


class PartitionSection(_Strict):
    num_devices: int = Field(15, ge=1)
    scheme: Literal["iid", "dirichlet"] = "dirichlet"
    beta: Optional[float] = Field(0.5, gt=0)
    seed: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _beta_needed(self):
        if self.scheme == "dirichlet" and self.beta is None:
            raise ValueError("dirichlet partitioning requires beta")
        return self


class ModelSection(_Strict):
    hidden_dim: int = Field(32, ge=0)


class ScheduleSection(_Strict):
    kind: Literal["constant", "cosine"] = "cosine"
    eta0: float = Field(0.05, ge=0)
    eta_min: float = Field(0.0, ge=0)

    @model_validator(mode="after")
    def _ordered(self):
        if self.eta_min > self.eta0:
            raise ValueError("eta_min must not exceed eta0")
        return self


class OptimizerSection(_Strict):
    name: Literal["sgd", "adam"] = "sgd"
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    eps: float = Field(1e-8, gt=0)


class WarmupSection(_Strict):
    epochs: int = Field(1, ge=1)
    iterations: Optional[int] = Field(None, ge=1)
    schedule: ScheduleSection = ScheduleSection(kind="constant")


class TrainSection(_Strict):
    epochs: int = Field(30, ge=1)
    batch_size: int = Field(32, ge=1)
    schedule: ScheduleSection = ScheduleSection()
    optimizer: OptimizerSection = OptimizerSection()
    eval_every: int = Field(0, ge=0)


class PruningSection(_Strict):
    rho: float = Field(0.5, gt=0, le=1)
    methods: list[Literal["importance", "random", "full"]] = Field(
        default_factory=lambda: ["importance", "random", "full"], min_length=1
    )
    seed: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _unique(self):
        if len(set(self.methods)) != len(self.methods):
            raise ValueError("methods must not repeat")
        return self


class ProfileSection(_Strict):
    throughput: float = Field(1e9, gt=0)
    power: float = Field(2.0, gt=0)
    per_sample_bytes: Optional[int] = Field(None, ge=1)


class WeightsSection(_Strict):
    lambda_tau: float = Field(1.0, ge=0)
    lambda_E: float = Field(1.0, ge=0)
    lambda_S: float = Field(0.0, ge=0)


class ConfigDocument(_Strict):
    dataset: DatasetRef
    partition: PartitionSection = PartitionSection()
    model: ModelSection = ModelSection()
    warmup: WarmupSection = WarmupSection()
    train: TrainSection = TrainSection()
    pruning: PruningSection = PruningSection()
    profile: ProfileSection = ProfileSection()
    device_profiles: Optional[list[ProfileSection]] = None
    weights: WeightsSection = WeightsSection()
    seeds: list[int] = Field(default_factory=lambda: [0, 1, 2, 3, 4], min_length=1)
    test_fraction: float = Field(0.2, gt=0, lt=1)

    @model_validator(mode="after")
    def _cross_checks(self):
        if self.device_profiles is not None and len(self.device_profiles) != self.partition.num_devices:
            raise ValueError("device_profiles needs exactly one entry per device")
        return self


def _pointer(loc) -> str:
    return "/" + "/".join(str(p) for p in loc) if loc else "/"


def _raise_from_validation(exc: ValidationError):
    err = exc.errors()[0]
    loc = tuple(p for p in err["loc"] if not str(p).startswith("function-"))
    kind = err["type"]
    if kind == "extra_forbidden":
        msg = "unknown key (strict mode)"
    elif kind == "missing":
        msg = "missing required key"
    else:
        msg = err["msg"]
    raise ConfigError(_pointer(loc), msg) from exc


def validate_document(raw) -> ConfigDocument:
    try:
        return ConfigDocument.model_validate(raw)
    except ValidationError as exc:
        _raise_from_validation(exc)


def validate_dataset_section(raw) -> DatasetSection:
    try:
        return DatasetSection.model_validate(raw)
    except ValidationError as exc:
        _raise_from_validation(exc)


def read_json(path):
    text = Path(path).read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("/", f"invalid JSON: {exc}") from exc


def dataset_spec(sec: DatasetSection) -> DatasetSpec:
    return DatasetSpec(sec.num_samples, sec.num_classes, sec.feature_dim, sec.class_separation,
                       sec.noise_std, sec.label_noise, sec.seed, sec.per_sample_bytes)


def _schedule(sec: ScheduleSection) -> Schedule:
    return Schedule(sec.kind, sec.eta0, sec.eta_min)


def build_experiment(doc: ConfigDocument, base_dir=".") -> ExperimentConfig:
    """Turn a validated document into domain objects (reads dataset headers if needed)."""
    ds = doc.dataset
    if ds.path is not None:
        path = Path(ds.path)
        if not path.is_absolute():
            path = Path(base_dir) / path
        try:
            data = datagen.load_dataset(path)
        except DatasetFormatError as exc:
            raise ConfigError("/dataset/path", str(exc)) from exc
        dataset = str(path)
        d, C, psb = data.feature_dim, data.num_classes, data.per_sample_bytes
    else:
        dataset = dataset_spec(ds)
        d, C = ds.feature_dim, ds.num_classes
        psb = ds.per_sample_bytes or datagen.default_per_sample_bytes(d)

    def profile(p: ProfileSection) -> DeviceProfile:
        return DeviceProfile(p.throughput, p.power, p.per_sample_bytes or psb)

    profiles = tuple(profile(p) for p in doc.device_profiles) if doc.device_profiles else profile(doc.profile)
    opt = doc.train.optimizer
    optimizer = "sgd" if opt.name == "sgd" else Adam(opt.beta1, opt.beta2, opt.eps)
    return ExperimentConfig(
        dataset=dataset,
        partition=PartitionSpec(doc.partition.num_devices, doc.partition.scheme,
                                doc.partition.beta if doc.partition.scheme == "dirichlet" else None,
                                doc.partition.seed),
        model=ModelLayout(d, doc.model.hidden_dim, C),
        warmup=WarmupConfig(doc.train.batch_size, doc.warmup.epochs, doc.warmup.iterations,
                            _schedule(doc.warmup.schedule)),
        train=TrainConfig(doc.train.epochs, doc.train.batch_size, _schedule(doc.train.schedule),
                          optimizer, 0, doc.train.eval_every),
        pruning=PruningConfig(doc.pruning.rho, "importance", doc.pruning.seed),
        profile=profiles,
        weights=CostWeights(doc.weights.lambda_tau, doc.weights.lambda_E, doc.weights.lambda_S),
        seeds=tuple(doc.seeds),
        test_fraction=doc.test_fraction,
        methods=tuple(doc.pruning.methods),
    )


def resolved_dict(doc: ConfigDocument) -> dict:
    out = doc.model_dump(mode="json")
    if doc.dataset.path is not None:
        out["dataset"] = {"path": doc.dataset.path}
    else:
        out["dataset"].pop("path", None)
    return out


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(doc: ConfigDocument) -> str:
    return hashlib.sha256(canonical_json(resolved_dict(doc)).encode()).hexdigest()


def parse_config(path) -> tuple[ExperimentConfig, ConfigDocument]:
    doc = validate_document(read_json(path))
    return build_experiment(doc, Path(path).parent), doc
