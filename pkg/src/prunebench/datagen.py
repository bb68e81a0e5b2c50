"""Synthetic Gaussian-cluster data, device partitioning, and the PBDS file format."""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from prunebench.errors import DatasetFormatError, EmptyDatasetError, InfeasiblePartitionError

MAGIC = b"PBDS"
VERSION = 1
_HEADER = struct.Struct("<4sHIIHI")
MAX_PARTITION_RETRIES = 100


@dataclass(frozen=True)
class DatasetSpec:
    num_samples: int
    num_classes: int
    feature_dim: int
    class_separation: float = 3.0
    noise_std: float = 1.0
    label_noise: float = 0.0
    seed: int = 0
    per_sample_bytes: int | None = None

    def __post_init__(self):
        if self.num_samples < 1:
            raise ValueError(f"num_samples must be positive, got {self.num_samples}")
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.feature_dim < 1:
            raise ValueError(f"feature_dim must be positive, got {self.feature_dim}")
        if not self.class_separation > 0:
            raise ValueError("class_separation must be > 0")
        if not self.noise_std > 0:
            raise ValueError("noise_std must be > 0")
        if not 0 <= self.label_noise < 1:
            raise ValueError("label_noise must lie in [0, 1)")
        if self.per_sample_bytes is not None and self.per_sample_bytes < 1:
            raise ValueError("per_sample_bytes must be positive")


def default_per_sample_bytes(feature_dim: int) -> int:
    # f64 features + u16 label
    return feature_dim * 8 + 2


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    per_sample_bytes: int
    clean_labels: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        X = np.ascontiguousarray(self.features, dtype=np.float64)
        y = np.ascontiguousarray(self.labels, dtype=np.int64)
        if X.ndim != 2 or y.shape != (X.shape[0],):
            raise ValueError(f"features {X.shape} and labels {y.shape} disagree")
        if y.size and (y.min() < 0 or y.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        if not np.all(np.isfinite(X)):
            raise ValueError("features contain non-finite values")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)

    def __len__(self):
        return self.labels.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.num_classes == other.num_classes
            and self.per_sample_bytes == other.per_sample_bytes
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
        )

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        clean = None if self.clean_labels is None else self.clean_labels[idx]
        return Dataset(self.features[idx], self.labels[idx], self.num_classes, self.per_sample_bytes, clean)


@dataclass(frozen=True, eq=False)
class DeviceDataset:
    """One device's shard. Local index ``n`` is row ``n``; rows are never reordered."""

    device_id: int
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    per_sample_bytes: int
    source_index: np.ndarray | None = None
    clean_labels: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "features", np.ascontiguousarray(self.features, dtype=np.float64))
        object.__setattr__(self, "labels", np.ascontiguousarray(self.labels, dtype=np.int64))
        if self.source_index is None:
            object.__setattr__(self, "source_index", np.arange(len(self.labels), dtype=np.int64))

    @property
    def N(self) -> int:
        return self.labels.shape[0]

    def __len__(self):
        return self.N

    @property
    def samples(self):
        return list(zip(self.features, self.labels.tolist()))

    @classmethod
    def from_dataset(cls, data: Dataset, device_id: int = 0, idx=None) -> "DeviceDataset":
        if idx is None:
            idx = np.arange(len(data))
        idx = np.asarray(idx, dtype=np.int64)
        clean = None if data.clean_labels is None else data.clean_labels[idx]
        return cls(device_id, data.features[idx], data.labels[idx], data.num_classes,
                   data.per_sample_bytes, idx, clean)

    def take(self, local_idx) -> "DeviceDataset":
        local_idx = np.asarray(local_idx, dtype=np.int64)
        clean = None if self.clean_labels is None else self.clean_labels[local_idx]
        return DeviceDataset(self.device_id, self.features[local_idx], self.labels[local_idx],
                             self.num_classes, self.per_sample_bytes,
                             self.source_index[local_idx], clean)

    def class_histogram(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)


@dataclass(frozen=True)
class PartitionSpec:
    num_devices: int
    scheme: str = "iid"
    beta: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.num_devices < 1:
            raise ValueError("num_devices must be >= 1")
        if self.scheme not in ("iid", "dirichlet"):
            raise ValueError(f"unknown partition scheme {self.scheme!r}")
        if self.scheme == "dirichlet" and not (self.beta is not None and self.beta > 0):
            raise ValueError("dirichlet partitioning needs beta > 0")


def _class_means(C: int, d: int, sep: float, rng) -> np.ndarray:
    # Regular simplex vertices (scaled basis vectors, randomly rotated) are
    # pairwise exactly `sep` apart; with C > d fall back to random directions.
    r = sep / np.sqrt(2.0)
    if C <= d:
        Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
        means = r * Q[:, :C].T
    else:
        dirs = rng.standard_normal((C, d))
        means = r * dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    return means - means.mean(axis=0)


def generate_synthetic(spec: DatasetSpec) -> Dataset:
    """Gaussian clusters around simplex vertices, with a fraction of labels re-drawn."""
    rng = np.random.default_rng(spec.seed)
    n, C, d = spec.num_samples, spec.num_classes, spec.feature_dim
    means = _class_means(C, d, spec.class_separation, rng)
    clean = rng.integers(0, C, size=n)
    X = means[clean] + spec.noise_std * rng.standard_normal((n, d))
    labels = clean.copy()
    n_noisy = int(round(spec.label_noise * n))
    if n_noisy:
        which = rng.choice(n, size=n_noisy, replace=False)
        labels[which] = rng.integers(0, C, size=n_noisy)
    psb = spec.per_sample_bytes or default_per_sample_bytes(d)
    return Dataset(X, labels, C, psb, clean_labels=clean)


def train_test_split(data: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(data))
    n_test = int(round(test_fraction * len(data)))
    n_test = min(max(n_test, 1), len(data) - 1)
    return data.subset(np.sort(perm[n_test:])), data.subset(np.sort(perm[:n_test]))


def _dirichlet_assignment(labels, C, K, beta, rng):
    owner = np.empty(labels.shape[0], dtype=np.int64)
    for c in range(C):
        members = np.flatnonzero(labels == c)
        rng.shuffle(members)
        props = rng.dirichlet(np.full(K, beta))
        cuts = (np.cumsum(props) * members.shape[0]).astype(np.int64)[:-1]
        for k, part in enumerate(np.split(members, cuts)):
            owner[part] = k
    return owner


def partition(data: Dataset, spec: PartitionSpec) -> list[DeviceDataset]:
    """Split ``data`` across devices; shards keep ascending corpus order."""
    n, K = len(data), spec.num_devices
    if K > n:
        raise InfeasiblePartitionError(f"cannot split {n} samples across {K} devices")
    rng = np.random.default_rng(spec.seed)
    if spec.scheme == "iid":
        perm = rng.permutation(n)
        sizes = np.full(K, n // K)
        sizes[: n % K] += 1
        groups = np.split(perm, np.cumsum(sizes)[:-1])
    else:
        for _ in range(MAX_PARTITION_RETRIES):
            owner = _dirichlet_assignment(data.labels, data.num_classes, K, spec.beta, rng)
            counts = np.bincount(owner, minlength=K)
            if counts.min() > 0:
                break
        else:
            raise InfeasiblePartitionError(
                f"dirichlet(beta={spec.beta}) left a device empty after {MAX_PARTITION_RETRIES} draws"
            )
        groups = [np.flatnonzero(owner == k) for k in range(K)]
    return [DeviceDataset.from_dataset(data, k, np.sort(g)) for k, g in enumerate(groups)]


def storage_bytes(collection, count: int | None = None) -> int:
    """Bytes needed to hold ``count`` samples of ``collection`` (default: all of it)."""
    size = len(collection)
    if count is None:
        count = size
    if not 0 <= count <= size:
        raise ValueError(f"count {count} outside [0, {size}]")
    return int(count) * int(collection.per_sample_bytes)


def _record_dtype(d: int) -> np.dtype:
    return np.dtype([("x", "<f8", (d,)), ("y", "<u2")])


def save_dataset(data: Dataset, path) -> None:
    n, d = data.features.shape
    if data.num_classes > 0xFFFF:
        raise ValueError("num_classes does not fit the u16 label field")
    rec = np.empty(n, dtype=_record_dtype(d))
    rec["x"] = data.features
    rec["y"] = data.labels
    header = _HEADER.pack(MAGIC, VERSION, n, d, data.num_classes, data.per_sample_bytes)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(rec.tobytes())


def load_dataset(path) -> Dataset:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise DatasetFormatError(
            f"truncated header: expected {_HEADER.size} bytes, got {len(raw)}", offset=len(raw)
        )
    magic, version, n, d, C, psb = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise DatasetFormatError(f"bad magic {magic!r}, expected {MAGIC!r}", offset=0)
    if version != VERSION:
        raise DatasetFormatError(f"unsupported version {version}", offset=4)
    if d < 1 or C < 2:
        raise DatasetFormatError(f"invalid header: feature_dim={d}, num_classes={C}", offset=10)
    dt = _record_dtype(d)
    expected = n * dt.itemsize
    actual = len(raw) - _HEADER.size
    if actual != expected:
        raise DatasetFormatError(
            f"payload length mismatch: expected {expected} bytes, got {actual}",
            offset=_HEADER.size + min(actual, expected),
        )
    rec = np.frombuffer(raw, dtype=dt, count=n, offset=_HEADER.size)
    labels = rec["y"].astype(np.int64)
    if n and labels.max() >= C:
        bad = int(np.argmax(labels >= C))
        raise DatasetFormatError(f"label {labels[bad]} >= num_classes {C}",
                                 offset=_HEADER.size + bad * dt.itemsize + 8 * d)
    return Dataset(rec["x"].copy(), labels, C, psb)


def load_csv(path, num_classes: int | None = None, per_sample_bytes: int | None = None) -> Dataset:
    """Read ``f0,...,f{d-1},label`` CSV (with header row)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DatasetFormatError("empty CSV file", offset=0)
        d = len(header) - 1
        if d < 1 or header != [f"f{i}" for i in range(d)] + ["label"]:
            raise DatasetFormatError(f"unexpected CSV header {header}", offset=0)
        rows = [r for r in reader if r]
    if not rows:
        raise EmptyDatasetError(f"{path} has no data rows")
    arr = np.array(rows, dtype=np.float64)
    X, y = arr[:, :d], arr[:, d].astype(np.int64)
    C = num_classes if num_classes is not None else max(int(y.max()) + 1, 2)
    return Dataset(X, y, C, per_sample_bytes or default_per_sample_bytes(d))
