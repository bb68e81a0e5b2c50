import numpy as np
import pytest

from prunebench.datagen import (
    Dataset,
    DatasetSpec,
    DeviceDataset,
    PartitionSpec,
    default_per_sample_bytes,
    generate_synthetic,
    load_csv,
    load_dataset,
    partition,
    save_dataset,
    storage_bytes,
    train_test_split,
)
from prunebench.errors import DatasetFormatError, InfeasiblePartitionError
from prunebench.model import ModelLayout, init_params
from prunebench.trainer import Schedule, TrainConfig, evaluate, train


def test_spec_validation():
    with pytest.raises(ValueError):
        DatasetSpec(0, 2, 2)
    with pytest.raises(ValueError):
        DatasetSpec(10, 2, 2, label_noise=1.0)
    with pytest.raises(ValueError):
        DatasetSpec(10, 2, 2, class_separation=0.0)
    with pytest.raises(ValueError):
        DatasetSpec(10, 2, 2, noise_std=-1.0)


def test_generate_deterministic():
    spec = DatasetSpec(500, 4, 6, 3.0, 1.0, 0.1, seed=9)
    a, b = generate_synthetic(spec), generate_synthetic(spec)
    assert a == b
    np.testing.assert_array_equal(a.features, b.features)
    assert a != generate_synthetic(DatasetSpec(500, 4, 6, 3.0, 1.0, 0.1, seed=10))


def test_class_means_pairwise_separation():
    # tiny noise: empirical class centroids sit on simplex vertices `sep` apart
    data = generate_synthetic(DatasetSpec(4000, 5, 8, 6.0, 1e-3, 0.0, seed=2))
    cents = np.stack([data.features[data.labels == c].mean(axis=0) for c in range(5)])
    dists = np.linalg.norm(cents[:, None] - cents[None], axis=-1)[np.triu_indices(5, 1)]
    np.testing.assert_allclose(dists, 6.0, rtol=1e-3)


def test_label_noise_fraction():
    spec = DatasetSpec(10000, 10, 5, 3.0, 1.0, 0.2, seed=4)
    noisy = generate_synthetic(spec)
    clean = generate_synthetic(DatasetSpec(10000, 10, 5, 3.0, 1.0, 0.0, seed=4))
    # clean generation with the same seed yields identical features and true labels
    np.testing.assert_array_equal(noisy.features, clean.features)
    np.testing.assert_array_equal(noisy.clean_labels, clean.labels)
    frac = np.mean(noisy.labels != clean.labels)
    assert 0.17 <= frac <= 0.23


def test_wide_separation_learnable():
    data = generate_synthetic(DatasetSpec(100, 2, 2, 10.0, 0.1, 0.0, seed=0))
    shard = DeviceDataset.from_dataset(data)
    lay = ModelLayout(2, 8, 2)
    # 100 samples, b=10 -> 10 steps/epoch, 20 epochs = 200 SGD steps
    cfg = TrainConfig(20, 10, Schedule("constant", 0.1), seed=0)
    trace = train(init_params(lay, 0), shard, cfg)
    assert trace.total_steps == 200
    assert evaluate(trace.final_params, shard)[1] >= 0.99


def test_default_per_sample_bytes():
    data = generate_synthetic(DatasetSpec(50, 2, 20))
    assert data.per_sample_bytes == 162 == default_per_sample_bytes(20)


def test_iid_partition_equal_sizes():
    data = generate_synthetic(DatasetSpec(100, 3, 2))
    shards = partition(data, PartitionSpec(4, "iid", seed=1))
    assert [s.N for s in shards] == [25, 25, 25, 25]
    shards = partition(data, PartitionSpec(7, "iid", seed=1))
    assert [s.N for s in shards] == [15, 15] + [14] * 5


@pytest.mark.parametrize("spec", [PartitionSpec(6, "iid", seed=3), PartitionSpec(6, "dirichlet", 0.3, seed=3)])
def test_partition_exhaustive_disjoint(spec):
    data = generate_synthetic(DatasetSpec(900, 5, 3, seed=1))
    shards = partition(data, spec)
    idx = np.concatenate([s.source_index for s in shards])
    assert sorted(idx.tolist()) == list(range(900))
    for s in shards:
        assert s.N > 0
        assert np.all(np.diff(s.source_index) > 0)
        np.testing.assert_array_equal(s.features, data.features[s.source_index])
        np.testing.assert_array_equal(s.labels, data.labels[s.source_index])
    again = partition(data, spec)
    for a, b in zip(shards, again):
        np.testing.assert_array_equal(a.source_index, b.source_index)


def test_dirichlet_large_beta_matches_global():
    data = generate_synthetic(DatasetSpec(20000, 4, 3, seed=5))
    glob = np.bincount(data.labels) / len(data)
    for s in partition(data, PartitionSpec(5, "dirichlet", 1e6, seed=2)):
        local = s.class_histogram() / s.N
        np.testing.assert_allclose(local, glob, rtol=0.05)


def test_iid_histogram_converges():
    data = generate_synthetic(DatasetSpec(20000, 4, 3, seed=6))
    glob = np.bincount(data.labels) / len(data)
    for s in partition(data, PartitionSpec(5, "iid", seed=0)):
        assert s.N >= 4000
        np.testing.assert_allclose(s.class_histogram() / s.N, glob, rtol=0.05)


def test_dirichlet_small_beta_skew():
    data = generate_synthetic(DatasetSpec(15000, 10, 5, seed=7))
    hits = 0
    for seed in range(10):
        shards = partition(data, PartitionSpec(15, "dirichlet", 0.1, seed=seed))
        top = max(s.class_histogram().max() / s.N for s in shards)
        hits += top > 0.6
    assert hits > 5


def test_partition_infeasible():
    data = generate_synthetic(DatasetSpec(3, 2, 2))
    with pytest.raises(InfeasiblePartitionError):
        partition(data, PartitionSpec(4, "iid"))


def test_dirichlet_gives_up_after_retries():
    # 2 samples over 2 devices with extreme skew cannot avoid an empty device reliably
    data = Dataset(np.zeros((2, 1)), np.array([0, 0]), 2, 10)
    with pytest.raises(InfeasiblePartitionError):
        partition(data, PartitionSpec(2, "dirichlet", 1e-6, seed=0))


def test_storage_bytes():
    data = Dataset(np.zeros((500, 1)), np.zeros(500, dtype=int), 2, 3072)
    assert storage_bytes(data, 500) == 1_536_000
    assert storage_bytes(data, 0) == 0
    shard = DeviceDataset.from_dataset(generate_synthetic(DatasetSpec(2000, 3, 20)))
    assert storage_bytes(shard, shard.N) == 324_000
    with pytest.raises(ValueError):
        storage_bytes(data, 501)


def test_train_test_split_disjoint():
    data = generate_synthetic(DatasetSpec(1000, 3, 2))
    tr, te = train_test_split(data, 0.2, seed=1)
    assert len(tr) == 800 and len(te) == 200


def test_save_load_roundtrip(tmp_path):
    data = generate_synthetic(DatasetSpec(257, 7, 3, 2.0, 0.5, 0.3, seed=1, per_sample_bytes=3072))
    p = tmp_path / "d.pbds"
    save_dataset(data, p)
    back = load_dataset(p)
    assert back == data
    assert back.per_sample_bytes == 3072
    raw = p.read_bytes()
    assert raw[:4] == b"PBDS"
    assert len(raw) == 20 + 257 * (3 * 8 + 2)


def test_load_bad_magic(tmp_path):
    p = tmp_path / "d.pbds"
    save_dataset(generate_synthetic(DatasetSpec(5, 2, 2)), p)
    raw = bytearray(p.read_bytes())
    raw[:4] = b"XXXX"
    p.write_bytes(bytes(raw))
    with pytest.raises(DatasetFormatError, match="magic") as info:
        load_dataset(p)
    assert info.value.offset == 0


def test_load_bad_version(tmp_path):
    p = tmp_path / "d.pbds"
    save_dataset(generate_synthetic(DatasetSpec(5, 2, 2)), p)
    raw = bytearray(p.read_bytes())
    raw[4] = 9
    p.write_bytes(bytes(raw))
    with pytest.raises(DatasetFormatError, match="version"):
        load_dataset(p)


def test_load_truncated(tmp_path):
    p = tmp_path / "d.pbds"
    save_dataset(generate_synthetic(DatasetSpec(10, 2, 2)), p)
    p.write_bytes(p.read_bytes()[:-7])
    with pytest.raises(DatasetFormatError, match=r"expected 180 bytes, got 173") as info:
        load_dataset(p)
    assert info.value.offset == 20 + 173
    p.write_bytes(b"PBDS\x01")
    with pytest.raises(DatasetFormatError, match="truncated header"):
        load_dataset(p)


def test_csv_import(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("f0,f1,label\n0.5,1.5,0\n-1,2,2\n3,4,1\n")
    data = load_csv(p)
    assert data.num_classes == 3
    np.testing.assert_array_equal(data.labels, [0, 2, 1])
    np.testing.assert_array_equal(data.features[1], [-1.0, 2.0])
    assert data.per_sample_bytes == 18
    p.write_text("a,b\n1,0\n")
    with pytest.raises(DatasetFormatError):
        load_csv(p)
