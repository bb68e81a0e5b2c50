import math

import numpy as np
import pytest

from prunebench.datagen import DatasetSpec, DeviceDataset, generate_synthetic
from prunebench.errors import EmptyDatasetError, ScheduleOverrunError
from prunebench.model import ModelLayout, ModelParams, init_params, sample_loss
from prunebench.trainer import (
    Adam,
    Schedule,
    TrainConfig,
    epoch_batches,
    evaluate,
    lr_at,
    planned_steps,
    train,
)
from conftest import small_shard


def test_planned_steps():
    assert planned_steps(2, 50, 16) == 8
    assert planned_steps(2, 500, 10) == 100 == 0.5 * planned_steps(2, 1000, 10)
    assert planned_steps(3, 5, 64) == 3


def test_lr_at_cosine_and_constant():
    s = Schedule("cosine", 0.1, 0.0, 100)
    assert lr_at(s, 0) == 0.1
    assert lr_at(s, 100) == pytest.approx(0.0, abs=1e-18)
    assert lr_at(s, 50) == pytest.approx(0.05, rel=1e-15)
    s2 = Schedule("cosine", 0.3, 0.1, 10)
    assert lr_at(s2, 10) == pytest.approx(0.1)
    assert lr_at(s2, 5) == pytest.approx(0.2)
    assert lr_at(Schedule("constant", 0.07, 0, 5), 3) == 0.07
    with pytest.raises(ScheduleOverrunError):
        lr_at(s, 101)
    with pytest.raises(ValueError):
        Schedule("cosine", 0.1, 0.2, 10)


def test_epoch_batches_exhaustive(rng):
    for _ in range(30):
        N = int(rng.integers(1, 100))
        b = int(rng.integers(1, 40))
        E = int(rng.integers(1, 4))
        steps = planned_steps(E, N, b)
        order, starts = epoch_batches(N, b, steps, rng)
        assert starts.shape == (steps + 1,)
        assert starts[-1] == E * N
        sizes = np.diff(starts)
        assert sizes.max() <= b and sizes.min() >= 1
        per = -(-N // b)
        for e in range(E):
            members = order[starts[e * per]: starts[(e + 1) * per]]
            assert sorted(members.tolist()) == list(range(N))


def test_train_zero_lr_returns_init():
    shard = small_shard(n=64)
    init = init_params(ModelLayout(4, 5, 3), 0)
    tr = train(init, shard, TrainConfig(3, 16, Schedule("cosine", 0.0, 0.0)))
    assert tr.final_params == init


def test_train_step_count_matches_plan(rng):
    for _ in range(20):
        n = int(rng.integers(5, 120))
        b = int(rng.integers(1, 50))
        E = int(rng.integers(1, 4))
        shard = small_shard(n=n, seed=int(rng.integers(1000)))
        tr = train(init_params(ModelLayout(4, 2, 3), 0), shard, TrainConfig(E, b, Schedule("cosine", 0.01)))
        assert tr.total_steps == planned_steps(E, n, b)


def test_train_wide_separation():
    data = generate_synthetic(DatasetSpec(100, 2, 2, 10.0, 0.1, 0.0, seed=0))
    shard = DeviceDataset.from_dataset(data)
    tr = train(init_params(ModelLayout(2, 8, 2), 1), shard, TrainConfig(20, 10, Schedule("cosine", 0.1), seed=3))
    assert tr.total_steps == 200
    assert tr.rows[-1].train_acc >= 0.99


def test_loss_descends_across_seeds():
    data = generate_synthetic(DatasetSpec(100, 2, 2, 10.0, 0.1, 0.0, seed=0))
    shard = DeviceDataset.from_dataset(data)
    lay = ModelLayout(2, 8, 2)
    for seed in range(10):
        init = init_params(lay, seed)
        before = evaluate(init, shard)[0]
        tr = train(init, shard, TrainConfig(5, 10, Schedule("cosine", 0.1), seed=seed))
        assert tr.rows[-1].train_loss < before


def test_train_deterministic_and_trace():
    shard = small_shard(n=90, label_noise=0.1)
    ev = small_shard(n=40, seed=9)
    init = init_params(ModelLayout(4, 6, 3), 2)
    cfg = TrainConfig(4, 16, Schedule("cosine", 0.05), seed=7, eval_every=5)
    a, b = train(init, shard, cfg, ev), train(init, shard, cfg, ev)
    assert a.final_params == b.final_params
    assert a.rows == b.rows
    steps = [r.step for r in a.rows]
    assert steps == sorted(set(steps)) and steps[0] == 0 and steps[-1] == a.total_steps
    assert steps == [0, 5, 10, 15, 20, 24]


def test_train_only_final_row_when_eval_disabled():
    tr = train(init_params(ModelLayout(4, 2, 3), 0), small_shard(n=30), TrainConfig(1, 8))
    assert [r.step for r in tr.rows] == [tr.total_steps]


def test_train_adam_runs_and_learns():
    data = generate_synthetic(DatasetSpec(100, 2, 2, 10.0, 0.1, 0.0, seed=0))
    shard = DeviceDataset.from_dataset(data)
    cfg = TrainConfig(10, 10, Schedule("cosine", 0.01), optimizer=Adam(), seed=0)
    tr = train(init_params(ModelLayout(2, 8, 2), 0), shard, cfg)
    assert tr.rows[-1].train_acc >= 0.99


def test_train_empty_shard():
    empty = DeviceDataset(0, np.zeros((0, 4)), np.zeros(0, dtype=int), 3, 10)
    with pytest.raises(EmptyDatasetError):
        train(init_params(ModelLayout(4, 2, 3), 0), empty, TrainConfig(1, 4))


def test_evaluate_uniform_predictor_tie_rule():
    labels = np.repeat(np.arange(10), 7)
    data = DeviceDataset(0, np.random.default_rng(0).normal(size=(70, 3)), labels, 10, 10)
    lay = ModelLayout(3, 4, 10)
    loss, acc = evaluate(ModelParams(lay, np.zeros(lay.num_params)), data)
    assert loss == pytest.approx(math.log(10), rel=1e-15)
    assert acc == pytest.approx(0.1)


def test_evaluate_perfect_and_single():
    lay = ModelLayout(1, 0, 2)
    p = ModelParams(lay, np.array([-5.0, 5.0, 0.0, 0.0]))
    X = np.array([[-1.0], [-2.0], [1.0], [3.0]])
    data = DeviceDataset(0, X, np.array([0, 0, 1, 1]), 2, 10)
    assert evaluate(p, data)[1] == 1.0
    one = DeviceDataset(0, X[:1], np.array([1]), 2, 10)
    assert evaluate(p, one)[0] == pytest.approx(sample_loss(p, X[0], 1), rel=1e-15)
    with pytest.raises(EmptyDatasetError):
        evaluate(p, DeviceDataset(0, np.zeros((0, 1)), np.zeros(0, dtype=int), 2, 10))


def test_trace_csv(tmp_path):
    tr = train(init_params(ModelLayout(4, 2, 3), 0), small_shard(n=30), TrainConfig(2, 8, eval_every=3),
               small_shard(n=10, seed=4))
    tr.to_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "step,train_loss,train_acc,test_loss,test_acc"
    assert len(lines) == 1 + len(tr.rows)
