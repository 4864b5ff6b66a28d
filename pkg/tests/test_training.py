import numpy as np
import pytest
import torch

from latdeduce import lattice as lat
from latdeduce import sudoku
from latdeduce.instances import generate_sudoku_instances
from latdeduce.lattice import LatticeShape, LatticeState
from latdeduce.losses import LossConfig
from latdeduce.model import DeductionTransformer, ModelConfig
from latdeduce.training import (
    TrainConfig,
    branch_pin,
    eliminate,
    learning_rate_at,
    step_train,
    train,
)

SPEC = sudoku.SudokuSpec(2, 2)
TINY_MODEL = ModelConfig(
    shape=SPEC.lattice_shape, embed_dim=16, layers=1, heads=2,
    internal_iterations=2, dropout_rate=0.0, seed=0,
)


def test_lr_schedule_shape():
    cfg = TrainConfig(batch_size=4, total_steps=100, warmup_fraction=0.1, lr=1e-2)
    assert learning_rate_at(0, cfg) == 0.0
    assert learning_rate_at(10, cfg) == pytest.approx(1e-2)
    assert learning_rate_at(5, cfg) == pytest.approx(5e-3)
    # cosine decay: monotone after warmup, ends near zero
    values = [learning_rate_at(s, cfg) for s in range(10, 101)]
    assert all(a >= b for a, b in zip(values, values[1:]))
    assert values[-1] == pytest.approx(0.0, abs=1e-12)
    assert learning_rate_at(55, cfg) == pytest.approx(5e-3)  # halfway point


def test_lr_schedule_no_warmup():
    cfg = TrainConfig(batch_size=4, total_steps=10, warmup_fraction=0.0, lr=2e-3)
    assert learning_rate_at(0, cfg) == pytest.approx(2e-3)


def test_eliminate_thresholds_on_sigmoid():
    shape = LatticeShape(2, 2, 3)
    st = LatticeState(shape, [0b111, 0b011, 0b100, 0b111])
    logits = np.zeros((4, 3))
    logits[0] = [-5.0, 0.0, 5.0]  # sigmoid ~ 0.007, 0.5, 0.99
    out = eliminate(st, logits, theta_elim=0.1)
    assert out.alive(0) == (1, 2)
    assert out.alive(1) == (0, 1)  # untouched at logit 0
    # already-dead candidates cannot come back
    logits2 = np.full((4, 3), 5.0)
    assert eliminate(st, logits2, 0.1) == st


def test_eliminate_can_empty_a_cell():
    shape = LatticeShape(2, 2, 3)
    st = LatticeState(shape, [0b011, 0b111, 0b111, 0b111])
    logits = np.zeros((4, 3))
    logits[0] = [-9.0, -9.0, -9.0]
    assert eliminate(st, logits, 0.1).is_bottom()


def test_branch_pin_picks_alive_candidate():
    shape = LatticeShape(2, 2, 3)
    st = LatticeState(shape, [0b001, 0b110, 0b001, 0b001])
    rng = np.random.default_rng(0)
    out = branch_pin(st, np.zeros((4, 3)), tau=1.5, rng=rng)
    assert out.alive_counts()[1] == 1
    assert out.alive(1)[0] in (1, 2)
    assert lat.leq(out, st)


def test_branch_pin_respects_temperature():
    shape = LatticeShape(1, 1, 2)
    st = LatticeState(shape, [0b11])
    logits = np.array([[8.0, -8.0]])
    rng = np.random.default_rng(1)
    picks = [branch_pin(st, logits, 1.5, rng).alive(0)[0] for _ in range(100)]
    assert picks.count(0) >= 99  # softmax all but pins the favored value


def test_branch_pin_requires_open_cell():
    shape = LatticeShape(1, 1, 2)
    st = LatticeState(shape, [0b01])
    with pytest.raises(ValueError):
        branch_pin(st, np.zeros((1, 2)), 1.5, np.random.default_rng(0))


def test_step_train_invariants():
    rng = np.random.default_rng(0)
    instances = generate_sudoku_instances(SPEC, 4, rng)
    model = DeductionTransformer(TINY_MODEL)
    from latdeduce.training import PoolEntry

    entries = [
        PoolEntry(instance=i, state=i.initial, y_prev=None, inserted_at=0,
                  rng=np.random.default_rng(k))
        for k, i in enumerate(instances)
    ]
    results, loss, detail = step_train(model, entries, LossConfig())
    assert torch.isfinite(loss)
    assert set(detail) == {"bce", "cls", "ce", "total"}
    for e, r in zip(entries, results):
        # each step refines: never adds candidates
        assert lat.leq(r.state, e.state) or r.conflict
        assert lat.leq(r.target, e.state)
        assert not (r.solved and r.conflict)
        if not (r.solved or r.conflict):
            assert r.branched


def test_train_loop_runs_and_records():
    rng = np.random.default_rng(1)
    instances = generate_sudoku_instances(SPEC, 6, rng)
    model = DeductionTransformer(TINY_MODEL)
    cfg = TrainConfig(batch_size=4, total_steps=5, pool_multiplier=2.0,
                      max_pool_age=3, seed=0)
    metrics = train(model, instances, cfg, LossConfig())
    assert len(metrics) == 5
    assert [m["step"] for m in metrics] == list(range(5))
    assert metrics[0]["lr"] == learning_rate_at(0, cfg)
    for m in metrics:
        assert np.isfinite(m["loss"])
        assert m["pool_depth_max"] <= cfg.max_pool_age + 1


def test_train_metrics_file(tmp_path):
    rng = np.random.default_rng(2)
    instances = generate_sudoku_instances(SPEC, 3, rng)
    model = DeductionTransformer(TINY_MODEL)
    cfg = TrainConfig(batch_size=2, total_steps=3, seed=0)
    path = tmp_path / "metrics.jsonl"
    train(model, instances, cfg, LossConfig(), metrics_path=path)
    lines = path.read_text().strip().split("\n")
    assert len(lines) == 3


def test_train_is_deterministic():
    rng = np.random.default_rng(3)
    instances = generate_sudoku_instances(SPEC, 4, rng)
    cfg = TrainConfig(batch_size=2, total_steps=4, seed=7)
    losses = []
    for _ in range(2):
        model = DeductionTransformer(TINY_MODEL)
        metrics = train(model, instances, cfg, LossConfig())
        losses.append([m["loss"] for m in metrics])
    assert losses[0] == losses[1]


def test_train_requires_instances():
    model = DeductionTransformer(TINY_MODEL)
    with pytest.raises(ValueError):
        train(model, [], TrainConfig(batch_size=2, total_steps=1), LossConfig())
