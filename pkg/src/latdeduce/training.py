"""On-policy training of the deduction operator.

A pool of partially-deduced lattice states evolves under the model's
own step outputs.  Each training step samples a batch from the pool,
supervises every internal iteration against the abstraction of the
still-consistent sampled solutions, takes one optimizer step, removes
truly solved or truly conflicted entries, branch-pins the rest, and
refills the pool with fresh (optionally symmetry-augmented) instances.
The resulting distribution over deduction depths is the implicit
curriculum.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import torch

from . import lattice as lat
from .instances import ProblemInstance, augment, fresh_symmetry
from .lattice import LatticeState, SolutionPoint
from .losses import LossConfig, compute_loss
from .model import DeductionTransformer, states_to_tensors


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 512
    total_steps: int = 4000
    pool_multiplier: float = 1.0
    max_pool_age: int = 100
    lr: float = 3e-3
    weight_decay: float = 0.1
    betas: tuple[float, float] = (0.9, 0.95)
    grad_clip: float = 1.0
    warmup_fraction: float = 0.1
    dataset_augment: bool = True
    k_solutions: int = 1
    seed: int = 0
    checkpoint_every: int = 0

    def __post_init__(self):
        if min(self.batch_size, self.total_steps, self.max_pool_age) < 1:
            raise ValueError("batch_size, total_steps and max_pool_age must be positive")
        if not 0 <= self.warmup_fraction <= 1:
            raise ValueError("warmup_fraction must lie in [0, 1]")


def learning_rate_at(step: int, cfg: TrainConfig) -> float:
    """Linear warmup to the peak rate, then cosine decay to zero."""
    warmup = max(int(round(cfg.warmup_fraction * cfg.total_steps)), 0)
    if warmup > 0 and step < warmup:
        return cfg.lr * step / warmup
    if cfg.total_steps == warmup:
        return cfg.lr
    frac = (step - warmup) / (cfg.total_steps - warmup)
    return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * min(frac, 1.0)))


class Optimizer:
    """Decoupled weight-decay adaptive-moment update with global-norm
    clipping and the warmup/cosine schedule."""

    def __init__(self, model: DeductionTransformer, cfg: TrainConfig):
        self.cfg = cfg
        self.model = model
        self.inner = torch.optim.AdamW(
            model.parameters(),
            lr=cfg.lr,
            betas=cfg.betas,
            weight_decay=cfg.weight_decay,
        )

    def apply(self, step_index: int) -> float:
        lr = learning_rate_at(step_index, self.cfg)
        for group in self.inner.param_groups:
            group["lr"] = lr
        if self.cfg.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(self.model.parameters(), self.cfg.grad_clip)
        self.inner.step()
        self.inner.zero_grad(set_to_none=True)
        return lr


@dataclass
class PoolEntry:
    instance: ProblemInstance
    state: LatticeState
    y_prev: Optional[LatticeState]  # cached last non-empty target, never bottom
    inserted_at: int
    depth: int = 0
    rng: np.random.Generator = field(default_factory=np.random.default_rng)


@dataclass
class StepResult:
    state: LatticeState  # post-elimination, post-branch state
    conflict: bool
    solved: bool
    target: LatticeState
    target_conflict: bool
    eliminated: int
    branched: bool


def eliminate(
    state: LatticeState, final_logits: np.ndarray, theta_elim: float
) -> LatticeState:
    """Drop alive candidates whose confidence falls below the threshold."""
    probs = 1.0 / (1.0 + np.exp(-final_logits.astype(np.float64)))
    keep = probs >= theta_elim
    shifts = np.arange(state.shape.vocab_size, dtype=np.uint16)
    keep_mask = (keep.astype(np.uint16) << shifts).sum(axis=-1).astype(np.uint16)
    return state.replace_cells(state.cells & keep_mask)


def branch_pin(
    state: LatticeState, final_logits: np.ndarray, tau: float, rng: np.random.Generator
) -> LatticeState:
    """Pin one multi-candidate cell to a sampled candidate.

    The cell is uniform over cells with >= 2 alive candidates; the
    candidate comes from a softmax over its alive logits at the decide
    temperature.
    """
    counts = state.alive_counts()
    open_cells = np.flatnonzero((counts >= 2) & state.mask)
    if open_cells.size == 0:
        raise ValueError("no multi-candidate cell to branch on")
    cell = int(open_cells[rng.integers(open_cells.size)])
    alive = state.alive(cell)
    logits = np.array([final_logits[cell, v] for v in alive], dtype=np.float64) / tau
    p = np.exp(logits - logits.max())
    p /= p.sum()
    value = alive[int(rng.choice(len(alive), p=p))]
    cells = state.cells.copy()
    cells[cell] = np.uint16(1 << value)
    return state.replace_cells(cells)


def _ground_truth_flags(
    x_new: LatticeState, solutions: list[SolutionPoint]
) -> tuple[bool, bool]:
    consistent_any = any(lat.consistent(y, x_new) for y in solutions)
    conflict = not consistent_any
    solved = (
        not conflict
        and lat.is_solved_shape(x_new)
        and any(y.as_state() == x_new for y in solutions)
    )
    return conflict, solved


def step_train(
    model: DeductionTransformer,
    entries: list[PoolEntry],
    loss_cfg: LossConfig,
    dropout_generator=None,
) -> tuple[list[StepResult], torch.Tensor, dict[str, float]]:
    """Algorithm step over a pool batch, training branch.

    Runs the forward pass, eliminates below-threshold candidates on the
    final-iteration logits, supervises all iterations against the
    abstraction targets, and verifies conflict/solved directly against
    the sampled ground-truth solutions.
    """
    states = [e.state for e in entries]
    bits, mask = states_to_tensors(states)
    out = model(bits, mask, dropout_p=model.cfg.dropout_rate, generator=dropout_generator)

    targets, conflicts = [], []
    for e in entries:
        if not e.instance.solutions:
            raise ValueError(f"training entry {e.instance.instance_id} has no solutions")
        t, is_conflict = lat.supervision_target(e.state, e.instance.solutions, e.y_prev)
        targets.append(t)
        conflicts.append(is_conflict)
    target_bits = torch.from_numpy(np.stack([t.to_bits() for t in targets]))
    conflict_t = torch.tensor([float(c) for c in conflicts])
    loss, detail = compute_loss(out, bits, target_bits, conflict_t, mask, loss_cfg)

    final = out.cand_logits[-1].detach().numpy()
    results = []
    for i, e in enumerate(entries):
        before = lat.alive_count(e.state)
        x_new = eliminate(e.state, final[i], loss_cfg.theta_elim)
        conflict, solved = _ground_truth_flags(x_new, e.instance.solutions)
        branched = False
        if not conflict and not solved:
            x_new = branch_pin(x_new, final[i], loss_cfg.tau_decide, e.rng)
            branched = True
        results.append(
            StepResult(
                state=x_new,
                conflict=conflict,
                solved=solved,
                target=targets[i],
                target_conflict=conflicts[i],
                eliminated=before - lat.alive_count(x_new),
                branched=branched,
            )
        )
    return results, loss, detail


def loss_and_grad(
    model: DeductionTransformer,
    states: list[LatticeState],
    targets: list[LatticeState],
    conflicts: list[bool],
    loss_cfg: LossConfig,
    dropout_generator=None,
) -> tuple[float, dict[str, torch.Tensor]]:
    """Loss value and exact per-parameter gradients for one batch."""
    dtype = next(model.parameters()).dtype
    bits, mask = states_to_tensors(states, dtype=dtype)
    out = model(bits, mask, dropout_p=model.cfg.dropout_rate, generator=dropout_generator)
    target_bits = torch.from_numpy(np.stack([t.to_bits() for t in targets])).to(dtype)
    conflict_t = torch.tensor([float(c) for c in conflicts], dtype=dtype)
    loss, _ = compute_loss(out, bits, target_bits, conflict_t, mask, loss_cfg)
    model.zero_grad(set_to_none=True)
    loss.backward()
    grads = {
        name: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
        for name, p in model.named_parameters()
    }
    model.zero_grad(set_to_none=True)
    return float(loss), grads


def train(
    model: DeductionTransformer,
    instances: list[ProblemInstance],
    train_cfg: TrainConfig,
    loss_cfg: LossConfig,
    metrics_path=None,
    checkpoint_fn: Optional[Callable[[int], None]] = None,
    trace_hook: Optional[Callable[[PoolEntry, StepResult], None]] = None,
) -> list[dict]:
    """Run the full pool-based training loop; returns per-step metrics."""
    if not instances:
        raise ValueError("training requires at least one instance")
    master = np.random.default_rng(train_cfg.seed)
    dropout_gen = torch.Generator().manual_seed(train_cfg.seed + 1)
    pool_size = max(int(round(train_cfg.pool_multiplier * train_cfg.batch_size)), train_cfg.batch_size)

    order: list[int] = []

    def next_instance() -> ProblemInstance:
        nonlocal order
        if not order:
            order = list(master.permutation(len(instances)))
        inst = instances[order.pop()]
        if train_cfg.dataset_augment:
            inst = augment(inst, fresh_symmetry(inst, master))
        return inst

    def fresh_entry(step: int) -> PoolEntry:
        inst = next_instance()
        return PoolEntry(
            instance=inst,
            state=inst.initial,
            y_prev=None,
            inserted_at=step,
            rng=np.random.default_rng(master.integers(2**63)),
        )

    pool = [fresh_entry(0) for _ in range(pool_size)]
    optimizer = Optimizer(model, train_cfg)
    metrics: list[dict] = []
    log = open(metrics_path, "w") if metrics_path else None
    try:
        for step in range(train_cfg.total_steps):
            # age eviction, then sample a batch without replacement
            for i, e in enumerate(pool):
                if step - e.inserted_at > train_cfg.max_pool_age:
                    pool[i] = fresh_entry(step)
            picks = master.choice(pool_size, size=train_cfg.batch_size, replace=False)
            batch = [pool[i] for i in picks]

            model.train()
            results, loss, detail = step_train(model, batch, loss_cfg, dropout_gen)
            loss.backward()
            lr = optimizer.apply(step)

            solved = conflicts = 0
            for idx, res in zip(picks, results):
                entry = pool[idx]
                if trace_hook is not None:
                    trace_hook(entry, res)
                if res.solved or res.conflict:
                    solved += int(res.solved)
                    conflicts += int(res.conflict)
                    pool[idx] = fresh_entry(step)
                else:
                    entry.state = res.state
                    entry.depth += 1
                    if not res.target_conflict:
                        entry.y_prev = res.target

            depths = np.array([e.depth for e in pool])
            record = {
                "step": step,
                "loss": detail["total"],
                "bce": detail["bce"],
                "cls": detail["cls"],
                "ce": detail["ce"],
                "lr": lr,
                "solved": solved,
                "conflicts": conflicts,
                "pool_depth_mean": float(depths.mean()),
                "pool_depth_max": int(depths.max()),
                "time": time.time(),
            }
            metrics.append(record)
            if log:
                log.write(json.dumps(record) + "\n")
            if (
                checkpoint_fn is not None
                and train_cfg.checkpoint_every > 0
                and (step + 1) % train_cfg.checkpoint_every == 0
            ):
                checkpoint_fn(step)
    finally:
        if log:
            log.close()
    return metrics
