"""On-policy training: per-step targets, the composite loss, AdamW with a
warmup-cosine schedule, and the pool of partially-deduced states.

Each training step samples a batch of live search states from a pool,
computes targets by abstracting the still-consistent ground-truth
solutions, takes one optimizer step, advances every sampled state by one
deduction/branch move, and returns the survivors to the pool.  Solved and
conflicted states (verified against the ground truth) leave the pool and
are replaced by fresh instances, so over time the pool covers the whole
range of search depths the model will meet at inference.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import model as mdl
from .instances import ProblemInstance, augment_instance
from .lattice import LatticeState, POPCOUNT, SolutionPoint, consistent, supervision_target


@dataclass(frozen=True)
class LossConfig:
    w_pos: float = 4.0          # weight on keeping a truly-alive candidate
    w_neg: float = 0.5          # weight on dropping a truly-dead candidate
    lambda_cls: float = 0.1
    lambda_ce: float = 0.2
    theta_elim: float = 0.1
    theta_cls_train: float = 0.5  # unused while training (flags come from the
                                  # ground truth); kept for config parity
    tau_decide: float = 1.5

    def __post_init__(self):
        if not self.w_pos > self.w_neg > 0:
            raise ValueError("need w_pos > w_neg > 0")
        for t in (self.theta_elim, self.theta_cls_train):
            if not 0 < t < 1:
                raise ValueError("thresholds must lie in (0, 1)")
        if self.tau_decide <= 0:
            raise ValueError("tau_decide must be positive")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 512
    total_steps: int = 4000
    pool_multiplier: int = 1     # pool size = pool_multiplier * batch_size
    max_pool_age: int = 100      # steps since insertion before eviction
    lr: float = 3e-3
    weight_decay: float = 0.1
    betas: tuple[float, float] = (0.9, 0.95)
    grad_clip: float = 1.0
    warmup_fraction: float = 0.1
    dataset_augment: bool = True
    k_solutions: int = 1
    seed: int = 0

    def __post_init__(self):
        if min(self.batch_size, self.total_steps, self.pool_multiplier,
               self.max_pool_age) < 1:
            raise ValueError("sizes and budgets must be positive")
        if not 0 <= self.warmup_fraction <= 1:
            raise ValueError("warmup_fraction must be in [0, 1]")


# -- loss ------------------------------------------------------------------


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def compute_loss(cand_logits: np.ndarray, conflict_logits: np.ndarray,
                 target_bits: np.ndarray, conflict_flags: np.ndarray,
                 input_bits: np.ndarray, cell_mask: np.ndarray,
                 lc: LossConfig) -> tuple[float, dict, np.ndarray, np.ndarray]:
    """Composite per-iteration loss and its gradients w.r.t. the logits.

    Three terms, averaged over the internal iterations:
      * asymmetric BCE on candidate logits over in-puzzle bits still alive
        in the input (dead bits are structurally correct already),
      * symmetric BCE on the conflict logit,
      * softmax cross-entropy over alive candidates at cells whose target
        is a singleton.
    Returns (loss, per-term breakdown, d_cand, d_conflict).
    """
    L, B = conflict_logits.shape
    active = (input_bits > 0) & (cell_mask[..., None] > 0)     # (B, k, V)
    n_active = max(int(active.sum()), 1)
    t = target_bits
    w = np.where(t > 0, lc.w_pos, lc.w_neg) * active

    logp = _log_sigmoid(cand_logits)            # (L, B, k, V)
    logq = _log_sigmoid(-cand_logits)
    bce = -(w * (t * logp + (1 - t) * logq)).sum((1, 2, 3)) / n_active
    p = sigmoid(np.where(active[None], cand_logits, 0.0))
    d_cand = (w * (p - t))[...] / n_active

    cflag = conflict_flags.astype(cand_logits.dtype)            # (B,)
    cls = -(cflag * _log_sigmoid(conflict_logits)
            + (1 - cflag) * _log_sigmoid(-conflict_logits)).sum(1) / B
    d_conf = lc.lambda_cls * (sigmoid(conflict_logits) - cflag) / B

    tcount = t.sum(-1)
    single = (tcount == 1) & (cell_mask > 0)                    # (B, k)
    n_single = max(int(single.sum()), 1)
    masked = np.where(active[None], cand_logits, -np.inf)
    m = masked.max(-1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    ez = np.exp(masked - m)
    z = ez.sum(-1, keepdims=True)
    soft = ez / np.maximum(z, 1e-30)
    logsoft = np.where(active[None], (masked - m) - np.log(np.maximum(z, 1e-30)), 0.0)
    ce_cell = -(t * logsoft).sum(-1)                            # (L, B, k)
    ce = (ce_cell * single[None]).sum((1, 2)) / n_single
    d_ce = (soft - np.where(active[None], t, 0.0)) * single[None, ..., None] / n_single
    d_ce = np.where(active[None], d_ce, 0.0)

    loss_terms = {"bce": float(bce.mean()), "cls": float(cls.mean()),
                  "ce": float(ce.mean())}
    total = loss_terms["bce"] + lc.lambda_cls * loss_terms["cls"] \
        + lc.lambda_ce * loss_terms["ce"]
    d_cand_total = (d_cand + lc.lambda_ce * d_ce) / L
    d_conf_total = d_conf / L
    return total, loss_terms, d_cand_total, d_conf_total


# -- optimizer -------------------------------------------------------------


@dataclass
class AdamWState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def init(cls, params: dict[str, np.ndarray]) -> "AdamWState":
        return cls({k: np.zeros_like(p, dtype=np.float32) for k, p in params.items()},
                   {k: np.zeros_like(p, dtype=np.float32) for k, p in params.items()})


def learning_rate(step: int, cfg: TrainConfig) -> float:
    """Linear warmup to the peak rate, then cosine decay to zero."""
    warmup = int(round(cfg.warmup_fraction * cfg.total_steps))
    if warmup > 0 and step < warmup:
        return cfg.lr * step / warmup
    span = max(cfg.total_steps - warmup, 1)
    frac = min(step - warmup, span) / span
    return cfg.lr * 0.5 * (1.0 + np.cos(np.pi * frac))


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    norm = float(np.sqrt(sum(float((g.astype(np.float64) ** 2).sum())
                             for g in grads.values())))
    if norm > max_norm > 0:
        s = max_norm / norm
        for g in grads.values():
            g *= s
    return norm


def adamw_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
               state: AdamWState, step: int, cfg: TrainConfig,
               eps: float = 1e-8) -> None:
    """Decoupled weight-decay adaptive-moment update, in place.

    Weight decay applies to matrices only (embeddings, attention, FFN,
    heads), not to biases or layernorm parameters.
    """
    lr = learning_rate(step, cfg)
    clip_global_norm(grads, cfg.grad_clip)
    b1, b2 = cfg.betas
    state.t += 1
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for k, p in params.items():
        g = grads[k].astype(np.float32)
        m = state.m[k]
        v = state.v[k]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        upd = (m / c1) / (np.sqrt(v / c2) + eps)
        if p.ndim >= 2:
            upd = upd + cfg.weight_decay * p
        p -= (lr * upd).astype(p.dtype)


# -- pool and step ---------------------------------------------------------


@dataclass
class PoolEntry:
    instance: ProblemInstance
    state: LatticeState
    y_prev: LatticeState | None   # last non-conflicted supervision target
    age: int
    rng: np.random.Generator


@dataclass
class StepResult:
    state: LatticeState
    conflict: bool
    solved: bool
    target: LatticeState
    target_conflict: bool
    eliminated: int
    branched: bool


def eliminate_and_flag(x: LatticeState, final_cand: np.ndarray,
                       theta_elim: float) -> LatticeState:
    """Drop alive candidates whose confidence fell below the threshold."""
    probs = sigmoid(final_cand.astype(np.float64))
    v = x.shape.vocab_size
    bits = ((x.cells[:, None] >> np.arange(v, dtype=np.uint16)) & 1).astype(bool)
    keep = bits & (probs >= theta_elim)
    cells = (keep.astype(np.uint16) << np.arange(v, dtype=np.uint16)).sum(1)
    return x.replace_cells(cells.astype(np.uint16))


def branch_pin(x: LatticeState, final_cand: np.ndarray, tau: float,
               rng: np.random.Generator) -> tuple[LatticeState, int, int]:
    """Pin one uniformly-chosen multi-candidate cell to a sampled candidate."""
    counts = POPCOUNT[x.cells]
    open_cells = np.flatnonzero((counts >= 2) & x.mask)
    i = int(open_cells[rng.integers(len(open_cells))])
    alive = [v for v in range(x.shape.vocab_size) if (x.cells[i] >> v) & 1]
    logits = final_cand[i, alive].astype(np.float64) / tau
    p = np.exp(logits - logits.max())
    p /= p.sum()
    v = int(rng.choice(alive, p=p))
    cells = x.cells.copy()
    cells[i] = np.uint16(1 << v)
    return x.replace_cells(cells), i, v


def step_train(params: dict[str, np.ndarray], entries: list[PoolEntry],
               mcfg: mdl.ModelConfig, lc: LossConfig,
               dropout_rng: np.random.Generator | None = None
               ) -> tuple[list[StepResult], float, dict, dict[str, np.ndarray]]:
    """One supervised deduction step over a batch of pool entries."""
    B = len(entries)
    bits = np.stack([e.state.to_multihot() for e in entries])
    mask = np.stack([e.state.mask for e in entries]).astype(np.float64)
    out = mdl.forward(params, bits, mask, mcfg, dropout_rate=mcfg.dropout,
                      rng=dropout_rng, keep_cache=True)

    targets, tconf = [], []
    for e in entries:
        t, c = supervision_target(e.state, e.instance.solutions, e.y_prev)
        targets.append(t)
        tconf.append(c)
    target_bits = np.stack([t.to_multihot() for t in targets])
    loss, terms, d_cand, d_conf = compute_loss(
        out.cand_logits, out.conflict_logits, target_bits,
        np.array(tconf), bits, mask, lc)
    grads = mdl.backward(out.cache, d_cand, d_conf)

    results = []
    final = out.cand_logits[-1]
    for b, e in enumerate(entries):
        x = e.state
        before = x.alive_count()
        x2 = eliminate_and_flag(x, final[b], lc.theta_elim)
        conflict = not any(consistent(y, x2) for y in e.instance.solutions)
        solved = (not conflict and x2.is_solved_shape()
                  and any(consistent(y, x2) for y in e.instance.solutions))
        branched = False
        if not conflict and not solved:
            x2, _, _ = branch_pin(x2, final[b], lc.tau_decide, e.rng)
            branched = True
        results.append(StepResult(
            state=x2, conflict=conflict, solved=solved,
            target=targets[b], target_conflict=tconf[b],
            eliminated=before - x2.alive_count(), branched=branched))
    return results, loss, terms, grads


def _fresh_entry(inst: ProblemInstance, cfg: TrainConfig,
                 rng: np.random.Generator) -> PoolEntry:
    if cfg.dataset_augment:
        inst = augment_instance(inst, rng)
    return PoolEntry(instance=inst, state=inst.initial, y_prev=None, age=0,
                     rng=np.random.default_rng(rng.integers(2 ** 63)))


def train(mcfg: mdl.ModelConfig, cfg: TrainConfig, lc: LossConfig,
          dataset: list[ProblemInstance],
          params: dict[str, np.ndarray] | None = None,
          metrics_path=None, log_every: int = 25,
          progress: bool = False) -> tuple[dict[str, np.ndarray], list[dict]]:
    """Full training run; returns the trained parameters and metric records."""
    if not dataset:
        raise ValueError("training requires a nonempty dataset")
    for inst in dataset:
        if not inst.solutions:
            raise ValueError(f"{inst.instance_id} has no ground-truth solutions")
    rng = np.random.default_rng(cfg.seed)
    if params is None:
        params = mdl.init_params(mcfg)
    opt = AdamWState.init(params)

    cursor = 0

    def next_instance() -> ProblemInstance:
        nonlocal cursor
        inst = dataset[cursor % len(dataset)]
        cursor += 1
        return inst

    pool_size = cfg.pool_multiplier * cfg.batch_size
    pool = [_fresh_entry(next_instance(), cfg, rng) for _ in range(pool_size)]
    metrics: list[dict] = []
    sink = open(metrics_path, "w") if metrics_path else None
    t0 = time.time()
    try:
        for step in range(cfg.total_steps):
            idx = rng.choice(pool_size, size=cfg.batch_size, replace=False)
            batch = [pool[i] for i in idx]
            results, loss, terms, grads = step_train(params, batch, mcfg, lc,
                                                     dropout_rng=rng)
            if not np.isfinite(loss):
                raise mdl.NumericError(f"non-finite loss at step {step}")
            adamw_step(params, grads, opt, step, cfg)

            solves = conflicts = 0
            for i, res in zip(idx, results):
                e = pool[i]
                if res.solved or res.conflict:
                    solves += res.solved
                    conflicts += res.conflict
                    pool[i] = _fresh_entry(next_instance(), cfg, rng)
                else:
                    e.state = res.state
                    if not res.target_conflict:
                        e.y_prev = res.target
            for i, e in enumerate(pool):
                e.age += 1
                if e.age > cfg.max_pool_age:
                    pool[i] = _fresh_entry(next_instance(), cfg, rng)

            depths = [e.age for e in pool]
            rec = {"step": step, "loss": loss, **terms,
                   "lr": learning_rate(step, cfg),
                   "solves": solves, "conflicts": conflicts,
                   "pool_age_mean": float(np.mean(depths)),
                   "pool_age_max": int(np.max(depths))}
            metrics.append(rec)
            if sink is not None:
                sink.write(json.dumps(rec) + "\n")
            if progress and step % log_every == 0:
                el = time.time() - t0
                print(f"step {step:5d}  loss {loss:.4f}  "
                      f"solved {solves:3d}  conflict {conflicts:3d}  "
                      f"[{el:.0f}s]", flush=True)
    finally:
        if sink is not None:
            sink.close()
    return params, metrics
