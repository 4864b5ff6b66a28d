"""Search-mode solving: trusted conflict detection, branching, and
parallel slot/chain batching.

A slot holds one puzzle until it self-accepts or exhausts its round
budget; within a slot, K chains explore the same initial state and
diverge through sampled branch pins, eval-time dropout, and per-step
symmetry wrapping.  Each chain owns its RNG streams, so verdicts do not
depend on how many slots run concurrently.

By default a chain's self-accepted solution must also pass the exact
domain verifier before the slot resolves; disabling the gate
(`verify_solutions=False`) reproduces the trust-the-model protocol
where wrong answers are possible and measured.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch

from . import lattice as lat
from .instances import ProblemInstance, verify
from .lattice import LatticeState, SolutionPoint
from .model import DeductionTransformer, states_to_tensors
from .symmetry import Symmetry
from .training import branch_pin, eliminate


@dataclass(frozen=True)
class InferConfig:
    slots: int = 8
    chains: int = 64
    round_budget: int = 1000
    theta_elim: float = 0.1
    theta_cls_eval: float = 0.6
    tau_decide: float = 1.5
    eval_dropout: float = 0.05
    per_step_augment: bool = True
    verify_solutions: bool = True
    seed: int = 0

    def __post_init__(self):
        if min(self.slots, self.chains, self.round_budget) < 1:
            raise ValueError("slots, chains and round_budget must be >= 1")
        if not (0 < self.theta_elim < 1 and 0 < self.theta_cls_eval < 1):
            raise ValueError("thresholds must lie in (0, 1)")


@dataclass
class ChainTrace:
    chain_id: int
    rounds: list[dict] = field(default_factory=list)
    termination: Optional[str] = None  # solved | conflict | drained | budget
    termination_round: Optional[int] = None


@dataclass
class SolveVerdict:
    instance_id: str
    outcome: str  # solved | abstained
    solution: Optional[SolutionPoint]
    batched_forwards: int
    sequential_cost: Optional[int]
    winning_chain: Optional[int]
    wall_time: float
    traces: Optional[list[ChainTrace]] = None


def sequential_cost(traces: list[ChainTrace], winner: int) -> int:
    """Batch-1 forward-pass estimate: sum of the self-termination rounds
    of every chain below the winner, plus the winner's solve round."""
    for c in range(winner):
        if traces[c].termination_round is None:
            raise ValueError(f"chain {c} below the winner has no drained length")
    return sum(traces[c].termination_round for c in range(winner)) + traces[winner].termination_round


def _decide_outcome(
    state_aug: LatticeState, cls_prob: float, cfg: InferConfig
) -> tuple[bool, bool]:
    conflict = cls_prob > cfg.theta_cls_eval or state_aug.is_bottom()
    solved = (not conflict) and lat.is_solved_shape(state_aug)
    return conflict, solved


def step_infer(
    model: DeductionTransformer,
    state: LatticeState,
    cfg: InferConfig,
    rng: np.random.Generator,
    torch_generator: Optional[torch.Generator] = None,
    use_digit_perm: bool = True,
) -> tuple[LatticeState, bool, bool]:
    """One inference step on a single state.

    Optionally wraps the state in a fresh random symmetry, runs the
    forward pass with eval-time dropout, eliminates below-threshold
    candidates, trusts the CLS conflict head and the empty-cell test,
    and branch-pins when neither terminal condition holds.  The
    symmetry is inverted before returning.
    """
    shape = state.shape
    sym = Symmetry.identity(shape.vocab_size)
    if cfg.per_step_augment:
        sym = Symmetry.random(
            rng, shape.vocab_size, shape.rows, shape.cols, use_digit_perm=use_digit_perm
        )
    wrapped = sym.apply_state(state)
    bits, mask = states_to_tensors([wrapped])
    with torch.no_grad():
        out = model(bits, mask, dropout_p=cfg.eval_dropout, generator=[torch_generator] if torch_generator else None)
    logits = out.cand_logits[-1, 0].numpy()
    cls_prob = float(torch.sigmoid(out.cls_logits[-1, 0]))
    x_new = eliminate(wrapped, logits, cfg.theta_elim)
    conflict, solved = _decide_outcome(x_new, cls_prob, cfg)
    if not conflict and not solved:
        x_new = branch_pin(x_new, logits, cfg.tau_decide, rng)
    return sym.inverse().apply_state(x_new), conflict, solved


@dataclass
class _Chain:
    index: int
    state: LatticeState
    rng: np.random.Generator
    torch_gen: torch.Generator
    trace: ChainTrace
    mode: str = "search"  # search | drain | stopped


@dataclass
class _Slot:
    instance: ProblemInstance
    chains: list[_Chain]
    rounds: int = 0
    winner: Optional[int] = None
    winner_round: Optional[int] = None
    solution: Optional[SolutionPoint] = None
    started: float = field(default_factory=time.time)


def _new_slot(instance: ProblemInstance, puzzle_index: int, cfg: InferConfig) -> _Slot:
    chains = []
    for c in range(cfg.chains):
        ss = np.random.SeedSequence(entropy=(cfg.seed, puzzle_index, c))
        rng = np.random.default_rng(ss)
        tg = torch.Generator().manual_seed(int(ss.generate_state(1, np.uint64)[0] >> 1))
        chains.append(_Chain(c, instance.initial, rng, tg, ChainTrace(c)))
    return _Slot(instance, chains)


def _slot_verdict(slot: _Slot, cfg: InferConfig, keep_traces: bool) -> SolveVerdict:
    traces = [c.trace for c in slot.chains]
    if slot.winner is not None:
        cost = sequential_cost(traces, slot.winner)
        return SolveVerdict(
            instance_id=slot.instance.instance_id,
            outcome="solved",
            solution=slot.solution,
            batched_forwards=slot.winner_round,
            sequential_cost=cost,
            winning_chain=slot.winner,
            wall_time=time.time() - slot.started,
            traces=traces if keep_traces else None,
        )
    return SolveVerdict(
        instance_id=slot.instance.instance_id,
        outcome="abstained",
        solution=None,
        batched_forwards=slot.rounds,
        sequential_cost=None,
        winning_chain=None,
        wall_time=time.time() - slot.started,
        traces=traces if keep_traces else None,
    )


def solve_parallel(
    model: DeductionTransformer,
    puzzles: list[ProblemInstance],
    cfg: InferConfig,
    keep_traces: bool = False,
) -> list[SolveVerdict]:
    """Solve a queue of puzzles with M slots of K chains each."""
    if not puzzles:
        raise ValueError("no puzzles to solve")
    model.eval()
    verdicts: dict[int, SolveVerdict] = {}
    queue = list(enumerate(puzzles))
    slots: dict[int, _Slot] = {}

    def admit() -> None:
        while queue and len(slots) < cfg.slots:
            idx, inst = queue.pop(0)
            slots[idx] = _new_slot(inst, idx, cfg)

    admit()
    while slots:
        stepping: list[tuple[int, _Chain, Symmetry, LatticeState]] = []
        for idx, slot in slots.items():
            use_perm = slot.instance.domain == "sudoku"
            for chain in slot.chains:
                if chain.mode == "stopped":
                    continue
                shape = chain.state.shape
                sym = Symmetry.identity(shape.vocab_size)
                if cfg.per_step_augment:
                    sym = Symmetry.random(
                        chain.rng, shape.vocab_size, shape.rows, shape.cols,
                        use_digit_perm=use_perm,
                    )
                stepping.append((idx, chain, sym, sym.apply_state(chain.state)))

        bits, mask = states_to_tensors([s for _, _, _, s in stepping])
        with torch.no_grad():
            out = model(
                bits, mask,
                dropout_p=cfg.eval_dropout,
                generator=[c.torch_gen for _, c, _, _ in stepping] if cfg.eval_dropout > 0 else None,
            )
        logits = out.cand_logits[-1].numpy()
        cls_probs = torch.sigmoid(out.cls_logits[-1]).numpy()

        for idx in slots:
            slots[idx].rounds += 1

        done_slots = []
        for row, (idx, chain, sym, wrapped) in enumerate(stepping):
            slot = slots[idx]
            before = lat.alive_count(wrapped)
            x_new = eliminate(wrapped, logits[row], cfg.theta_elim)
            eliminated = before - lat.alive_count(x_new)
            conflict, solved = _decide_outcome(x_new, float(cls_probs[row]), cfg)
            branched = False
            if not conflict and not solved:
                x_new = branch_pin(x_new, logits[row], cfg.tau_decide, chain.rng)
                branched = True
            unwrapped = sym.inverse().apply_state(x_new)
            if solved:
                candidate = lat.singleton_values(unwrapped)
                accepted = (not cfg.verify_solutions) or verify(slot.instance, candidate)
                if accepted:
                    if chain.trace.termination is None:
                        chain.trace.termination = "solved"
                        chain.trace.termination_round = slot.rounds
                    if slot.winner is None and chain.mode == "search":
                        slot.winner = chain.index
                        slot.winner_round = slot.rounds
                        slot.solution = candidate
                    chain.mode = "stopped"
                else:
                    conflict = True  # unverifiable answer is a conflict under the gate
                    solved = False
            if keep_traces:
                chain.trace.rounds.append(
                    {
                        "round": slot.rounds,
                        "eliminated": eliminated,
                        "alive": lat.alive_count(unwrapped),
                        "branched": branched,
                        "conflict": conflict,
                        "solved": solved,
                        "augmented": cfg.per_step_augment,
                    }
                )
            if conflict:
                if chain.trace.termination is None:
                    chain.trace.termination = "conflict"
                    chain.trace.termination_round = slot.rounds
                if chain.mode == "drain":
                    chain.mode = "stopped"
                else:
                    chain.state = slot.instance.initial  # restart on the same puzzle
            elif not solved:
                chain.state = unwrapped

        # resolve slots: winner found -> drain lower chains; budget -> abstain
        for idx, slot in list(slots.items()):
            if slot.winner is not None:
                needs_drain = False
                for chain in slot.chains:
                    if chain.index >= slot.winner:
                        if chain.index > slot.winner:
                            chain.mode = "stopped"
                        continue
                    if chain.trace.termination is None:
                        if slot.rounds >= cfg.round_budget:
                            chain.trace.termination = "drained"
                            chain.trace.termination_round = slot.rounds
                            chain.mode = "stopped"
                        else:
                            chain.mode = "drain"
                            needs_drain = True
                    else:
                        chain.mode = "stopped"
                if not needs_drain:
                    done_slots.append(idx)
            elif slot.rounds >= cfg.round_budget:
                for chain in slot.chains:
                    if chain.trace.termination is None:
                        chain.trace.termination = "budget"
                        chain.trace.termination_round = slot.rounds
                done_slots.append(idx)

        for idx in done_slots:
            verdicts[idx] = _slot_verdict(slots.pop(idx), cfg, keep_traces)
        admit()

    return [verdicts[i] for i in range(len(puzzles))]
