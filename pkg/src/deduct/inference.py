"""Search-mode solving: trusted conflict detection, stochastic branching,
and slot/chain parallel restarts.

A *slot* holds one puzzle from admission until it self-accepts or exhausts
its round budget; within a slot, K *chains* run independent randomized
searches on the same puzzle, stepped together in one batched forward pass.
Chains that hit a conflict restart from the initial state.  After a winner,
the losing chains below its index are drained to their own termination so
an exact batch-1 (sequential) cost can be reconstructed.

Every chain draws all its randomness (per-step symmetry, dropout noise,
branch picks) from its own stream, so verdicts do not depend on how chains
are packed into batches.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import maze as mz
from . import model as mdl
from . import sudoku as sd
from .instances import MAZE, SUDOKU, ProblemInstance, solution_text
from .lattice import LatticeState, POPCOUNT, SolutionPoint
from .symmetry import Symmetry
from .training import branch_pin, eliminate_and_flag, sigmoid


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
    permute_digits: bool = True     # disabled for domains with typed channels
    verify_solutions: bool = True   # False = trust the model's self-acceptance
    seed: int = 0

    def __post_init__(self):
        if min(self.slots, self.chains, self.round_budget) < 1:
            raise ValueError("slots, chains, and round_budget must be >= 1")
        for t in (self.theta_elim, self.theta_cls_eval):
            if not 0 < t < 1:
                raise ValueError("thresholds must lie in (0, 1)")


@dataclass
class ChainTrace:
    chain_id: int
    termination: str = "running"   # running | solved | conflict | drained
    term_round: int | None = None  # first self-termination round
    alive_counts: list[int] = field(default_factory=list)
    restarts: list[int] = field(default_factory=list)


@dataclass
class SolveVerdict:
    puzzle_id: str
    outcome: str                   # solved | abstained
    solution: SolutionPoint | None
    solution_text: str | None
    winner_chain: int | None
    rounds: int                    # batched forward rounds spent on the puzzle
    sequential_cost: int | None
    wall_time: float
    traces: list[ChainTrace] = field(default_factory=list)


def state_to_point(x: LatticeState) -> SolutionPoint:
    if not x.is_solved_shape():
        raise ValueError("state is not a singleton")
    values = np.full(x.shape.num_cells, -1, dtype=np.int16)
    for v in range(x.shape.vocab_size):
        values[(x.mask) & (((x.cells >> v) & 1) == 1)] = v
    return SolutionPoint(x.shape, values, x.mask)


def verify_point(inst: ProblemInstance, point: SolutionPoint) -> bool:
    """Domain-oracle check of an emitted solution."""
    if inst.domain == SUDOKU:
        spec = sd.SudokuSpec(inst.spec_params["box_rows"], inst.spec_params["box_cols"])
        givens = sd.sudoku_parse(spec, inst.puzzle_text)
        return sd.verify_solution(spec, givens, sd.solution_to_grid(point))
    if inst.domain == MAZE:
        grid = mz.maze_parse(inst.puzzle_text)
        return mz.verify_shortest_path(grid, point)
    raise ValueError(f"unknown domain {inst.domain!r}")


# -- stepping --------------------------------------------------------------


@dataclass
class _Chain:
    state: LatticeState
    rng: np.random.Generator
    trace: ChainTrace


def _step_rows(params, mcfg: mdl.ModelConfig, icfg: InferConfig,
               rows: list[_Chain]) -> list[tuple[LatticeState, bool, bool]]:
    """Advance a batch of chains by one deduction/branch move."""
    syms: list[Symmetry | None] = []
    staged = []
    for ch in rows:
        if icfg.per_step_augment:
            sym = Symmetry.random(ch.rng, ch.state.shape.vocab_size,
                                  permute_digits=icfg.permute_digits, dihedral=True)
            staged.append(sym.apply_state(ch.state))
        else:
            sym = None
            staged.append(ch.state)
        syms.append(sym)

    bits = np.stack([s.to_multihot() for s in staged])
    mask = np.stack([s.mask for s in staged]).astype(np.float64)
    out = mdl.forward(params, bits, mask, mcfg,
                      dropout_rate=icfg.eval_dropout,
                      row_rngs=[ch.rng for ch in rows] if icfg.eval_dropout > 0 else None)
    final = out.cand_logits[-1]
    confl = sigmoid(out.conflict_logits[-1].astype(np.float64))

    results = []
    for b, (ch, sym, x) in enumerate(zip(rows, syms, staged)):
        x2 = eliminate_and_flag(x, final[b], icfg.theta_elim)
        conflict = bool(confl[b] > icfg.theta_cls_eval) or x2.is_bottom()
        solved = x2.is_solved_shape() and not conflict
        if not conflict and not solved:
            x2, _, _ = branch_pin(x2, final[b], icfg.tau_decide, ch.rng)
        if sym is not None:
            x2 = sym.invert_state(x2)
        results.append((x2, conflict, solved))
    return results


def step_infer(params, mcfg: mdl.ModelConfig, x: LatticeState,
               icfg: InferConfig, rng: np.random.Generator
               ) -> tuple[LatticeState, bool, bool]:
    """Single-chain step: returns (next state, conflict, solved)."""
    ch = _Chain(state=x, rng=rng, trace=ChainTrace(0))
    return _step_rows(params, mcfg, icfg, [ch])[0]


# -- slot/chain search -----------------------------------------------------


@dataclass
class _Slot:
    index: int
    puzzle_seq: int
    inst: ProblemInstance
    chains: list[_Chain]
    rounds: int = 0
    drain_rounds: int = 0
    phase: str = "search"          # search | drain
    winner: int | None = None
    win_round: int | None = None
    solution: SolutionPoint | None = None
    start_time: float = 0.0


def _new_slot(index: int, seq: int, inst: ProblemInstance, icfg: InferConfig) -> _Slot:
    chains = [
        _Chain(state=inst.initial,
               rng=np.random.default_rng([icfg.seed, seq, c]),
               trace=ChainTrace(c, alive_counts=[inst.initial.alive_count()]))
        for c in range(icfg.chains)
    ]
    return _Slot(index=index, puzzle_seq=seq, inst=inst, chains=chains,
                 start_time=time.time())


def sequential_cost(traces: list[ChainTrace], winner: int, win_round: int) -> int:
    """Batch-1 forward-pass estimate: the rounds every lower-indexed chain
    would have burned on its own, plus the winner's rounds."""
    total = win_round
    for tr in traces[:winner]:
        if tr.term_round is None:
            raise ValueError(f"chain {tr.chain_id} was not drained")
        total += tr.term_round
    return total


def solve_parallel(params, mcfg: mdl.ModelConfig, puzzles: list[ProblemInstance],
                   icfg: InferConfig, record_traces: bool = False,
                   progress: bool = False) -> list[SolveVerdict]:
    """Solve a queue of puzzles with M slots of K chains each."""
    if not puzzles:
        raise ValueError("no puzzles to solve")
    verdicts: dict[int, SolveVerdict] = {}
    queue = list(enumerate(puzzles))
    slots: list[_Slot | None] = []
    for i in range(icfg.slots):
        if queue:
            seq, inst = queue.pop(0)
            slots.append(_new_slot(i, seq, inst, icfg))
        else:
            slots.append(None)

    def finish(slot: _Slot) -> None:
        wall = time.time() - slot.start_time
        if slot.winner is not None:
            cost = sequential_cost([c.trace for c in slot.chains],
                                   slot.winner, slot.win_round)
            sol = slot.solution
            verdicts[slot.puzzle_seq] = SolveVerdict(
                puzzle_id=slot.inst.instance_id, outcome="solved",
                solution=sol, solution_text=solution_text(slot.inst.domain, sol),
                winner_chain=slot.winner, rounds=slot.win_round,
                sequential_cost=cost, wall_time=wall,
                traces=[c.trace for c in slot.chains] if record_traces else [])
        else:
            verdicts[slot.puzzle_seq] = SolveVerdict(
                puzzle_id=slot.inst.instance_id, outcome="abstained",
                solution=None, solution_text=None, winner_chain=None,
                rounds=slot.rounds, sequential_cost=None, wall_time=wall,
                traces=[c.trace for c in slot.chains] if record_traces else [])
        if progress:
            v = verdicts[slot.puzzle_seq]
            print(f"  {v.puzzle_id}: {v.outcome} rounds={v.rounds} "
                  f"seq={v.sequential_cost}", flush=True)

    def refill(idx: int) -> None:
        if queue:
            seq, inst = queue.pop(0)
            slots[idx] = _new_slot(idx, seq, inst, icfg)
        else:
            slots[idx] = None

    while any(s is not None for s in slots):
        rows: list[_Chain] = []
        owners: list[tuple[_Slot, int]] = []
        for slot in slots:
            if slot is None:
                continue
            if slot.phase == "search":
                active = range(len(slot.chains))
            else:  # drain: only undrained losers below the winner
                active = [c for c in range(slot.winner)
                          if slot.chains[c].trace.term_round is None]
            for c in active:
                rows.append(slot.chains[c])
                owners.append((slot, c))
        results = _step_rows(params, mcfg, icfg, rows)

        solved_now: dict[int, list[tuple[int, SolutionPoint]]] = {}
        for (slot, c), (x2, conflict, solved) in zip(owners, results, strict=True):
            ch = slot.chains[c]
            rnd = slot.rounds + 1 + slot.drain_rounds
            ch.trace.alive_counts.append(x2.alive_count())
            if solved:
                if ch.trace.term_round is None:
                    ch.trace.term_round = rnd
                    ch.trace.termination = "solved"
                if slot.phase == "search":
                    point = state_to_point(x2)
                    accept = (not icfg.verify_solutions) or verify_point(slot.inst, point)
                    if accept:
                        solved_now.setdefault(slot.index, []).append((c, point))
                        ch.state = x2
                        continue
                    # failed verification behaves like a conflict: restart
                    ch.trace.restarts.append(rnd)
                    ch.state = slot.inst.initial
                else:
                    ch.state = x2
            elif conflict:
                if ch.trace.term_round is None:
                    ch.trace.term_round = rnd
                    ch.trace.termination = "conflict"
                if slot.phase == "search":
                    ch.trace.restarts.append(rnd)
                    ch.state = slot.inst.initial
                else:
                    ch.state = x2
            else:
                ch.state = x2

        for slot in list(slots):
            if slot is None:
                continue
            if slot.phase == "search":
                slot.rounds += 1
                if slot.index in solved_now:
                    w, point = min(solved_now[slot.index], key=lambda t: t[0])
                    slot.winner = w
                    slot.win_round = slot.rounds
                    slot.solution = point
                    # losers above the winner stop here; those below keep
                    # running until their own termination (the drain)
                    for c in range(w + 1, icfg.chains):
                        if slot.chains[c].trace.termination == "running":
                            slot.chains[c].trace.termination = "drained"
                    need_drain = any(slot.chains[c].trace.term_round is None
                                     for c in range(w))
                    if need_drain:
                        slot.phase = "drain"
                    else:
                        finish(slot)
                        refill(slot.index)
                elif slot.rounds >= icfg.round_budget:
                    finish(slot)
                    refill(slot.index)
            else:
                slot.drain_rounds += 1
                if all(slot.chains[c].trace.term_round is not None
                       for c in range(slot.winner)):
                    finish(slot)
                    refill(slot.index)

    return [verdicts[i] for i in range(len(puzzles))]
