"""Randomized self-check suites, runnable standalone from the CLI.

Each suite returns (passed, summary dict).  They are deliberately built on
independent oracles: brute-force enumeration for the abstraction laws and
path counts, central finite differences for the gradients, and exhaustive
search for the puzzle oracle.
"""

from __future__ import annotations

import numpy as np

from . import maze as mz
from . import model as mdl
from . import sudoku as sd
from .lattice import (LatticeShape, LatticeState, SolutionPoint, alpha, consistent,
                      gamma_enumerate, supervision_target)
from .training import LossConfig, compute_loss


def random_state(rng: np.random.Generator, shape: LatticeShape,
                 p_alive: float = 0.6) -> LatticeState:
    bits = rng.random((shape.num_cells, shape.vocab_size)) < p_alive
    cells = (bits.astype(np.uint16)
             << np.arange(shape.vocab_size, dtype=np.uint16)).sum(1)
    return LatticeState(shape, cells.astype(np.uint16),
                        np.ones(shape.num_cells, dtype=bool))


def random_points(rng: np.random.Generator, shape: LatticeShape, n: int
                  ) -> list[SolutionPoint]:
    return [SolutionPoint(shape, rng.integers(
        shape.vocab_size, size=shape.num_cells).astype(np.int16))
        for _ in range(n)]


def run_galois(cases: int = 1000, seed: int = 0) -> tuple[bool, dict]:
    """Round-trip and adjointness laws of the abstraction pair, randomized
    over small grids."""
    rng = np.random.default_rng(seed)
    shapes = [LatticeShape(2, 2, 2), LatticeShape(2, 2, 3), LatticeShape(4, 4, 4)]
    failures = 0
    for i in range(cases):
        shape = shapes[i % len(shapes)]
        # S subset of gamma(alpha(S))
        pts = random_points(rng, shape, int(rng.integers(1, 5)))
        a = alpha(pts, shape)
        if not all(consistent(p, a) for p in pts):
            failures += 1
        # alpha(gamma(a)) below a, with the empty set collapsing to all-empty
        small = random_state(rng, LatticeShape(2, 2, 3), p_alive=0.55)
        try:
            pts2 = gamma_enumerate(small, limit=4000)
        except Exception:
            pts2 = None
        if pts2 is not None:
            back = alpha(pts2, small.shape, small.mask)
            if not back.leq(small):
                failures += 1
            if not pts2 and back.alive_count() != 0:
                failures += 1
        # adjointness: alpha(S) below a  <=>  S subset of gamma(a)
        a2 = random_state(rng, shape, p_alive=0.7)
        lhs = alpha(pts, shape).leq(a2)
        rhs = all(consistent(p, a2) for p in pts)
        if lhs != rhs:
            failures += 1
    return failures == 0, {"cases": cases, "failures": failures}


def run_gradients(seed: int = 1, eps: float = 1e-4, tol: float = 1e-3,
                  spot_check: int | None = None) -> tuple[bool, dict]:
    """Every parameter coordinate of the tiny model against central finite
    differences of the full loss, in double precision."""
    shape = LatticeShape(2, 2, 3)
    cfg = mdl.ModelConfig(shape=shape, embed_dim=16, num_layers=2, num_heads=2,
                          iterations=2, dropout=0.0, use_rope2d=True, seed=seed)
    params = mdl.init_params(cfg, dtype=np.float64)
    rng = np.random.default_rng(seed)

    top = LatticeState.top(shape)
    x1 = top.replace_cells(np.array([0b001, 0b011, 0b111, 0b101], dtype=np.uint16))
    y = SolutionPoint(shape, np.array([0, 1, 2, 0], dtype=np.int16))
    x2 = top.replace_cells(np.array([0b010, 0b011, 0b111, 0b101], dtype=np.uint16))
    states = [top, x1, x2]
    y_prev = supervision_target(top, [y], None)[0]
    targets, flags = zip(*(supervision_target(x, [y], y_prev) for x in states))

    bits = np.stack([s.to_multihot() for s in states])
    mask = np.stack([s.mask for s in states]).astype(np.float64)
    tb = np.stack([t.to_multihot() for t in targets])
    flags = np.array(flags)
    lc = LossConfig()

    def loss_only():
        out = mdl.forward(params, bits, mask, cfg)
        return compute_loss(out.cand_logits, out.conflict_logits, tb, flags,
                            bits, mask, lc)[0]

    out = mdl.forward(params, bits, mask, cfg, keep_cache=True)
    _, _, dc, df = compute_loss(out.cand_logits, out.conflict_logits, tb, flags,
                                bits, mask, lc)
    grads = mdl.backward(out.cache, dc, df)

    worst = 0.0
    worst_at = None
    checked = 0
    for name, p in params.items():
        flat = p.reshape(-1)
        gf = grads[name].reshape(-1)
        idxs = range(flat.size)
        if spot_check is not None:
            idxs = rng.choice(flat.size, size=min(spot_check, flat.size),
                              replace=False)
        for i in idxs:
            old = flat[i]
            flat[i] = old + eps
            lp = loss_only()
            flat[i] = old - eps
            lm = loss_only()
            flat[i] = old
            fd = (lp - lm) / (2 * eps)
            rel = abs(fd - gf[i]) / max(abs(fd), abs(gf[i]), 1e-8)
            checked += 1
            if rel > worst:
                worst, worst_at = rel, (name, int(i))
    return worst < tol, {"checked": checked, "max_rel_err": worst, "at": worst_at,
                         "tol": tol}


def run_dag(mazes: int = 100, seed: int = 2) -> tuple[bool, dict]:
    """DAG path counts against exhaustive DFS on small random mazes, plus a
    chi-square uniformity check of the path sampler."""
    rng = np.random.default_rng(seed)
    mismatches = 0
    chi_maze = None
    for _ in range(mazes):
        rows = int(rng.integers(4, 9))
        cols = int(rng.integers(4, 9))
        grid, dag = mz.maze_generate(mz.MazeSpec(rows, cols, 3), rng)
        try:
            paths = mz.enumerate_shortest_paths(dag, limit=20000)
        except Exception:
            continue
        if len(paths) != dag.total_paths:
            mismatches += 1
        if chi_maze is None and 5 <= dag.total_paths <= 50:
            chi_maze = (grid, dag, paths)
    p_value = None
    if chi_maze is not None:
        from scipy.stats import chisquare
        grid, dag, paths = chi_maze
        index = {p: i for i, p in enumerate(paths)}
        counts = np.zeros(len(paths))
        for p in mz.dag_sample_uniform(dag, rng, 10000):
            counts[index[tuple(p)]] += 1
        p_value = float(chisquare(counts).pvalue)
    ok = mismatches == 0 and (p_value is None or p_value > 0.001)
    return ok, {"mazes": mazes, "count_mismatches": mismatches,
                "chi2_pvalue": p_value}


def run_oracle(seed: int = 3) -> tuple[bool, dict]:
    """Puzzle-oracle cross-checks: full enumeration of the empty small
    board, uniqueness of generated puzzles, contradiction handling."""
    rng = np.random.default_rng(seed)
    spec = sd.SudokuSpec(2, 2)
    failures = []
    res = sd.oracle_solve(spec, np.zeros((4, 4), dtype=int), cap=500)
    if len(res.solutions) != 288:
        failures.append(f"empty 4x4 count {len(res.solutions)} != 288")
    full = res.solutions[0]
    if len(sd.oracle_solve(spec, full).solutions) != 1:
        failures.append("complete grid should have exactly itself as solution")
    bad = full.copy()
    bad[0, 1] = bad[0, 0]
    if sd.oracle_solve(spec, bad).solutions:
        failures.append("contradictory grid should have zero solutions")
    for _ in range(10):
        puzzle = sd.sudoku_generate(spec, rng)
        if len(sd.oracle_solve(spec, puzzle, cap=2).solutions) != 1:
            failures.append("generated puzzle is not unique")
    return not failures, {"failures": failures}


SUITES = {"galois": run_galois, "gradients": run_gradients,
          "dag": run_dag, "oracle": run_oracle}
