"""Standalone verification suites: Galois laws, gradient correctness,
shortest-path DAG counts, and the Sudoku oracle.

Each suite returns a result dict with an "ok" flag; the CLI `check`
subcommand and the acceptance tests both run these.
"""

from __future__ import annotations

from itertools import product

import numpy as np
import torch
from scipy import stats

from . import lattice as lat
from . import maze as maze_mod
from . import sudoku as sudoku_mod
from .lattice import LatticeShape, LatticeState, SolutionPoint
from .losses import LossConfig, compute_loss
from .model import DeductionTransformer, ModelConfig, states_to_tensors


def _random_state(shape: LatticeShape, rng: np.random.Generator, max_multi: int = 8) -> LatticeState:
    """A random state whose concretization stays enumerable: most cells
    are singletons, a few have 2 candidates, rarely one is empty."""
    cells = np.empty(shape.num_cells, dtype=np.uint16)
    multi_cells = set(rng.choice(shape.num_cells, size=min(max_multi, shape.num_cells), replace=False).tolist())
    for i in range(shape.num_cells):
        if i in multi_cells and rng.random() < 0.7:
            picks = rng.choice(shape.vocab_size, size=2, replace=False)
            cells[i] = (1 << picks[0]) | (1 << picks[1])
        elif rng.random() < 0.03:
            cells[i] = 0
        else:
            cells[i] = 1 << rng.integers(shape.vocab_size)
    return LatticeState(shape, cells)


def _random_solution_set(shape: LatticeShape, rng: np.random.Generator) -> list[SolutionPoint]:
    n = int(rng.integers(1, 6))
    return [
        SolutionPoint(shape, rng.integers(shape.vocab_size, size=shape.num_cells).astype(np.int16))
        for _ in range(n)
    ]


def check_galois(cases: int = 1000, seed: int = 0) -> dict:
    """Round-trip and adjointness laws of the abstraction pair."""
    rng = np.random.default_rng(seed)
    shapes = [LatticeShape(2, 2, 3), LatticeShape(4, 4, 3)]
    failures = []
    for case in range(cases):
        shape = shapes[case % len(shapes)]
        # round trip 1: S is covered by gamma(alpha(S)), i.e. every
        # sampled point is consistent with the abstraction
        sols = _random_solution_set(shape, rng)
        a = lat.alpha(sols, shape)
        if not all(lat.consistent(y, a) for y in sols):
            failures.append(("round_trip_1", case))
        # round trip 2: alpha(gamma(a)) refines a
        x = _random_state(shape, rng)
        pts = lat.gamma_enumerate(x, limit=100_000)
        re_abstracted = lat.alpha(pts, shape)
        if not lat.leq(re_abstracted, x):
            failures.append(("round_trip_2", case))
        if not pts and re_abstracted != LatticeState.all_empty(shape):
            failures.append(("empty_gamma_bottom", case))
        # adjointness: alpha(S) below a  iff  S covered by gamma(a)
        lhs = lat.leq(lat.alpha(sols, shape), x)
        rhs = all(lat.consistent(y, x) for y in sols)
        if lhs != rhs:
            failures.append(("adjointness", case))
    return {"suite": "galois", "cases": cases, "failures": failures, "ok": not failures}


def _gradient_fixture():
    shape = LatticeShape(2, 2, 3)
    cfg = ModelConfig(
        shape=shape, embed_dim=16, layers=2, heads=2, internal_iterations=2,
        ffn_multiplier=4.0, dropout_rate=0.0, use_rope2d=True, seed=7,
    )
    model = DeductionTransformer(cfg).double()
    # batch exercises every loss term: singleton target cells (CE),
    # multi-candidate cells (BCE), and one conflicted entry (CLS)
    x1 = LatticeState(shape, [0b111, 0b011, 0b101, 0b001])
    t1 = LatticeState(shape, [0b001, 0b011, 0b100, 0b001])
    x2 = LatticeState(shape, [0b110, 0b011, 0b111, 0b010])
    t2 = LatticeState(shape, [0b010, 0b001, 0b011, 0b010])
    states = [x1, x2]
    targets = [t1, t2]
    conflicts = [False, True]
    return model, states, targets, conflicts


def check_gradients(epsilon: float = 1e-4, tolerance: float = 1e-3) -> dict:
    """Autograd gradients vs central finite differences, double precision.

    Relative error uses the central-difference magnitude with an
    absolute floor so near-zero coordinates do not blow up the ratio.
    """
    model, states, targets, conflicts = _gradient_fixture()
    loss_cfg = LossConfig()

    bits, mask = states_to_tensors(states, dtype=torch.float64)
    target_bits = torch.from_numpy(np.stack([t.to_bits() for t in targets])).double()
    conflict_t = torch.tensor([float(c) for c in conflicts], dtype=torch.float64)

    def loss_value() -> float:
        out = model(bits, mask)
        loss, _ = compute_loss(out, bits, target_bits, conflict_t, mask, loss_cfg)
        return loss

    loss = loss_value()
    model.zero_grad(set_to_none=True)
    loss.backward()
    grads = {n: p.grad.detach().clone() for n, p in model.named_parameters()}

    worst = 0.0
    worst_name = ""
    with torch.no_grad():
        for name, p in model.named_parameters():
            flat = p.view(-1)
            g = grads[name].view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + epsilon
                plus = float(loss_value())
                flat[i] = orig - epsilon
                minus = float(loss_value())
                flat[i] = orig
                fd = (plus - minus) / (2 * epsilon)
                rel = abs(g[i].item() - fd) / max(abs(fd), 1e-6)
                if rel > worst:
                    worst, worst_name = rel, f"{name}[{i}]"
    return {
        "suite": "gradients",
        "max_relative_error": worst,
        "worst_coordinate": worst_name,
        "parameters": sum(p.numel() for p in model.parameters()),
        "ok": worst < tolerance,
    }


def check_dag(mazes: int = 100, samples: int = 10_000, seed: int = 0) -> dict:
    """DAG path counts vs exhaustive DFS, plus sampling uniformity."""
    rng = np.random.default_rng(seed)
    mismatches = []
    for i in range(mazes):
        rows = int(rng.integers(4, 9))
        cols = int(rng.integers(4, 9))
        spec = maze_mod.MazeSpec(rows, cols, min_path_len=3)
        grid, dag = maze_mod.generate(spec, rng)
        brute = len(maze_mod.enumerate_shortest_paths(grid, limit=200_000))
        if brute != dag.total_paths:
            mismatches.append((i, brute, dag.total_paths))

    # uniformity on one maze with a modest number of paths
    grid, dag = _maze_with_paths(rng, low=4, high=50)
    paths = maze_mod.enumerate_shortest_paths(grid)
    index = {tuple(p): j for j, p in enumerate(map(tuple, paths))}
    counts = np.zeros(len(paths))
    for _ in range(samples):
        counts[index[tuple(maze_mod.sample_shortest_path(dag, rng))]] += 1
    chi = stats.chisquare(counts)
    return {
        "suite": "dag",
        "mazes": mazes,
        "mismatches": mismatches,
        "uniformity_paths": len(paths),
        "uniformity_p": float(chi.pvalue),
        "ok": not mismatches and chi.pvalue > 0.001,
    }


def _maze_with_paths(rng, low: int, high: int):
    for _ in range(1000):
        spec = maze_mod.MazeSpec(6, 6, min_path_len=4)
        grid, dag = maze_mod.generate(spec, rng)
        if low <= dag.total_paths <= high:
            return grid, dag
    raise RuntimeError("no maze with the requested path count")


def _brute_force_sudoku(spec: sudoku_mod.SudokuSpec, givens: np.ndarray) -> list[np.ndarray]:
    """Plain DFS over cell assignments with direct constraint checks;
    shares no code with the propagation-based oracle."""
    n = spec.side
    groups = [set(g.tolist()) for g in spec.groups]
    values = np.asarray(givens, dtype=np.int16).copy()
    solutions = []

    def ok(i, v):
        for g in groups:
            if i in g and any(values[j] == v for j in g if j != i and values[j] >= 0):
                return False
        return True

    def walk(i):
        while i < n * n and values[i] >= 0:
            i += 1
        if i == n * n:
            solutions.append(values.copy())
            return
        for v in range(n):
            if ok(i, v):
                values[i] = v
                walk(i + 1)
                values[i] = -1

    for i in range(n * n):
        if values[i] >= 0 and not ok(i, int(values[i])):
            return []
    walk(0)
    return solutions


def check_oracle(seed: int = 0) -> dict:
    """Sudoku oracle vs brute-force enumeration on 4x4 instances."""
    spec = sudoku_mod.SudokuSpec(2, 2)
    shape = spec.lattice_shape
    empty = np.full(16, -1, dtype=np.int16)
    brute = _brute_force_sudoku(spec, empty)
    oracle = sudoku_mod.oracle_solve(spec, empty, cap=1000)
    full_alpha = lat.alpha(oracle.solutions, shape)
    problems = []
    if len(brute) != 288 or len(oracle.solutions) != 288:
        problems.append(("grid_count", len(brute), len(oracle.solutions)))
    if full_alpha != LatticeState.top(shape):
        problems.append(("alpha_not_top",))
    rng = np.random.default_rng(seed)
    for i in range(20):
        givens, solution = sudoku_mod.generate(spec, rng)
        res = sudoku_mod.oracle_solve(spec, givens, cap=5)
        bf = _brute_force_sudoku(spec, givens)
        if len(res.solutions) != 1 or len(bf) != 1:
            problems.append(("uniqueness", i))
        elif not np.array_equal(res.solutions[0].values, bf[0]):
            problems.append(("solution_mismatch", i))
        elif not np.array_equal(bf[0], solution.values):
            problems.append(("generator_mismatch", i))
    return {"suite": "oracle", "problems": problems, "ok": not problems}


SUITES = {
    "galois": check_galois,
    "gradients": check_gradients,
    "dag": check_dag,
    "oracle": check_oracle,
}
