import numpy as np
import pytest

from latdeduce import lattice as lat
from latdeduce import maze, sudoku
from latdeduce.instances import (
    augment,
    fresh_symmetry,
    generate_maze_instances,
    generate_sudoku_instances,
    read_bundle,
    verify,
    write_bundle,
)

SPEC = sudoku.SudokuSpec(2, 2)


def test_sudoku_instance_consistency():
    inst = generate_sudoku_instances(SPEC, 1, np.random.default_rng(0))[0]
    assert inst.domain == "sudoku"
    assert len(inst.solutions) == 1
    assert lat.consistent(inst.solutions[0], inst.initial)
    assert verify(inst, inst.solutions[0])


def test_maze_instance_consistency():
    spec = maze.MazeSpec(6, 6, 4)
    for inst in generate_maze_instances(spec, 3, np.random.default_rng(1), k=3):
        assert inst.domain == "maze"
        assert len(inst.solutions) == 3
        for y in inst.solutions:
            assert lat.consistent(y, inst.initial)
            assert verify(inst, y)


def test_augment_preserves_verifiability():
    rng = np.random.default_rng(2)
    for inst in generate_sudoku_instances(SPEC, 3, rng):
        sym = fresh_symmetry(inst, rng)
        out = augment(inst, sym)
        assert lat.consistent(out.solutions[0], out.initial)
        assert verify(out, out.solutions[0])


def test_augment_preserves_uniqueness():
    rng = np.random.default_rng(8)
    for inst in generate_sudoku_instances(SPEC, 3, rng):
        sym = fresh_symmetry(inst, rng)
        out = augment(inst, sym)
        res = sudoku.oracle_solve(SPEC, out.payload["givens"], cap=2)
        assert len(res.solutions) == 1
        assert res.solutions[0] == out.solutions[0]


def test_augment_maze_never_permutes_channels():
    rng = np.random.default_rng(3)
    inst = generate_maze_instances(maze.MazeSpec(6, 6, 4), 1, rng)[0]
    for _ in range(10):
        sym = fresh_symmetry(inst, rng)
        assert sym.digit_perm == tuple(range(maze.MAZE_VOCAB))
        out = augment(inst, sym)
        assert verify(out, out.solutions[0])


def test_bundle_roundtrip_sudoku(tmp_path):
    rng = np.random.default_rng(4)
    instances = generate_sudoku_instances(SPEC, 4, rng)
    path = tmp_path / "bundle.jsonl"
    write_bundle(path, instances)
    loaded = read_bundle(path)
    assert len(loaded) == 4
    for a, b in zip(instances, loaded):
        assert a.instance_id == b.instance_id
        assert a.initial == b.initial
        assert a.solutions == b.solutions


def test_bundle_roundtrip_maze(tmp_path):
    rng = np.random.default_rng(5)
    instances = generate_maze_instances(maze.MazeSpec(7, 7, 5), 3, rng, k=2)
    path = tmp_path / "bundle.jsonl"
    write_bundle(path, instances)
    loaded = read_bundle(path)
    for a, b in zip(instances, loaded):
        assert a.initial == b.initial
        assert a.solutions == b.solutions
        assert a.payload["length"] == b.payload["length"]


def test_inconsistent_solution_rejected():
    from latdeduce.instances import make_sudoku_instance
    from latdeduce.lattice import SolutionPoint

    rng = np.random.default_rng(6)
    givens, solution = sudoku.generate(SPEC, rng)
    bad = solution.values.copy()
    fixed = np.flatnonzero(givens >= 0)[0]
    bad[fixed] = (bad[fixed] + 1) % 4
    with pytest.raises(ValueError):
        make_sudoku_instance(SPEC, givens, [SolutionPoint(SPEC.lattice_shape, bad)], "bad")
