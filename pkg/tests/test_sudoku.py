import numpy as np
import pytest

from latdeduce import sudoku
from latdeduce.lattice import SolutionPoint

SPEC = sudoku.SudokuSpec(2, 2)


def test_spec_geometry():
    assert SPEC.side == 4
    assert SPEC.groups.shape == (12, 4)
    # row 0, column 0, top-left box
    assert list(SPEC.groups[0]) == [0, 1, 2, 3]
    assert list(SPEC.groups[4]) == [0, 4, 8, 12]
    assert list(SPEC.groups[8]) == [0, 1, 4, 5]


def test_parse_and_serialize_roundtrip():
    text = "1200\n0040\n0300\n0001".replace("4", "4")
    givens = sudoku.parse(text, SPEC)
    assert givens[0] == 0 and givens[1] == 1 and givens[6] == 3
    assert (givens == -1).sum() == 11
    assert sudoku.serialize_values(givens, SPEC) == text


def test_parse_errors_carry_location():
    with pytest.raises(sudoku.ParseError):
        sudoku.parse("1200\n0040", SPEC)
    with pytest.raises(sudoku.ParseError) as err:
        sudoku.parse("1200\n00x0\n0300\n0001", SPEC)
    assert err.value.line == 2 and err.value.col == 3
    with pytest.raises(sudoku.ParseError):
        sudoku.parse("1200\n0050\n0300\n0001", SPEC)  # digit above side


def test_propagate_solves_easy_puzzle():
    givens = sudoku.parse("1234\n3412\n2143\n4320", SPEC)
    cells = sudoku.propagate(SPEC, sudoku.givens_to_state(SPEC, givens).cells)
    assert cells is not None
    assert np.all(np.bitwise_count(cells) == 1)


def test_propagate_detects_contradiction():
    givens = sudoku.parse("1100\n0000\n0000\n0000", SPEC)
    assert sudoku.propagate(SPEC, sudoku.givens_to_state(SPEC, givens).cells) is None


def test_oracle_counts_all_grids():
    empty = np.full(16, -1, dtype=np.int16)
    res = sudoku.oracle_solve(SPEC, empty, cap=1000)
    assert len(res.solutions) == 288  # all 4x4 grids
    assert res.needed_search and not res.truncated


def test_oracle_truncation_flag():
    empty = np.full(16, -1, dtype=np.int16)
    res = sudoku.oracle_solve(SPEC, empty, cap=5)
    assert res.truncated and len(res.solutions) == 5


def test_oracle_on_unsatisfiable():
    givens = sudoku.parse("1100\n0000\n0000\n0000", SPEC)
    res = sudoku.oracle_solve(SPEC, givens)
    assert res.solutions == [] and not res.truncated


def test_generate_unique_and_verified():
    rng = np.random.default_rng(3)
    for _ in range(5):
        givens, solution = sudoku.generate(SPEC, rng)
        res = sudoku.oracle_solve(SPEC, givens, cap=2)
        assert len(res.solutions) == 1
        assert res.solutions[0] == solution
        assert sudoku.verify_solution(SPEC, givens, solution)


def test_generate_require_search():
    # minimized 4x4 puzzles always fall to singles propagation, so the
    # search requirement is only meaningful at 9x9
    spec = sudoku.SudokuSpec(3, 3)
    rng = np.random.default_rng(5)
    givens, _ = sudoku.generate(spec, rng, require_search=True)
    assert sudoku.oracle_solve(spec, givens, cap=2).needed_search


def test_verify_rejects_bad_solutions():
    rng = np.random.default_rng(9)
    givens, solution = sudoku.generate(SPEC, rng)
    bad = solution.values.copy()
    i, j = np.flatnonzero(givens == -1)[:2]
    bad[i], bad[j] = bad[j], bad[i]
    assert not sudoku.verify_solution(SPEC, givens, SolutionPoint(SPEC.lattice_shape, bad))
    # changing a given is rejected even if groups stay valid
    other = sudoku.oracle_solve(SPEC, np.full(16, -1, dtype=np.int16), cap=50).solutions
    mismatching = next(s for s in other if not np.array_equal(s.values, solution.values))
    assert not sudoku.verify_solution(SPEC, givens, mismatching)


def test_random_complete_grid_depends_on_order():
    a = sudoku.random_complete_grid(SPEC, np.random.default_rng(0))
    b = sudoku.random_complete_grid(SPEC, np.random.default_rng(1))
    assert sudoku.verify_solution(SPEC, np.full(16, -1, dtype=np.int16), a)
    assert not np.array_equal(a.values, b.values)


def test_nine_by_nine_oracle():
    spec = sudoku.SudokuSpec(3, 3)
    rng = np.random.default_rng(2)
    givens, solution = sudoku.generate(spec, rng)
    res = sudoku.oracle_solve(spec, givens, cap=2)
    assert len(res.solutions) == 1 and res.solutions[0] == solution
