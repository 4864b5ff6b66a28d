"""Sudoku with generic box size: exact oracle, generator, text I/O.

The oracle combines candidate propagation (naked singles + hidden
singles) with depth-first backtracking, so it enumerates the exact
solution set up to a caller-supplied cap and reports whether search
was needed beyond propagation.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .lattice import CapacityError, LatticeShape, LatticeState, SolutionPoint


class ParseError(ValueError):
    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        loc = "" if line is None else f" at line {line}" + ("" if col is None else f", column {col}")
        super().__init__(message + loc)
        self.line = line
        self.col = col


@dataclass(frozen=True)
class SudokuSpec:
    box_rows: int = 3
    box_cols: int = 3

    @property
    def side(self) -> int:
        return self.box_rows * self.box_cols

    @property
    def lattice_shape(self) -> LatticeShape:
        return LatticeShape(self.side, self.side, self.side)

    @cached_property
    def groups(self) -> np.ndarray:
        """All-different constraint groups: rows, columns, boxes.

        Array of shape (3*side, side) holding flat cell indices.
        """
        n = self.side
        idx = np.arange(n * n).reshape(n, n)
        rows = idx
        cols = idx.T
        boxes = []
        for br in range(0, n, self.box_rows):
            for bc in range(0, n, self.box_cols):
                boxes.append(idx[br : br + self.box_rows, bc : bc + self.box_cols].ravel())
        return np.concatenate([rows, cols, np.array(boxes)], axis=0)


def givens_to_state(spec: SudokuSpec, givens: np.ndarray) -> LatticeState:
    """Initial lattice state: givens pinned, empty cells fully alive."""
    shape = spec.lattice_shape
    cells = np.full(shape.num_cells, shape.full_set, dtype=np.uint16)
    g = np.asarray(givens).reshape(shape.num_cells)
    fixed = g >= 0
    cells[fixed] = np.uint16(1) << g[fixed].astype(np.uint16)
    return LatticeState(shape, cells)


def propagate(spec: SudokuSpec, cells: np.ndarray) -> np.ndarray | None:
    """Run naked-single and hidden-single elimination to a fixpoint.

    Returns the refined candidate masks, or None on contradiction.
    """
    n = spec.side
    cells = cells.astype(np.uint16).copy()
    groups = spec.groups
    vbits = np.uint16(1) << np.arange(n, dtype=np.uint16)
    while True:
        if np.any(cells == 0):
            return None
        before = cells.copy()
        counts = np.bitwise_count(cells)
        for g in groups:
            vals = cells[g]
            single = counts[g] == 1
            if single.any():
                pinned = vals[single]
                forbid = np.bitwise_or.reduce(pinned)
                if np.bitwise_count(forbid) < int(single.sum()):
                    return None  # duplicate pinned value in a group
                vals = np.where(single, vals, vals & ~forbid)
                cells[g] = vals
            # hidden singles: a value alive in exactly one cell of the group
            hits = (vals[:, None] & vbits[None, :]) != 0  # (side, vocab)
            per_value = hits.sum(axis=0)
            if np.any(per_value == 0):
                return None
            for v in np.flatnonzero(per_value == 1):
                i = int(np.flatnonzero(hits[:, v])[0])
                cells[g[i]] = vbits[v]
            counts = np.bitwise_count(cells)
        if np.array_equal(cells, before):
            return cells


@dataclass(frozen=True)
class OracleResult:
    solutions: list[SolutionPoint]
    needed_search: bool
    truncated: bool


def oracle_solve(
    spec: SudokuSpec,
    givens: np.ndarray,
    cap: int = 2,
    value_order: np.ndarray | None = None,
) -> OracleResult:
    """Exact solution set of a puzzle, up to `cap` solutions.

    `value_order` permutes the branching value order (used by the
    generator to randomize which complete grid is found first).
    """
    shape = spec.lattice_shape
    state0 = givens_to_state(spec, givens).cells
    root = propagate(spec, state0)
    if root is None:
        return OracleResult([], needed_search=False, truncated=False)
    needed_search = bool(np.any(np.bitwise_count(root) > 1))
    order = np.arange(spec.side) if value_order is None else np.asarray(value_order)

    solutions: list[np.ndarray] = []
    truncated = False
    stack = [root]
    while stack:
        cells = stack.pop()
        counts = np.bitwise_count(cells)
        open_cells = np.flatnonzero(counts > 1)
        if open_cells.size == 0:
            solutions.append(cells)
            if len(solutions) >= cap:
                truncated = True
                break
            continue
        i = int(open_cells[np.argmin(counts[open_cells])])
        # push in reverse so the first value in `order` is explored first
        for v in reversed([v for v in order if cells[i] >> v & 1]):
            child = cells.copy()
            child[i] = np.uint16(1 << int(v))
            refined = propagate(spec, child)
            if refined is not None:
                stack.append(refined)

    points = [
        SolutionPoint(shape, np.log2(c.astype(np.float64)).astype(np.int16))
        for c in solutions
    ]
    return OracleResult(points, needed_search=needed_search, truncated=truncated)


def verify_solution(spec: SudokuSpec, givens: np.ndarray, solution: SolutionPoint) -> bool:
    """All-different on every group, and agreement with the givens."""
    vals = solution.values
    if np.any(vals < 0) or np.any(vals >= spec.side):
        return False
    g = np.asarray(givens).reshape(-1)
    if np.any((g >= 0) & (vals != g)):
        return False
    for grp in spec.groups:
        if len(set(vals[grp].tolist())) != spec.side:
            return False
    return True


def random_complete_grid(spec: SudokuSpec, rng: np.random.Generator) -> SolutionPoint:
    empty = np.full(spec.side * spec.side, -1, dtype=np.int16)
    order = rng.permutation(spec.side)
    result = oracle_solve(spec, empty, cap=1, value_order=order)
    return result.solutions[0]


def generate(
    spec: SudokuSpec,
    rng: np.random.Generator,
    require_search: bool = False,
    max_tries: int = 200,
) -> tuple[np.ndarray, SolutionPoint]:
    """A unique-solution puzzle: (givens, solution).

    Starts from a random complete grid and greedily removes givens while
    the oracle confirms uniqueness.  With `require_search`, grids whose
    minimized puzzle is still solvable by propagation alone are
    discarded and generation retries.
    """
    n2 = spec.side * spec.side
    for _ in range(max_tries):
        solution = random_complete_grid(spec, rng)
        givens = solution.values.astype(np.int16).copy()
        for i in rng.permutation(n2):
            saved = givens[i]
            givens[i] = -1
            if len(oracle_solve(spec, givens, cap=2).solutions) != 1:
                givens[i] = saved
        if require_search and not oracle_solve(spec, givens, cap=2).needed_search:
            continue
        return givens, solution
    raise CapacityError(f"no puzzle found in {max_tries} tries (require_search={require_search})")


# -- text format: side lines of side digit characters, 0 = empty -----


def parse(text: str, spec: SudokuSpec) -> np.ndarray:
    n = spec.side
    if n > 9:
        raise ParseError(f"text format supports side <= 9, got {n}")
    lines = text.strip("\n").split("\n")
    if len(lines) != n:
        raise ParseError(f"expected {n} lines, got {len(lines)}", line=len(lines))
    givens = np.full(n * n, -1, dtype=np.int16)
    for r, line in enumerate(lines):
        if len(line) != n:
            raise ParseError(f"expected {n} characters, got {len(line)}", line=r + 1)
        for c, ch in enumerate(line):
            if not ch.isdigit() or int(ch) > n:
                raise ParseError(f"invalid character {ch!r}", line=r + 1, col=c + 1)
            if ch != "0":
                givens[r * n + c] = int(ch) - 1
    return givens


def serialize_values(values: np.ndarray, spec: SudokuSpec) -> str:
    n = spec.side
    v = np.asarray(values).reshape(n, n)
    return "\n".join("".join(str(int(x) + 1) if x >= 0 else "0" for x in row) for row in v)


def serialize_state(state: LatticeState, spec: SudokuSpec) -> str:
    """Singleton cells as digits, everything else as 0."""
    counts = state.alive_counts()
    vals = np.full(state.shape.num_cells, -1, dtype=np.int16)
    singles = counts == 1
    vals[singles] = np.log2(state.cells[singles].astype(np.float64)).astype(np.int16)
    return serialize_values(vals, spec)
