"""Sudoku with generic box size: exact oracle, puzzle generator, text I/O.

The oracle runs singles propagation (naked + hidden) to a fixed point and
finishes with depth-first backtracking, so it can count solutions exactly
up to a cap and report whether search was needed.  It doubles as the
verifier for everything the learned solver emits.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lattice import CapacityError, LatticeShape, LatticeState, POPCOUNT, SolutionPoint


class ParseError(ValueError):
    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        loc = "" if line is None else f" at line {line}" + ("" if col is None else f", col {col}")
        super().__init__(message + loc)
        self.line = line
        self.col = col


@dataclass(frozen=True)
class SudokuSpec:
    box_rows: int = 3
    box_cols: int = 3

    def __post_init__(self):
        if self.box_rows < 1 or self.box_cols < 1:
            raise ValueError("box dimensions must be positive")

    @property
    def n(self) -> int:
        return self.box_rows * self.box_cols

    @property
    def lattice_shape(self) -> LatticeShape:
        return LatticeShape(self.n, self.n, self.n)

    @property
    def groups(self) -> list[np.ndarray]:
        """Row, column, and box index groups; each must be all-different."""
        n = self.n
        idx = np.arange(n * n).reshape(n, n)
        out = [idx[r] for r in range(n)]
        out += [idx[:, c] for c in range(n)]
        for br in range(0, n, self.box_rows):
            for bc in range(0, n, self.box_cols):
                out.append(idx[br:br + self.box_rows, bc:bc + self.box_cols].ravel())
        return out


@dataclass
class SudokuSolveResult:
    solutions: list[np.ndarray]          # each (n, n) with values 1..n
    used_search: bool                    # propagation alone was not enough
    propagation_solved: bool             # singles alone fully solved the grid
    hit_cap: bool = False


def _peers(spec: SudokuSpec) -> np.ndarray:
    """peers[i] lists the cells sharing a group with cell i (excluding i)."""
    n = spec.n
    sets: list[set[int]] = [set() for _ in range(n * n)]
    for g in spec.groups:
        for i in g:
            sets[i].update(int(j) for j in g if j != i)
    return np.array([sorted(s) for s in sets], dtype=np.int64)


_PEERS_CACHE: dict[SudokuSpec, np.ndarray] = {}


def _peers_cached(spec: SudokuSpec) -> np.ndarray:
    if spec not in _PEERS_CACHE:
        _PEERS_CACHE[spec] = _peers(spec)
    return _PEERS_CACHE[spec]


def _propagate(spec: SudokuSpec, cand: np.ndarray) -> bool:
    """Run naked and hidden singles to a fixed point, in place.

    Returns False on contradiction (some cell has no candidate).
    """
    n = spec.n
    peers = _peers_cached(spec)
    groups = spec.groups
    while True:
        changed = False
        counts = POPCOUNT[cand]
        if np.any(counts == 0):
            return False
        # naked singles: a solved cell removes its value from all peers
        singles = np.flatnonzero(counts == 1)
        for i in singles:
            bit = cand[i]
            p = peers[i]
            hits = p[(cand[p] & bit) != 0]
            if hits.size:
                cand[hits] &= ~bit
                changed = True
        # hidden singles: a value with one home in a group gets pinned there
        for g in groups:
            gc = cand[g]
            for v in range(n):
                bit = np.uint16(1 << v)
                homes = np.flatnonzero(gc & bit)
                if homes.size == 1:
                    i = g[homes[0]]
                    if cand[i] != bit:
                        cand[i] = bit
                        changed = True
                        gc = cand[g]
                elif homes.size == 0:
                    return False
        if not changed:
            return bool(np.all(POPCOUNT[cand] > 0))


def oracle_solve(spec: SudokuSpec, givens: np.ndarray, cap: int = 2) -> SudokuSolveResult:
    """Exact solution set of a Sudoku grid, up to ``cap`` solutions.

    ``givens`` is (n, n) with 0 for empty cells.  A contradictory grid
    yields zero solutions (that is a valid output, not an error).
    """
    n = spec.n
    givens = np.asarray(givens, dtype=np.int64)
    if givens.shape != (n, n):
        raise ValueError(f"expected a {n}x{n} grid, got {givens.shape}")
    if np.any((givens < 0) | (givens > n)):
        raise ValueError("given values must be in 0..n")
    cand = np.full(n * n, np.uint16((1 << n) - 1))
    flat = givens.ravel()
    fixed = flat > 0
    cand[fixed] = np.uint16(1) << (flat[fixed] - 1).astype(np.uint16)

    result = SudokuSolveResult([], used_search=False, propagation_solved=False)
    if not _propagate(spec, cand):
        return result
    if np.all(POPCOUNT[cand] == 1):
        result.propagation_solved = True
        result.solutions.append(_cand_to_grid(spec, cand))
        return result

    def search(cand: np.ndarray) -> bool:
        """DFS over the branch cell with fewest candidates; True when capped."""
        counts = POPCOUNT[cand]
        open_cells = np.flatnonzero(counts > 1)
        i = open_cells[np.argmin(counts[open_cells])]
        for v in range(n):
            if not (cand[i] >> v) & 1:
                continue
            child = cand.copy()
            child[i] = np.uint16(1 << v)
            if not _propagate(spec, child):
                continue
            if np.all(POPCOUNT[child] == 1):
                result.solutions.append(_cand_to_grid(spec, child))
                if len(result.solutions) >= cap:
                    return True
            elif search(child):
                return True
        return False

    result.used_search = True
    result.hit_cap = search(cand)
    return result


def _cand_to_grid(spec: SudokuSpec, cand: np.ndarray) -> np.ndarray:
    n = spec.n
    vals = np.zeros(n * n, dtype=np.int64)
    for v in range(n):
        vals[((cand >> v) & 1) == 1] = v + 1
    return vals.reshape(n, n)


def verify_solution(spec: SudokuSpec, givens: np.ndarray, grid: np.ndarray) -> bool:
    """True iff grid is a complete valid solution extending the givens."""
    n = spec.n
    grid = np.asarray(grid, dtype=np.int64)
    if grid.shape != (n, n) or np.any((grid < 1) | (grid > n)):
        return False
    givens = np.asarray(givens, dtype=np.int64)
    if np.any((givens > 0) & (grid != givens)):
        return False
    flat = grid.ravel()
    return all(len(set(flat[g].tolist())) == n for g in spec.groups)


# -- generation ------------------------------------------------------------


def random_complete_grid(spec: SudokuSpec, rng: np.random.Generator) -> np.ndarray:
    """A random complete valid grid via randomized backtracking."""
    n = spec.n
    cand = np.full(n * n, np.uint16((1 << n) - 1))

    def fill(cand: np.ndarray) -> np.ndarray | None:
        if not _propagate(spec, cand):
            return None
        counts = POPCOUNT[cand]
        if np.all(counts == 1):
            return cand
        open_cells = np.flatnonzero(counts > 1)
        i = open_cells[np.argmin(counts[open_cells])]
        values = [v for v in range(n) if (cand[i] >> v) & 1]
        rng.shuffle(values)
        for v in values:
            child = cand.copy()
            child[i] = np.uint16(1 << v)
            done = fill(child)
            if done is not None:
                return done
        return None

    solved = fill(cand)
    assert solved is not None, "an empty Sudoku grid is always completable"
    return _cand_to_grid(spec, solved)


def sudoku_generate(spec: SudokuSpec, rng: np.random.Generator,
                    require_search: bool = False, max_tries: int = 200) -> np.ndarray:
    """Generate a unique-solution puzzle as an (n, n) givens grid.

    Starts from a random complete grid and greedily removes givens while the
    oracle confirms uniqueness.  With ``require_search``, retries until
    singles propagation alone cannot solve the puzzle.
    """
    for _ in range(max_tries):
        grid = random_complete_grid(spec, rng)
        givens = grid.copy().ravel()
        order = rng.permutation(givens.size)
        for i in order:
            saved = givens[i]
            givens[i] = 0
            res = oracle_solve(spec, givens.reshape(spec.n, spec.n), cap=2)
            if len(res.solutions) != 1:
                givens[i] = saved
        puzzle = givens.reshape(spec.n, spec.n)
        if not require_search:
            return puzzle
        if oracle_solve(spec, puzzle, cap=2).used_search:
            return puzzle
    raise CapacityError(f"no puzzle satisfying the filter after {max_tries} tries")


# -- lattice bridge --------------------------------------------------------


def givens_to_lattice(spec: SudokuSpec, givens: np.ndarray) -> LatticeState:
    shape = spec.lattice_shape
    state = LatticeState.top(shape)
    cells = state.cells.copy()
    flat = np.asarray(givens, dtype=np.int64).ravel()
    fixed = flat > 0
    cells[fixed] = np.uint16(1) << (flat[fixed] - 1).astype(np.uint16)
    return LatticeState(shape, cells, state.mask)


def grid_to_solution(spec: SudokuSpec, grid: np.ndarray) -> SolutionPoint:
    values = (np.asarray(grid, dtype=np.int64).ravel() - 1).astype(np.int16)
    return SolutionPoint(spec.lattice_shape, values)


def solution_to_grid(point: SolutionPoint) -> np.ndarray:
    n = point.shape.rows
    return (point.values.astype(np.int64) + 1).reshape(n, n)


# -- text format -----------------------------------------------------------


def sudoku_parse(spec: SudokuSpec, text: str) -> np.ndarray:
    """Parse n lines of n characters; digits 1..n, 0 for an empty cell."""
    n = spec.n
    lines = text.strip("\n").split("\n")
    if len(lines) != n:
        raise ParseError(f"expected {n} lines, got {len(lines)}", line=len(lines))
    grid = np.zeros((n, n), dtype=np.int64)
    for r, line in enumerate(lines):
        if len(line) != n:
            raise ParseError(f"expected {n} characters, got {len(line)}",
                             line=r + 1, col=len(line))
        for c, ch in enumerate(line):
            if not ch.isdigit() or int(ch) > n:
                raise ParseError(f"invalid character {ch!r}", line=r + 1, col=c + 1)
            grid[r, c] = int(ch)
    return grid


def sudoku_serialize(grid: np.ndarray) -> str:
    return "\n".join("".join(str(int(v)) for v in row) for row in np.asarray(grid))


def state_to_grid(state: LatticeState) -> np.ndarray:
    """Project a lattice state to a grid: singleton cells as digits, else 0."""
    n = state.shape.rows
    grid = np.zeros(n * n, dtype=np.int64)
    counts = POPCOUNT[state.cells]
    for v in range(state.shape.vocab_size):
        grid[(counts == 1) & (((state.cells >> v) & 1) == 1)] = v + 1
    return grid.reshape(n, n)
