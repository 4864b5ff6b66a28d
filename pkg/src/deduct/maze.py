"""Maze instances: generation, shortest-path DAG, uniform path sampling, I/O.

A maze is a grid of walls and free cells with one start and one goal.  The
solution notion is a shortest orthogonal path.  Because a single maze can
admit a huge number of distinct shortest paths, we build the DAG of cells
lying on some shortest path; exact (big-integer) path counts over that DAG
give uniform sampling and exact enumeration cross-checks.

Lattice encoding: vocabulary {wall, off-path, on-path, start, goal}.
Walls, start, and goal are pinned singletons in the initial state; free
cells start with both path bits alive.  A solution marks exactly the free
cells of one shortest path as on-path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lattice import CapacityError, LatticeShape, LatticeState, SolutionPoint
from .sudoku import ParseError

# vocabulary symbols
WALL, OFF, ON, START, GOAL = range(5)
MAZE_VOCAB = 5

_CHARS = {"#": WALL, " ": OFF, "o": ON, "S": START, "G": GOAL}
_SYMS = {v: k for k, v in _CHARS.items()}

_DIRS = np.array([(-1, 0), (1, 0), (0, -1), (0, 1)])


@dataclass(frozen=True)
class MazeSpec:
    rows: int
    cols: int
    min_path_len: int

    def __post_init__(self):
        if self.rows < 2 or self.cols < 2:
            raise ValueError("maze must be at least 2x2")
        if self.min_path_len < 1:
            raise ValueError("min_path_len must be positive")

    @property
    def lattice_shape(self) -> LatticeShape:
        return LatticeShape(self.rows, self.cols, MAZE_VOCAB)


@dataclass
class AspDag:
    """All-shortest-paths DAG of a maze.

    ``dist_start``/``dist_goal`` are BFS distances (-1 where unreachable),
    ``on_path`` marks the cells on some shortest path, and ``path_counts``
    holds, per on-path cell, the exact number of shortest suffixes from that
    cell to the goal (python ints, so arbitrarily large).
    """

    length: int
    start: tuple[int, int]
    goal: tuple[int, int]
    dist_start: np.ndarray
    dist_goal: np.ndarray
    on_path: np.ndarray
    path_counts: dict[tuple[int, int], int]

    @property
    def total_paths(self) -> int:
        return self.path_counts.get(self.start, 0)

    def successors(self, cell: tuple[int, int]) -> list[tuple[int, int]]:
        r, c = cell
        d = self.dist_start[r, c]
        out = []
        for dr, dc in _DIRS:
            nr, nc = r + int(dr), c + int(dc)
            if (0 <= nr < self.dist_start.shape[0] and 0 <= nc < self.dist_start.shape[1]
                    and self.on_path[nr, nc] and self.dist_start[nr, nc] == d + 1):
                out.append((nr, nc))
        return out


def _bfs(passable: np.ndarray, source: tuple[int, int]) -> np.ndarray:
    dist = np.full(passable.shape, -1, dtype=np.int64)
    dist[source] = 0
    frontier = [source]
    while frontier:
        nxt = []
        for r, c in frontier:
            for dr, dc in _DIRS:
                nr, nc = r + int(dr), c + int(dc)
                if (0 <= nr < passable.shape[0] and 0 <= nc < passable.shape[1]
                        and passable[nr, nc] and dist[nr, nc] < 0):
                    dist[nr, nc] = dist[r, c] + 1
                    nxt.append((nr, nc))
        frontier = nxt
    return dist


def build_asp_dag(grid: np.ndarray) -> AspDag | None:
    """Bidirectional-BFS DAG of all shortest start-goal paths, or None if
    the goal is unreachable."""
    start = tuple(int(v) for v in np.argwhere(grid == START)[0])
    goal = tuple(int(v) for v in np.argwhere(grid == GOAL)[0])
    passable = grid != WALL
    dist_s = _bfs(passable, start)
    if dist_s[goal] < 0:
        return None
    dist_g = _bfs(passable, goal)
    length = int(dist_s[goal])
    on_path = (dist_s >= 0) & (dist_g >= 0) & (dist_s + dist_g == length)

    counts: dict[tuple[int, int], int] = {goal: 1}
    cells = [tuple(int(v) for v in rc) for rc in np.argwhere(on_path)]
    dag = AspDag(length, start, goal, dist_s, dist_g, on_path, counts)
    for cell in sorted(cells, key=lambda rc: -dist_s[rc]):
        if cell == goal:
            continue
        counts[cell] = sum(counts[s] for s in dag.successors(cell))
    return dag


def dag_sample_uniform(dag: AspDag, rng: np.random.Generator, k: int
                       ) -> list[list[tuple[int, int]]]:
    """k independent uniform samples over all shortest paths.

    Forward sampling from the start, weighting each successor by its exact
    suffix count, is uniform over complete paths.
    """
    if dag.total_paths < 1:
        raise ValueError("maze has no start-goal path")
    paths = []
    for _ in range(k):
        path = [dag.start]
        while path[-1] != dag.goal:
            succ = dag.successors(path[-1])
            weights = [dag.path_counts[s] for s in succ]
            total = sum(weights)
            # big-int safe categorical draw
            r = int(rng.integers(total)) if total < 2**63 else rng.random() * total
            acc = 0
            for s, w in zip(succ, weights):
                acc += w
                if r < acc:
                    path.append(s)
                    break
        paths.append(path)
    return paths


def enumerate_shortest_paths(dag: AspDag, limit: int = 100000
                             ) -> list[tuple[tuple[int, int], ...]]:
    """Exhaustive DFS enumeration of shortest paths (oracle for tests)."""
    out: list[tuple[tuple[int, int], ...]] = []

    def rec(path):
        if len(out) > limit:
            raise CapacityError(f"more than {limit} shortest paths")
        if path[-1] == dag.goal:
            out.append(tuple(path))
            return
        for s in dag.successors(path[-1]):
            path.append(s)
            rec(path)
            path.pop()

    rec([dag.start])
    return out


def maze_generate(spec: MazeSpec, rng: np.random.Generator,
                  wall_prob: float = 0.3, max_tries: int = 2000
                  ) -> tuple[np.ndarray, AspDag]:
    """Random obstacle maze whose shortest path has length >= min_path_len.

    Random wall placement (rather than a perfect-maze carver) so that
    instances typically admit many distinct shortest paths.
    """
    for _ in range(max_tries):
        grid = np.where(rng.random((spec.rows, spec.cols)) < wall_prob, WALL, OFF)
        free = np.argwhere(grid == OFF)
        if len(free) < 2:
            continue
        s_idx, g_idx = rng.choice(len(free), size=2, replace=False)
        grid[tuple(free[s_idx])] = START
        grid[tuple(free[g_idx])] = GOAL
        dag = build_asp_dag(grid)
        if dag is not None and dag.length >= spec.min_path_len:
            return grid, dag
    raise CapacityError(f"no maze matching the spec after {max_tries} tries")


# -- lattice bridge --------------------------------------------------------


def maze_to_lattice(grid: np.ndarray) -> LatticeState:
    rows, cols = grid.shape
    shape = LatticeShape(rows, cols, MAZE_VOCAB)
    flat = grid.ravel()
    cells = np.zeros(rows * cols, dtype=np.uint16)
    cells[flat == WALL] = 1 << WALL
    cells[flat == START] = 1 << START
    cells[flat == GOAL] = 1 << GOAL
    cells[(flat == OFF) | (flat == ON)] = (1 << OFF) | (1 << ON)
    return LatticeState(shape, cells, np.ones(rows * cols, dtype=bool))


def path_to_solution(grid: np.ndarray, path) -> SolutionPoint:
    rows, cols = grid.shape
    shape = LatticeShape(rows, cols, MAZE_VOCAB)
    values = np.asarray(grid, dtype=np.int16).ravel().copy()
    values[values == ON] = OFF
    for r, c in path:
        if grid[r, c] == OFF:
            values[r * cols + c] = ON
    return SolutionPoint(shape, values)


def solution_to_grid(point: SolutionPoint) -> np.ndarray:
    return point.values.astype(np.int64).reshape(point.shape.rows, point.shape.cols)


def verify_shortest_path(grid: np.ndarray, point: SolutionPoint,
                         require_shortest: bool = True) -> bool:
    """True iff the on-path cells of ``point`` trace a valid start-goal path
    (a shortest one when ``require_shortest``)."""
    rows, cols = grid.shape
    marked = solution_to_grid(point)
    base = grid.copy()
    base[base == ON] = OFF
    cleaned = marked.copy()
    cleaned[cleaned == ON] = OFF
    if not np.array_equal(cleaned, base):
        return False  # touched a wall, start, goal, or mask structure
    dag = build_asp_dag(grid)
    if dag is None:
        return False
    start, goal = dag.start, dag.goal
    on_cells = {tuple(int(v) for v in rc) for rc in np.argwhere(marked == ON)}
    cur, prev, steps = start, None, 0
    while cur != goal:
        nxt = []
        for dr, dc in _DIRS:
            nr, nc = cur[0] + int(dr), cur[1] + int(dc)
            if (nr, nc) == prev or not (0 <= nr < rows and 0 <= nc < cols):
                continue
            if (nr, nc) in on_cells or (nr, nc) == goal:
                nxt.append((nr, nc))
        if len(nxt) != 1:
            return False  # dead end or ambiguous branching
        prev, cur = cur, nxt[0]
        steps += 1
        if steps > rows * cols:
            return False
    if steps != len(on_cells) + 1:
        return False  # stray marked cells off the walked path
    return steps == dag.length or not require_shortest


# -- text format -----------------------------------------------------------


def maze_parse(text: str) -> np.ndarray:
    """Parse a maze; whitespace is significant (a space is a free cell)."""
    lines = text.split("\n")
    while lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError("empty maze text")
    cols = len(lines[0])
    grid = np.zeros((len(lines), cols), dtype=np.int64)
    for r, line in enumerate(lines):
        if len(line) != cols:
            raise ParseError(f"ragged row: expected {cols} characters, got {len(line)}",
                             line=r + 1, col=len(line))
        for c, ch in enumerate(line):
            if ch not in _CHARS:
                raise ParseError(f"invalid character {ch!r}", line=r + 1, col=c + 1)
            grid[r, c] = _CHARS[ch]
    for sym, name in ((START, "start"), (GOAL, "goal")):
        if int(np.sum(grid == sym)) != 1:
            raise ParseError(f"maze must contain exactly one {name} cell")
    return grid


def maze_serialize(grid: np.ndarray) -> str:
    return "\n".join("".join(_SYMS[int(v)] for v in row) for row in np.asarray(grid))
