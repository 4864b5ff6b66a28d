"""Maze instances: generation, all-shortest-paths DAG, sampling, text I/O.

A maze solution marks the free cells lying on one shortest start-goal
path.  The lattice vocabulary per cell is {wall, off-path, on-path,
start, goal}: walls and the start/goal cells are pinned singletons in
the initial state, and every free cell starts with both off-path and
on-path alive.

The all-shortest-paths DAG supports exact big-integer path counting and
uniform sampling, which is what multi-solution supervision draws from.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .lattice import CapacityError, LatticeShape, LatticeState, SolutionPoint
from .sudoku import ParseError

# grid cell codes
WALL, FREE, START, GOAL = 0, 1, 2, 3
# lattice vocabulary
V_WALL, V_OFF, V_ON, V_START, V_GOAL = 0, 1, 2, 3, 4
MAZE_VOCAB = 5

_GRID_CHARS = {"#": WALL, " ": FREE, "S": START, "G": GOAL}
_NEIGHBORS = ((-1, 0), (1, 0), (0, -1), (0, 1))


@dataclass(frozen=True)
class MazeSpec:
    rows: int
    cols: int
    min_path_len: int

    @property
    def lattice_shape(self) -> LatticeShape:
        return LatticeShape(self.rows, self.cols, MAZE_VOCAB)


def _bfs_dists(grid: np.ndarray, source: tuple[int, int]) -> np.ndarray:
    rows, cols = grid.shape
    dist = np.full(grid.shape, -1, dtype=np.int64)
    dist[source] = 0
    q = deque([source])
    while q:
        r, c = q.popleft()
        for dr, dc in _NEIGHBORS:
            nr, nc = r + dr, c + dc
            if 0 <= nr < rows and 0 <= nc < cols and grid[nr, nc] != WALL and dist[nr, nc] < 0:
                dist[nr, nc] = dist[r, c] + 1
                q.append((nr, nc))
    return dist


def find_endpoints(grid: np.ndarray) -> tuple[tuple[int, int], tuple[int, int]]:
    starts = list(zip(*np.nonzero(grid == START)))
    goals = list(zip(*np.nonzero(grid == GOAL)))
    if len(starts) != 1 or len(goals) != 1:
        raise ValueError(f"expected exactly one start and one goal, got {len(starts)}/{len(goals)}")
    return tuple(map(int, starts[0])), tuple(map(int, goals[0]))


@dataclass(frozen=True)
class AspDag:
    """All-shortest-paths DAG of a maze.

    A non-wall cell is on some shortest path iff
    dist_from_start + dist_to_goal equals the shortest length.
    `paths_to_goal` holds exact (big-integer) counts per cell, so the
    count at the start is the total number of shortest paths.
    """

    length: int
    dist_from_start: np.ndarray
    dist_to_goal: np.ndarray
    on_dag: np.ndarray
    paths_to_goal: dict[tuple[int, int], int]

    @property
    def total_paths(self) -> int:
        start = tuple(map(int, np.argwhere(self.dist_from_start == 0)[0]))
        return self.paths_to_goal.get(start, 0)


def build_asp_dag(grid: np.ndarray) -> AspDag:
    start, goal = find_endpoints(grid)
    ds = _bfs_dists(grid, start)
    dg = _bfs_dists(grid, goal)
    if ds[goal] < 0:
        raise ValueError("goal unreachable from start")
    length = int(ds[goal])
    on_dag = (ds >= 0) & (dg >= 0) & (ds + dg == length)

    counts: dict[tuple[int, int], int] = {goal: 1}
    cells = sorted(zip(*np.nonzero(on_dag)), key=lambda rc: -int(ds[rc]))
    rows, cols = grid.shape
    for r, c in cells:
        r, c = int(r), int(c)
        if (r, c) == goal:
            continue
        total = 0
        for dr, dc in _NEIGHBORS:
            nr, nc = r + dr, c + dc
            if 0 <= nr < rows and 0 <= nc < cols and on_dag[nr, nc] and ds[nr, nc] == ds[r, c] + 1:
                total += counts[(nr, nc)]
        counts[(r, c)] = total
    return AspDag(length, ds, dg, on_dag, counts)


def dag_successors(dag: AspDag, cell: tuple[int, int]) -> list[tuple[int, int]]:
    r, c = cell
    rows, cols = dag.on_dag.shape
    out = []
    for dr, dc in _NEIGHBORS:
        nr, nc = r + dr, c + dc
        if 0 <= nr < rows and 0 <= nc < cols and dag.on_dag[nr, nc]:
            if dag.dist_from_start[nr, nc] == dag.dist_from_start[r, c] + 1:
                out.append((nr, nc))
    return out


def enumerate_shortest_paths(grid: np.ndarray, limit: int = 100_000) -> list[list[tuple[int, int]]]:
    """Every shortest path by exhaustive DFS; oracle for the DAG counts."""
    start, goal = find_endpoints(grid)
    dag = build_asp_dag(grid)
    paths: list[list[tuple[int, int]]] = []

    def walk(cell, acc):
        if cell == goal:
            paths.append(acc.copy())
            if len(paths) > limit:
                raise CapacityError(f"more than {limit} shortest paths")
            return
        for nxt in dag_successors(dag, cell):
            acc.append(nxt)
            walk(nxt, acc)
            acc.pop()

    walk(start, [start])
    return paths


def sample_shortest_path(dag: AspDag, rng: np.random.Generator) -> list[tuple[int, int]]:
    """One uniform sample over all shortest paths.

    Forward walk from the start, choosing each successor with
    probability proportional to its downstream path count.
    """
    if dag.total_paths < 1:
        raise ValueError("maze has no shortest path to sample")
    cell = tuple(map(int, np.argwhere(dag.dist_from_start == 0)[0]))
    goal = tuple(map(int, np.argwhere(dag.dist_to_goal == 0)[0]))
    path = [cell]
    while cell != goal:
        succ = dag_successors(dag, cell)
        weights = [dag.paths_to_goal[s] for s in succ]
        total = sum(weights)
        # integer draw keeps big-integer weights exact
        pick = int(rng.integers(total))
        for s, w in zip(succ, weights):
            if pick < w:
                cell = s
                break
            pick -= w
        path.append(cell)
    return path


def dag_sample_uniform(
    grid: np.ndarray, dag: AspDag, rng: np.random.Generator, k: int
) -> list[SolutionPoint]:
    return [path_to_solution(grid, sample_shortest_path(dag, rng)) for _ in range(k)]


def generate(
    spec: MazeSpec, rng: np.random.Generator, max_tries: int = 5000
) -> tuple[np.ndarray, AspDag]:
    """Random-obstacle maze whose shortest path is at least min_path_len."""
    for _ in range(max_tries):
        wall_p = rng.uniform(0.2, 0.4)
        grid = np.where(rng.random((spec.rows, spec.cols)) < wall_p, WALL, FREE).astype(np.int8)
        free = np.argwhere(grid == FREE)
        if len(free) < 2:
            continue
        si, gi = rng.choice(len(free), size=2, replace=False)
        start, goal = tuple(free[si]), tuple(free[gi])
        grid[start] = START
        grid[goal] = GOAL
        ds = _bfs_dists(grid, start)
        if ds[goal] < spec.min_path_len:
            continue
        return grid, build_asp_dag(grid)
    raise CapacityError(f"no maze found in {max_tries} tries for {spec}")


# -- lattice mapping --------------------------------------------------


def maze_to_lattice(grid: np.ndarray) -> LatticeState:
    rows, cols = grid.shape
    shape = LatticeShape(rows, cols, MAZE_VOCAB)
    cells = np.empty(rows * cols, dtype=np.uint16)
    flat = grid.reshape(-1)
    cells[flat == WALL] = 1 << V_WALL
    cells[flat == FREE] = (1 << V_OFF) | (1 << V_ON)
    cells[flat == START] = 1 << V_START
    cells[flat == GOAL] = 1 << V_GOAL
    return LatticeState(shape, cells)


def path_to_solution(grid: np.ndarray, path: list[tuple[int, int]]) -> SolutionPoint:
    rows, cols = grid.shape
    shape = LatticeShape(rows, cols, MAZE_VOCAB)
    values = np.full(rows * cols, V_OFF, dtype=np.int16)
    flat = grid.reshape(-1)
    values[flat == WALL] = V_WALL
    values[flat == START] = V_START
    values[flat == GOAL] = V_GOAL
    for r, c in path:
        i = r * cols + c
        if flat[i] == FREE:
            values[i] = V_ON
    return SolutionPoint(shape, values)


def solution_to_marks(solution: SolutionPoint, cols: int) -> np.ndarray:
    return (solution.values.reshape(-1, cols) == V_ON)


def verify_shortest_path(grid: np.ndarray, solution: SolutionPoint, length: int | None = None) -> bool:
    """The marked cells form a simple shortest path from start to goal."""
    start, goal = find_endpoints(grid)
    if length is None:
        ds = _bfs_dists(grid, start)
        if ds[goal] < 0:
            return False
        length = int(ds[goal])
    vals = solution.values.reshape(grid.shape)
    expect = np.full(grid.shape, V_OFF, dtype=np.int16)
    expect[grid == WALL] = V_WALL
    expect[grid == START] = V_START
    expect[grid == GOAL] = V_GOAL
    # fixed cells must be unchanged and marks must sit on free cells only
    if np.any(vals[grid != FREE] != expect[grid != FREE]):
        return False
    if np.any((vals == V_ON) & (grid != FREE)):
        return False
    marked = {start, goal} | {tuple(map(int, rc)) for rc in np.argwhere(vals == V_ON)}
    if len(marked) != length + 1:
        return False
    prev, cur = None, start
    for _ in range(length):
        nxt = [
            (cur[0] + dr, cur[1] + dc)
            for dr, dc in _NEIGHBORS
            if (cur[0] + dr, cur[1] + dc) in marked and (cur[0] + dr, cur[1] + dc) != prev
        ]
        if len(nxt) != 1:
            return False
        prev, cur = cur, nxt[0]
    return cur == goal


# -- text format -------------------------------------------------------


def parse(text: str) -> tuple[np.ndarray, np.ndarray]:
    """Parse a maze (optionally with 'o' path marks).

    Returns (grid, on_path) where on_path is all-False for an unsolved
    maze.  Whitespace is significant: a space is a free cell.
    """
    lines = text.split("\n")
    while lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError("empty maze text")
    cols = len(lines[0])
    grid = np.empty((len(lines), cols), dtype=np.int8)
    on_path = np.zeros((len(lines), cols), dtype=bool)
    for r, line in enumerate(lines):
        if len(line) != cols:
            raise ParseError(f"expected {cols} characters, got {len(line)}", line=r + 1)
        for c, ch in enumerate(line):
            if ch == "o":
                grid[r, c] = FREE
                on_path[r, c] = True
            elif ch in _GRID_CHARS:
                grid[r, c] = _GRID_CHARS[ch]
            else:
                raise ParseError(f"invalid character {ch!r}", line=r + 1, col=c + 1)
    find_endpoints(grid)
    return grid, on_path


def serialize(grid: np.ndarray, on_path: np.ndarray | None = None) -> str:
    chars = {WALL: "#", FREE: " ", START: "S", GOAL: "G"}
    rows = []
    for r in range(grid.shape[0]):
        row = []
        for c in range(grid.shape[1]):
            if on_path is not None and on_path[r, c] and grid[r, c] == FREE:
                row.append("o")
            else:
                row.append(chars[int(grid[r, c])])
        rows.append("".join(row))
    return "\n".join(rows)
