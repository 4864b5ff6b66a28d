"""Problem instances and line-delimited instance bundles.

An instance carries the initial lattice state, up to K sampled
ground-truth solutions (empty at inference), and enough domain payload
to verify a proposed solution exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import maze as maze_mod
from . import sudoku as sudoku_mod
from .lattice import LatticeShape, LatticeState, SolutionPoint
from .symmetry import Symmetry

SUDOKU = "sudoku"
MAZE = "maze"


@dataclass(frozen=True)
class ProblemInstance:
    domain: str
    instance_id: str
    initial: LatticeState
    solutions: list[SolutionPoint]
    payload: dict = field(default_factory=dict)

    def __post_init__(self):
        for y in self.solutions:
            st = y.as_state()
            if not (st.shape == self.initial.shape and np.array_equal(st.mask, self.initial.mask)):
                raise ValueError("solution structure does not match the initial state")
            if np.any(st.cells & ~self.initial.cells):
                raise ValueError("solution inconsistent with the initial state")


def make_sudoku_instance(
    spec: sudoku_mod.SudokuSpec,
    givens: np.ndarray,
    solutions: list[SolutionPoint],
    instance_id: str,
) -> ProblemInstance:
    return ProblemInstance(
        domain=SUDOKU,
        instance_id=instance_id,
        initial=sudoku_mod.givens_to_state(spec, givens),
        solutions=solutions,
        payload={"spec": spec, "givens": np.asarray(givens, dtype=np.int16)},
    )


def make_maze_instance(
    grid: np.ndarray,
    solutions: list[SolutionPoint],
    instance_id: str,
    path_length: int | None = None,
) -> ProblemInstance:
    if path_length is None:
        path_length = maze_mod.build_asp_dag(grid).length
    return ProblemInstance(
        domain=MAZE,
        instance_id=instance_id,
        initial=maze_mod.maze_to_lattice(grid),
        solutions=solutions,
        payload={"grid": np.asarray(grid, dtype=np.int8), "length": path_length},
    )


def verify(instance: ProblemInstance, solution: SolutionPoint) -> bool:
    """Exact domain check of a proposed solution."""
    if instance.domain == SUDOKU:
        return sudoku_mod.verify_solution(
            instance.payload["spec"], instance.payload["givens"], solution
        )
    if instance.domain == MAZE:
        return maze_mod.verify_shortest_path(
            instance.payload["grid"], solution, instance.payload["length"]
        )
    raise ValueError(f"unknown domain {instance.domain!r}")


def augment(instance: ProblemInstance, sym: Symmetry) -> ProblemInstance:
    """Apply a symmetry to the whole instance, payload included."""
    initial = sym.apply_state(instance.initial)
    solutions = [sym.apply_solution(y) for y in instance.solutions]
    if instance.domain == SUDOKU:
        spec = instance.payload["spec"]
        givens = instance.payload["givens"].reshape(spec.side, spec.side).copy()
        fixed = givens >= 0
        perm = np.array(sym.digit_perm, dtype=np.int16)
        givens[fixed] = perm[givens[fixed]]
        payload = {"spec": spec, "givens": sym.apply_grid(givens).reshape(-1)}
    else:
        payload = dict(instance.payload)
        payload["grid"] = sym.apply_grid(instance.payload["grid"])
    return replace(instance, initial=initial, solutions=solutions, payload=payload)


def fresh_symmetry(instance: ProblemInstance, rng: np.random.Generator) -> Symmetry:
    """A random symmetry valid for the instance's domain.

    Digit permutation is disabled for mazes: the channels carry distinct
    semantics (wall/off/on/start/goal), only the grid may transform.
    """
    shape = instance.initial.shape
    return Symmetry.random(
        rng,
        shape.vocab_size,
        shape.rows,
        shape.cols,
        use_digit_perm=instance.domain == SUDOKU,
        use_dihedral=True,
    )


# -- generation --------------------------------------------------------


def generate_sudoku_instances(
    spec: sudoku_mod.SudokuSpec,
    count: int,
    rng: np.random.Generator,
    require_search: bool = False,
    prefix: str = "sudoku",
) -> list[ProblemInstance]:
    out = []
    for i in range(count):
        givens, solution = sudoku_mod.generate(spec, rng, require_search=require_search)
        out.append(make_sudoku_instance(spec, givens, [solution], f"{prefix}-{i:05d}"))
    return out


def generate_maze_instances(
    spec: maze_mod.MazeSpec,
    count: int,
    rng: np.random.Generator,
    k: int = 1,
    prefix: str = "maze",
) -> list[ProblemInstance]:
    out = []
    for i in range(count):
        grid, dag = maze_mod.generate(spec, rng)
        solutions = maze_mod.dag_sample_uniform(grid, dag, rng, k)
        out.append(make_maze_instance(grid, solutions, f"{prefix}-{i:05d}", dag.length))
    return out


# -- bundle I/O: one JSON record per line ------------------------------


def _instance_record(instance: ProblemInstance) -> dict:
    if instance.domain == SUDOKU:
        spec = instance.payload["spec"]
        return {
            "id": instance.instance_id,
            "domain": SUDOKU,
            "spec": {"box_rows": spec.box_rows, "box_cols": spec.box_cols},
            "puzzle": sudoku_mod.serialize_values(instance.payload["givens"], spec),
            "solutions": [
                sudoku_mod.serialize_values(y.values, spec) for y in instance.solutions
            ],
        }
    grid = instance.payload["grid"]
    return {
        "id": instance.instance_id,
        "domain": MAZE,
        "spec": {"rows": int(grid.shape[0]), "cols": int(grid.shape[1])},
        "puzzle": maze_mod.serialize(grid),
        "solutions": [
            maze_mod.serialize(grid, maze_mod.solution_to_marks(y, grid.shape[1]))
            for y in instance.solutions
        ],
    }


def _instance_from_record(rec: dict) -> ProblemInstance:
    if rec["domain"] == SUDOKU:
        spec = sudoku_mod.SudokuSpec(rec["spec"]["box_rows"], rec["spec"]["box_cols"])
        givens = sudoku_mod.parse(rec["puzzle"], spec)
        shape = spec.lattice_shape
        solutions = [
            SolutionPoint(shape, sudoku_mod.parse(text, spec)) for text in rec["solutions"]
        ]
        return make_sudoku_instance(spec, givens, solutions, rec["id"])
    if rec["domain"] == MAZE:
        grid, _ = maze_mod.parse(rec["puzzle"])
        solutions = []
        for text in rec["solutions"]:
            sgrid, marks = maze_mod.parse(text)
            if not np.array_equal(sgrid, grid):
                raise ValueError(f"solution grid differs from puzzle grid in {rec['id']}")
            solutions.append(_marks_to_solution(grid, marks))
        return make_maze_instance(grid, solutions, rec["id"])
    raise ValueError(f"unknown domain {rec['domain']!r}")


def _marks_to_solution(grid: np.ndarray, marks: np.ndarray) -> SolutionPoint:
    rows, cols = grid.shape
    values = np.full(rows * cols, maze_mod.V_OFF, dtype=np.int16)
    flat = grid.reshape(-1)
    values[flat == maze_mod.WALL] = maze_mod.V_WALL
    values[flat == maze_mod.START] = maze_mod.V_START
    values[flat == maze_mod.GOAL] = maze_mod.V_GOAL
    values[marks.reshape(-1)] = maze_mod.V_ON
    return SolutionPoint(LatticeShape(rows, cols, maze_mod.MAZE_VOCAB), values)


def write_bundle(path, instances: list[ProblemInstance]) -> None:
    with open(path, "w") as f:
        for inst in instances:
            f.write(json.dumps(_instance_record(inst)) + "\n")


def read_bundle(path) -> list[ProblemInstance]:
    out = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                out.append(_instance_from_record(json.loads(line)))
    return out
