"""Problem instances and dataset bundles.

An instance pairs an initial lattice state with up to K sampled
ground-truth solutions (empty at inference time).  Bundles are
line-delimited JSON records carrying the id, the puzzle text, and the
solution texts, so a dataset is reproducible from (seed, spec) and
diffable as plain text.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import maze as mz
from . import sudoku as sd
from .lattice import LatticeState, SolutionPoint, consistent
from .symmetry import Symmetry

SUDOKU = "sudoku"
MAZE = "maze"


@dataclass(frozen=True)
class ProblemInstance:
    domain: str
    instance_id: str
    initial: LatticeState
    solutions: tuple[SolutionPoint, ...]
    puzzle_text: str
    spec_params: dict = field(default_factory=dict)

    def __post_init__(self):
        for y in self.solutions:
            if not consistent(y, self.initial):
                raise ValueError(f"{self.instance_id}: solution inconsistent with puzzle")


def sudoku_instance(spec: sd.SudokuSpec, givens: np.ndarray, instance_id: str,
                    with_solution: bool = True) -> ProblemInstance:
    solutions: tuple[SolutionPoint, ...] = ()
    if with_solution:
        res = sd.oracle_solve(spec, givens, cap=2)
        if len(res.solutions) != 1:
            raise ValueError(f"{instance_id}: puzzle does not have a unique solution")
        solutions = (sd.grid_to_solution(spec, res.solutions[0]),)
    return ProblemInstance(
        domain=SUDOKU, instance_id=instance_id,
        initial=sd.givens_to_lattice(spec, givens),
        solutions=solutions,
        puzzle_text=sd.sudoku_serialize(givens),
        spec_params={"box_rows": spec.box_rows, "box_cols": spec.box_cols})


def maze_instance(grid: np.ndarray, dag: mz.AspDag | None, instance_id: str,
                  k_solutions: int, rng: np.random.Generator | None = None
                  ) -> ProblemInstance:
    solutions: tuple[SolutionPoint, ...] = ()
    if k_solutions > 0:
        assert dag is not None and rng is not None
        paths = mz.dag_sample_uniform(dag, rng, k_solutions)
        solutions = tuple(mz.path_to_solution(grid, p) for p in paths)
    return ProblemInstance(
        domain=MAZE, instance_id=instance_id,
        initial=mz.maze_to_lattice(grid),
        solutions=solutions,
        puzzle_text=mz.maze_serialize(grid),
        spec_params={"rows": int(grid.shape[0]), "cols": int(grid.shape[1])})


def generate_dataset(domain: str, spec, count: int, k_solutions: int,
                     rng: np.random.Generator, require_search: bool = False,
                     id_prefix: str = "inst") -> list[ProblemInstance]:
    out = []
    for i in range(count):
        name = f"{id_prefix}-{i:05d}"
        if domain == SUDOKU:
            givens = sd.sudoku_generate(spec, rng, require_search=require_search)
            out.append(sudoku_instance(spec, givens, name,
                                       with_solution=k_solutions > 0))
        elif domain == MAZE:
            grid, dag = mz.maze_generate(spec, rng)
            out.append(maze_instance(grid, dag, name, k_solutions, rng))
        else:
            raise ValueError(f"unknown domain {domain!r}")
    return out


def augment_instance(inst: ProblemInstance, rng: np.random.Generator) -> ProblemInstance:
    """Wrap an instance in a fresh random symmetry.

    Sudoku uses digit permutation plus the dihedral group; maze keeps its
    symbol channels fixed (they carry distinct semantics) and only applies
    grid transforms.
    """
    v = inst.initial.shape.vocab_size
    if inst.domain == SUDOKU:
        sym = Symmetry.random(rng, v, permute_digits=True, dihedral=True)
    else:
        sym = Symmetry.random(rng, v, permute_digits=False, dihedral=True)
    return ProblemInstance(
        domain=inst.domain, instance_id=inst.instance_id + "+aug",
        initial=sym.apply_state(inst.initial),
        solutions=tuple(sym.apply_solution(y) for y in inst.solutions),
        puzzle_text=inst.puzzle_text, spec_params=dict(inst.spec_params))


# -- bundle I/O ------------------------------------------------------------


def solution_text(inst_domain: str, y: SolutionPoint) -> str:
    if inst_domain == SUDOKU:
        return sd.sudoku_serialize(sd.solution_to_grid(y))
    return mz.maze_serialize(mz.solution_to_grid(y))


def write_bundle(path, instances) -> None:
    with open(path, "w") as f:
        for inst in instances:
            rec = {"id": inst.instance_id, "domain": inst.domain,
                   "spec": inst.spec_params, "puzzle": inst.puzzle_text,
                   "solutions": [solution_text(inst.domain, y) for y in inst.solutions]}
            f.write(json.dumps(rec) + "\n")


def read_bundle(path) -> list[ProblemInstance]:
    out = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if rec["domain"] == SUDOKU:
                spec = sd.SudokuSpec(rec["spec"]["box_rows"], rec["spec"]["box_cols"])
                givens = sd.sudoku_parse(spec, rec["puzzle"])
                solutions = tuple(
                    sd.grid_to_solution(spec, sd.sudoku_parse(spec, t))
                    for t in rec["solutions"])
                initial = sd.givens_to_lattice(spec, givens)
            elif rec["domain"] == MAZE:
                grid = mz.maze_parse(rec["puzzle"])
                initial = mz.maze_to_lattice(grid)
                solutions = tuple(
                    mz.SolutionPoint(initial.shape,
                                     mz.maze_parse(t).astype(np.int16).ravel())
                    for t in rec["solutions"])
            else:
                raise ValueError(f"unknown domain {rec['domain']!r}")
            out.append(ProblemInstance(rec["domain"], rec["id"], initial,
                                       solutions, rec["puzzle"], rec["spec"]))
    return out
