"""Candidate-set lattices over fixed grids.

The core data structure is a grid of bit-sets: every position carries the
set of symbols still considered viable there, ordered pointwise by
inclusion.  Smaller sets are more informative; a position with an empty
set witnesses inconsistency.  Everything downstream (oracles, supervision
targets, the search loop) is phrased in terms of the operations here.

Candidate sets are stored as uint16 bit masks, so the vocabulary is capped
at 16 symbols.  States are immutable after construction.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np


class ShapeMismatchError(ValueError):
    """Two lattice values with incompatible shapes or masks were combined."""


class CapacityError(RuntimeError):
    """An enumeration or retry budget was exceeded."""


@dataclass(frozen=True)
class LatticeShape:
    rows: int
    cols: int
    vocab_size: int

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError(f"grid must be nonempty, got {self.rows}x{self.cols}")
        if not 1 <= self.vocab_size <= 16:
            raise ValueError(f"vocab_size must be in [1, 16], got {self.vocab_size}")

    @property
    def num_cells(self) -> int:
        return self.rows * self.cols

    @property
    def full_bits(self) -> int:
        return (1 << self.vocab_size) - 1


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class LatticeState:
    """One candidate bit-set per grid position, plus an in-puzzle mask.

    Positions with ``mask[i] == False`` are not part of the puzzle; they are
    normalized to the empty bit-set on construction and ignored by every
    operation.
    """

    shape: LatticeShape
    cells: np.ndarray  # (num_cells,) uint16 bit masks
    mask: np.ndarray   # (num_cells,) bool

    def __post_init__(self):
        cells = np.asarray(self.cells, dtype=np.uint16).copy()
        mask = np.asarray(self.mask, dtype=bool).copy()
        if cells.shape != (self.shape.num_cells,):
            raise ShapeMismatchError(
                f"cells has shape {cells.shape}, expected ({self.shape.num_cells},)")
        if mask.shape != cells.shape:
            raise ShapeMismatchError("mask shape must match cells")
        if np.any(cells & ~np.uint16(self.shape.full_bits)):
            raise ValueError("cell bit-set uses symbols outside the vocabulary")
        cells[~mask] = 0
        object.__setattr__(self, "cells", _freeze(cells))
        object.__setattr__(self, "mask", _freeze(mask))

    # -- constructors ------------------------------------------------------

    @classmethod
    def top(cls, shape: LatticeShape, mask: np.ndarray | None = None) -> "LatticeState":
        if mask is None:
            mask = np.ones(shape.num_cells, dtype=bool)
        cells = np.where(mask, np.uint16(shape.full_bits), np.uint16(0))
        return cls(shape, cells.astype(np.uint16), np.asarray(mask, dtype=bool))

    @classmethod
    def empty(cls, shape: LatticeShape, mask: np.ndarray | None = None) -> "LatticeState":
        """The canonical all-empty bottom representative."""
        if mask is None:
            mask = np.ones(shape.num_cells, dtype=bool)
        return cls(shape, np.zeros(shape.num_cells, dtype=np.uint16),
                   np.asarray(mask, dtype=bool))

    def replace_cells(self, cells: np.ndarray) -> "LatticeState":
        return LatticeState(self.shape, cells, self.mask)

    # -- structure ---------------------------------------------------------

    def _check_compatible(self, other: "LatticeState") -> None:
        if self.shape != other.shape:
            raise ShapeMismatchError(f"shape mismatch: {self.shape} vs {other.shape}")
        if not np.array_equal(self.mask, other.mask):
            raise ShapeMismatchError("in-puzzle masks differ")

    def meet(self, other: "LatticeState") -> "LatticeState":
        self._check_compatible(other)
        return self.replace_cells(self.cells & other.cells)

    def join(self, other: "LatticeState") -> "LatticeState":
        self._check_compatible(other)
        return self.replace_cells(self.cells | other.cells)

    def leq(self, other: "LatticeState") -> bool:
        """Pointwise inclusion: self is at least as informative as other."""
        self._check_compatible(other)
        return bool(np.all((self.cells & ~other.cells) == 0))

    def alive_counts(self) -> np.ndarray:
        return POPCOUNT[self.cells]

    def alive_count(self) -> int:
        return int(POPCOUNT[self.cells].sum())

    def is_bottom(self) -> bool:
        """True iff some in-puzzle position has no candidate left."""
        return bool(np.any(self.mask & (self.cells == 0)))

    def is_solved_shape(self) -> bool:
        """True iff every in-puzzle position has exactly one candidate."""
        return bool(np.all(POPCOUNT[self.cells[self.mask]] == 1))

    def to_multihot(self) -> np.ndarray:
        """(num_cells, vocab_size) float array of alive bits."""
        v = self.shape.vocab_size
        bits = (self.cells[:, None] >> np.arange(v, dtype=np.uint16)) & 1
        return bits.astype(np.float64)

    def __eq__(self, other) -> bool:
        if not isinstance(other, LatticeState):
            return NotImplemented
        return (self.shape == other.shape
                and np.array_equal(self.cells, other.cells)
                and np.array_equal(self.mask, other.mask))

    def __hash__(self):
        return hash((self.shape, self.cells.tobytes(), self.mask.tobytes()))


POPCOUNT = np.array([bin(i).count("1") for i in range(1 << 16)], dtype=np.uint8)


@dataclass(frozen=True)
class SolutionPoint:
    """A fully determined assignment: one symbol per in-puzzle position.

    ``values[i]`` is the 0-based symbol at position i, or -1 where the
    position is masked out.
    """

    shape: LatticeShape
    values: np.ndarray  # (num_cells,) int16, -1 at masked-out positions
    mask: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.int16).copy()
        mask = self.mask
        if mask is None:
            mask = values >= 0
        mask = np.asarray(mask, dtype=bool).copy()
        if values.shape != (self.shape.num_cells,):
            raise ShapeMismatchError(
                f"values has shape {values.shape}, expected ({self.shape.num_cells},)")
        if np.any((values[mask] < 0) | (values[mask] >= self.shape.vocab_size)):
            raise ValueError("solution value outside the vocabulary")
        values[~mask] = -1
        object.__setattr__(self, "values", _freeze(values))
        object.__setattr__(self, "mask", _freeze(mask))

    def to_state(self) -> LatticeState:
        cells = np.zeros(self.shape.num_cells, dtype=np.uint16)
        cells[self.mask] = np.uint16(1) << self.values[self.mask].astype(np.uint16)
        return LatticeState(self.shape, cells, self.mask)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SolutionPoint):
            return NotImplemented
        return (self.shape == other.shape
                and np.array_equal(self.values, other.values)
                and np.array_equal(self.mask, other.mask))

    def __hash__(self):
        return hash((self.shape, self.values.tobytes(), self.mask.tobytes()))


# -- abstraction / concretization -----------------------------------------


def alpha(solutions, shape: LatticeShape,
          mask: np.ndarray | None = None) -> LatticeState:
    """Best abstraction of a set of solution points.

    Each position collects the union of symbols the solutions assign there.
    The empty set maps to the canonical all-empty representative.
    """
    solutions = list(solutions)
    if not solutions:
        return LatticeState.empty(shape, mask)
    ref = solutions[0]
    cells = np.zeros(shape.num_cells, dtype=np.uint16)
    for s in solutions:
        if s.shape != shape or not np.array_equal(s.mask, ref.mask):
            raise ShapeMismatchError("solutions must share shape and mask")
        cells[s.mask] |= np.uint16(1) << s.values[s.mask].astype(np.uint16)
    return LatticeState(shape, cells, ref.mask)


def gamma_enumerate(a: LatticeState, limit: int = 10000) -> list[SolutionPoint]:
    """Enumerate every solution point compatible with ``a``.

    Exponential in general; exists for oracles and tests only.  Raises
    CapacityError when the Cartesian product would exceed ``limit``.
    Results come out in lexicographic order of the per-cell symbol choices.
    """
    idx = np.flatnonzero(a.mask)
    counts = POPCOUNT[a.cells[idx]].astype(np.int64)
    if np.any(counts == 0):
        return []
    total = 1
    for c in counts:
        total *= int(c)
        if total > limit:
            raise CapacityError(
                f"gamma would enumerate more than limit={limit} points")
    choices = [[v for v in range(a.shape.vocab_size) if a.cells[i] >> v & 1]
               for i in idx]
    out = []
    for combo in itertools.product(*choices):
        values = np.full(a.shape.num_cells, -1, dtype=np.int16)
        values[idx] = combo
        out.append(SolutionPoint(a.shape, values, a.mask))
    return out


def consistent(y: SolutionPoint, a: LatticeState) -> bool:
    """True iff y's symbol is alive at every in-puzzle position of ``a``."""
    if y.shape != a.shape or not np.array_equal(y.mask, a.mask):
        raise ShapeMismatchError("solution and state must share shape and mask")
    idx = np.flatnonzero(a.mask)
    bits = np.uint16(1) << y.values[idx].astype(np.uint16)
    return bool(np.all(a.cells[idx] & bits))


def supervision_target(x: LatticeState, solutions, y_prev: LatticeState | None = None
                       ) -> tuple[LatticeState, bool]:
    """Per-step training target for a state x given sampled solutions.

    Keeps only the candidates used by some solution still consistent with x.
    When no solution survives, the step is a conflict; the target then falls
    back to ``x ⊓ y_prev`` (the last non-conflicted target) so the pressure
    toward zero stays localized to the truly dead positions, or to the
    all-empty representative if no previous target exists.
    """
    solutions = list(solutions)
    if not solutions:
        raise ValueError("supervision requires at least one ground-truth solution")
    surviving = [y for y in solutions if consistent(y, x)]
    if surviving:
        return x.meet(alpha(surviving, x.shape, x.mask)), False
    if y_prev is not None:
        return x.meet(y_prev), True
    return LatticeState.empty(x.shape, x.mask), True
