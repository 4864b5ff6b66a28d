"""Candidate-set lattice over a grid of positions.

An abstract state assigns each grid position a set of still-viable
candidate symbols, ordered pointwise by inclusion.  Smaller sets are
more informative; the top state keeps every candidate alive, and a
state with an empty cell is inconsistent (bottom).  All supervision
targets for the learned deduction operator are computed with the
operations in this module.

Candidate sets are stored as 16-bit masks, so meet/join/order are
single vectorized bit operations.  States are immutable after
construction; every function here is pure.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product
from typing import Iterable, Optional, Sequence

import numpy as np


class ShapeMismatchError(ValueError):
    """Two states with different grid shapes or masks were combined."""


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
            raise ValueError(f"vocab_size must be in 1..16, got {self.vocab_size}")

    @property
    def num_cells(self) -> int:
        return self.rows * self.cols

    @property
    def full_set(self) -> int:
        """Bit mask with every candidate alive."""
        return (1 << self.vocab_size) - 1


def _as_cells(shape: LatticeShape, cells) -> np.ndarray:
    arr = np.asarray(cells, dtype=np.uint16).reshape(shape.num_cells)
    if np.any(arr > shape.full_set):
        raise ValueError("cell bit-set has bits outside the vocabulary")
    return arr


def _as_mask(shape: LatticeShape, mask) -> np.ndarray:
    if mask is None:
        return np.ones(shape.num_cells, dtype=bool)
    arr = np.asarray(mask, dtype=bool).reshape(shape.num_cells)
    return arr


@dataclass(frozen=True)
class LatticeState:
    """One candidate bit-set per position, plus an in-puzzle mask.

    Masked-out positions are normalized to the empty bit-set on
    construction and ignored by every operation.
    """

    shape: LatticeShape
    cells: np.ndarray = field(compare=False)
    mask: np.ndarray = field(compare=False)

    def __init__(self, shape: LatticeShape, cells, mask=None):
        object.__setattr__(self, "shape", shape)
        c = _as_cells(shape, cells).copy()
        m = _as_mask(shape, mask).copy()
        c[~m] = 0
        c.flags.writeable = False
        m.flags.writeable = False
        object.__setattr__(self, "cells", c)
        object.__setattr__(self, "mask", m)

    # -- constructors ------------------------------------------------

    @staticmethod
    def top(shape: LatticeShape, mask=None) -> "LatticeState":
        cells = np.full(shape.num_cells, shape.full_set, dtype=np.uint16)
        return LatticeState(shape, cells, mask)

    @staticmethod
    def all_empty(shape: LatticeShape, mask=None) -> "LatticeState":
        """The canonical bottom representative: every cell empty."""
        return LatticeState(shape, np.zeros(shape.num_cells, dtype=np.uint16), mask)

    # -- structure ---------------------------------------------------

    def same_structure(self, other: "LatticeState") -> bool:
        return self.shape == other.shape and bool(np.array_equal(self.mask, other.mask))

    def _check_structure(self, other: "LatticeState") -> None:
        if not self.same_structure(other):
            raise ShapeMismatchError("states differ in shape or in-puzzle mask")

    def __eq__(self, other):
        if not isinstance(other, LatticeState):
            return NotImplemented
        return self.same_structure(other) and bool(np.array_equal(self.cells, other.cells))

    def __hash__(self):
        return hash((self.shape, self.cells.tobytes(), self.mask.tobytes()))

    # -- queries -----------------------------------------------------

    def alive(self, cell: int) -> tuple[int, ...]:
        bits = int(self.cells[cell])
        return tuple(v for v in range(self.shape.vocab_size) if bits >> v & 1)

    def alive_counts(self) -> np.ndarray:
        return np.bitwise_count(self.cells).astype(np.int64)

    def is_bottom(self) -> bool:
        """True iff some masked-in cell has no candidate left."""
        return bool(np.any(self.cells[self.mask] == 0))

    def replace_cells(self, cells: np.ndarray) -> "LatticeState":
        return LatticeState(self.shape, cells, self.mask)

    def to_bits(self) -> np.ndarray:
        """Multi-hot float encoding, shape (num_cells, vocab_size)."""
        shifts = np.arange(self.shape.vocab_size, dtype=np.uint16)
        return ((self.cells[:, None] >> shifts) & 1).astype(np.float32)

    @staticmethod
    def from_bits(shape: LatticeShape, bits: np.ndarray, mask=None) -> "LatticeState":
        shifts = np.arange(shape.vocab_size, dtype=np.uint16)
        cells = ((np.asarray(bits) > 0.5).astype(np.uint16) << shifts).sum(axis=-1)
        return LatticeState(shape, cells, mask)


@dataclass(frozen=True)
class SolutionPoint:
    """A fully determined assignment: one symbol per masked-in position.

    Stored as symbol indices, -1 at masked-out positions.
    """

    shape: LatticeShape
    values: np.ndarray = field(compare=False)
    mask: np.ndarray = field(compare=False)

    def __init__(self, shape: LatticeShape, values, mask=None):
        object.__setattr__(self, "shape", shape)
        v = np.asarray(values, dtype=np.int16).reshape(shape.num_cells).copy()
        m = _as_mask(shape, mask).copy()
        if np.any((v[m] < 0) | (v[m] >= shape.vocab_size)):
            raise ValueError("solution value outside the vocabulary")
        v[~m] = -1
        v.flags.writeable = False
        m.flags.writeable = False
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "mask", m)

    def __eq__(self, other):
        if not isinstance(other, SolutionPoint):
            return NotImplemented
        return (
            self.shape == other.shape
            and bool(np.array_equal(self.mask, other.mask))
            and bool(np.array_equal(self.values, other.values))
        )

    def __hash__(self):
        return hash((self.shape, self.values.tobytes(), self.mask.tobytes()))

    def as_state(self) -> LatticeState:
        cells = np.zeros(self.shape.num_cells, dtype=np.uint16)
        cells[self.mask] = np.uint16(1) << self.values[self.mask].astype(np.uint16)
        return LatticeState(self.shape, cells, self.mask)


# -- lattice operations ---------------------------------------------


def meet(a: LatticeState, b: LatticeState) -> LatticeState:
    a._check_structure(b)
    return a.replace_cells(a.cells & b.cells)


def join(a: LatticeState, b: LatticeState) -> LatticeState:
    a._check_structure(b)
    return a.replace_cells(a.cells | b.cells)


def leq(a: LatticeState, b: LatticeState) -> bool:
    """Pointwise order: a is at least as informative as b."""
    a._check_structure(b)
    return bool(np.all((a.cells & ~b.cells) == 0))


def alpha(solutions: Iterable[SolutionPoint], shape: LatticeShape, mask=None) -> LatticeState:
    """Best abstraction of a solution set: per-cell union of used symbols.

    The empty set maps to the canonical all-empty bottom representative.
    """
    solutions = list(solutions)
    out = LatticeState.all_empty(shape, mask)
    for s in solutions:
        st = s.as_state()
        out._check_structure(st)
        out = join(out, st)
    return out


def gamma_enumerate(a: LatticeState, limit: int = 1_000_000) -> list[SolutionPoint]:
    """All concrete points covered by `a`, in lexicographic cell-major order.

    Exponential in general; exists for oracles and tests only, hence the
    hard cap on the product of alive counts.
    """
    idx = np.flatnonzero(a.mask)
    per_cell = [a.alive(int(i)) for i in idx]
    total = 1
    for options in per_cell:
        total *= len(options)
        if total > limit:
            raise CapacityError(f"gamma enumeration exceeds limit {limit}")
    if total == 0:
        return []
    out = []
    base = np.full(a.shape.num_cells, -1, dtype=np.int16)
    for combo in product(*per_cell):
        vals = base.copy()
        vals[idx] = combo
        out.append(SolutionPoint(a.shape, vals, a.mask))
    return out


def consistent(y: SolutionPoint, a: LatticeState) -> bool:
    """True iff y is in the concretization of a."""
    st = y.as_state()
    st._check_structure(a)
    return leq(st, a)


def supervision_target(
    x: LatticeState,
    solutions: Sequence[SolutionPoint],
    y_prev: Optional[LatticeState] = None,
) -> tuple[LatticeState, bool]:
    """Per-step training target: x meet alpha of the consistent solutions.

    When no sampled solution survives, the state is conflicted; the
    target then falls back to meet(x, y_prev) with the cached last
    non-empty target, keeping the conflict localized to the cells where
    x contradicts it.  Without a cache the all-empty bottom
    representative is used.
    """
    if not solutions:
        raise ValueError("supervision requires a nonempty solution sample")
    surviving = [y for y in solutions if consistent(y, x)]
    if surviving:
        return meet(x, alpha(surviving, x.shape, x.mask)), False
    if y_prev is not None:
        return meet(x, y_prev), True
    return LatticeState.all_empty(x.shape, x.mask), True


def alive_count(a: LatticeState) -> int:
    """Total alive candidate bits over masked-in cells."""
    return int(a.alive_counts()[a.mask].sum())


def is_solved_shape(a: LatticeState) -> bool:
    """Every masked-in cell has exactly one alive candidate."""
    return bool(np.all(a.alive_counts()[a.mask] == 1))


def singleton_values(a: LatticeState) -> SolutionPoint:
    """Read a solved-shape state back as a solution point."""
    if not is_solved_shape(a):
        raise ValueError("state is not a singleton per cell")
    vals = np.full(a.shape.num_cells, -1, dtype=np.int16)
    idx = np.flatnonzero(a.mask)
    vals[idx] = np.log2(a.cells[idx].astype(np.float64)).astype(np.int16)
    return SolutionPoint(a.shape, vals, a.mask)
