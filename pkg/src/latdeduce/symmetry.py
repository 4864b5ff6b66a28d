"""Grid symmetries: a digit permutation composed with a dihedral transform.

Used for dataset-level training augmentation and for per-step wrapping
at inference.  Applying a symmetry and then its inverse is the identity
on states and solutions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lattice import LatticeShape, LatticeState, SolutionPoint

# dihedral element e in 0..7: rotate counterclockwise (e % 4) quarter
# turns, then flip left-right if e >= 4
_IDENTITY = 0


def _dihedral_grid(arr: np.ndarray, element: int) -> np.ndarray:
    out = np.rot90(arr, k=element % 4)
    if element >= 4:
        out = np.fliplr(out)
    return out


def _dihedral_inverse(element: int) -> int:
    probe = np.arange(9).reshape(3, 3)
    forward = _dihedral_grid(probe, element)
    for e in range(8):
        if np.array_equal(_dihedral_grid(forward, e), probe):
            return e
    raise AssertionError(f"no inverse for dihedral element {element}")


def shape_preserving_elements(rows: int, cols: int) -> list[int]:
    if rows == cols:
        return list(range(8))
    return [0, 2, 4, 6]  # identity, half turn, and the two axis flips


@dataclass(frozen=True)
class Symmetry:
    digit_perm: tuple[int, ...]
    dihedral: int

    @staticmethod
    def identity(vocab_size: int) -> "Symmetry":
        return Symmetry(tuple(range(vocab_size)), _IDENTITY)

    @staticmethod
    def random(
        rng: np.random.Generator,
        vocab_size: int,
        rows: int,
        cols: int,
        use_digit_perm: bool = True,
        use_dihedral: bool = True,
        permutable: tuple[int, ...] | None = None,
    ) -> "Symmetry":
        """Draw a uniform symmetry.

        `permutable` restricts the digit permutation to a subset of the
        vocabulary (symbols outside it stay fixed); None permutes all.
        """
        perm = list(range(vocab_size))
        if use_digit_perm:
            subset = list(range(vocab_size)) if permutable is None else list(permutable)
            shuffled = rng.permutation(subset)
            for slot, value in zip(subset, shuffled):
                perm[slot] = int(value)
        element = _IDENTITY
        if use_dihedral:
            element = int(rng.choice(shape_preserving_elements(rows, cols)))
        return Symmetry(tuple(perm), element)

    def inverse(self) -> "Symmetry":
        inv = [0] * len(self.digit_perm)
        for v, pv in enumerate(self.digit_perm):
            inv[pv] = v
        return Symmetry(tuple(inv), _dihedral_inverse(self.dihedral))

    def compose(self, first: "Symmetry") -> "Symmetry":
        """The symmetry equal to applying `first`, then `self`."""
        perm = tuple(self.digit_perm[first.digit_perm[v]] for v in range(len(self.digit_perm)))
        # identify the composed dihedral element by its action on a probe
        probe = np.arange(9).reshape(3, 3)
        target = _dihedral_grid(_dihedral_grid(probe, first.dihedral), self.dihedral)
        for e in range(8):
            if np.array_equal(_dihedral_grid(probe, e), target):
                return Symmetry(perm, e)
        raise AssertionError("dihedral composition not found")

    # -- actions -------------------------------------------------------

    def _bit_table(self, vocab_size: int) -> np.ndarray:
        table = np.zeros(1 << vocab_size, dtype=np.uint16)
        codes = np.arange(1 << vocab_size, dtype=np.uint16)
        for v, pv in enumerate(self.digit_perm):
            table |= ((codes >> v) & 1).astype(np.uint16) << pv
        return table

    def apply_grid(self, arr: np.ndarray) -> np.ndarray:
        """Dihedral action on any 2D grid array (no digit relabeling)."""
        return np.ascontiguousarray(_dihedral_grid(arr, self.dihedral))

    def apply_state(self, state: LatticeState) -> LatticeState:
        shape = state.shape
        cells = self._bit_table(shape.vocab_size)[state.cells]
        grid = self.apply_grid(cells.reshape(shape.rows, shape.cols))
        mask = self.apply_grid(state.mask.reshape(shape.rows, shape.cols))
        new_shape = LatticeShape(grid.shape[0], grid.shape[1], shape.vocab_size)
        return LatticeState(new_shape, grid.reshape(-1), mask.reshape(-1))

    def apply_solution(self, sol: SolutionPoint) -> SolutionPoint:
        shape = sol.shape
        perm = np.array(self.digit_perm, dtype=np.int16)
        values = sol.values.copy()
        alive = values >= 0
        values[alive] = perm[values[alive]]
        grid = self.apply_grid(values.reshape(shape.rows, shape.cols))
        mask = self.apply_grid(sol.mask.reshape(shape.rows, shape.cols))
        new_shape = LatticeShape(grid.shape[0], grid.shape[1], shape.vocab_size)
        return SolutionPoint(new_shape, grid.reshape(-1), mask.reshape(-1))
