"""Grid symmetries: digit permutations composed with dihedral transforms.

A symmetry acts on lattice states and solution points by permuting grid
positions (one of the 8 square-grid transforms) and relabeling symbols.
Used for dataset-level training augmentation and for per-step wrapping at
inference; both require exact invertibility, which the tests check as
group laws.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lattice import LatticeState, ShapeMismatchError, SolutionPoint

# dihedral elements: rot in {0,1,2,3} quarter turns, then optional transpose
_IDENTITY = (0, False)


def _dihedral_coords(elem: int, r: np.ndarray, c: np.ndarray, n: int
                     ) -> tuple[np.ndarray, np.ndarray]:
    """Image of coordinates under dihedral element 0..7 on an n x n grid."""
    rot, flip = elem % 4, elem >= 4
    for _ in range(rot):  # quarter turn counterclockwise... (r,c) -> (n-1-c, r)
        r, c = n - 1 - c, r
    if flip:
        r, c = c, r
    return r, c


def _dihedral_compose(a: int, b: int) -> int:
    """Element equal to applying b first, then a."""
    n = 8  # compose on a reference grid large enough to identify the element
    pts = [(0, 0), (0, 1), (1, 0)]
    images = []
    for r, c in pts:
        r1, c1 = _dihedral_coords(b, np.array(r), np.array(c), n)
        r2, c2 = _dihedral_coords(a, r1, c1, n)
        images.append((int(r2), int(c2)))
    for e in range(8):
        if all(tuple(int(v) for v in _dihedral_coords(e, np.array(r), np.array(c), n)) == im
               for (r, c), im in zip(pts, images)):
            return e
    raise AssertionError("dihedral composition table is closed")


_DIHEDRAL_INV = [next(e for e in range(8) if _dihedral_compose(e, g) == 0)
                 for g in range(8)]


@dataclass(frozen=True)
class Symmetry:
    """digit_perm[v] is the image symbol of v; dihedral in 0..7."""

    vocab_size: int
    digit_perm: tuple[int, ...]
    dihedral: int = 0

    def __post_init__(self):
        if sorted(self.digit_perm) != list(range(self.vocab_size)):
            raise ValueError("digit_perm must be a permutation of the vocabulary")
        if not 0 <= self.dihedral < 8:
            raise ValueError("dihedral element must be in 0..7")

    @classmethod
    def identity(cls, vocab_size: int) -> "Symmetry":
        return cls(vocab_size, tuple(range(vocab_size)), 0)

    @classmethod
    def random(cls, rng: np.random.Generator, vocab_size: int,
               permute_digits: bool = True, dihedral: bool = True,
               fixed_symbols: tuple[int, ...] = ()) -> "Symmetry":
        """A fresh random symmetry.  ``fixed_symbols`` are never relabeled
        (used by domains whose channels carry distinct semantics)."""
        perm = np.arange(vocab_size)
        if permute_digits:
            movable = np.array([v for v in range(vocab_size) if v not in fixed_symbols])
            perm[movable] = movable[rng.permutation(len(movable))]
        d = int(rng.integers(8)) if dihedral else 0
        return cls(vocab_size, tuple(int(v) for v in perm), d)

    def inverse(self) -> "Symmetry":
        inv = [0] * self.vocab_size
        for v, img in enumerate(self.digit_perm):
            inv[img] = v
        return Symmetry(self.vocab_size, tuple(inv), _DIHEDRAL_INV[self.dihedral])

    def compose(self, other: "Symmetry") -> "Symmetry":
        """self after other."""
        perm = tuple(self.digit_perm[other.digit_perm[v]]
                     for v in range(self.vocab_size))
        return Symmetry(self.vocab_size, perm,
                        _dihedral_compose(self.dihedral, other.dihedral))

    # -- actions -----------------------------------------------------------

    def _position_map(self, n: int) -> np.ndarray:
        """dest[i] = source index whose content lands at position i."""
        r, c = np.divmod(np.arange(n * n), n)
        # the state at image position sigma(p) comes from p; build the
        # inverse image map for a gather
        ri, ci = _dihedral_coords(_DIHEDRAL_INV[self.dihedral], r, c, n)
        return ri * n + ci

    def apply_state(self, x: LatticeState) -> LatticeState:
        if x.shape.rows != x.shape.cols and self.dihedral % 2 == 1:
            raise ShapeMismatchError("quarter turns require a square grid")
        if x.shape.vocab_size != self.vocab_size:
            raise ShapeMismatchError("vocabulary size mismatch")
        src = self._position_map(x.shape.rows)
        bits = ((x.cells[:, None] >> np.arange(self.vocab_size, dtype=np.uint16)) & 1)
        out_bits = np.zeros_like(bits)
        out_bits[:, list(self.digit_perm)] = bits
        cells = (out_bits.astype(np.uint16)
                 << np.arange(self.vocab_size, dtype=np.uint16)).sum(axis=1)
        return LatticeState(x.shape, cells[src].astype(np.uint16), x.mask[src])

    def apply_solution(self, y: SolutionPoint) -> SolutionPoint:
        if y.shape.rows != y.shape.cols and self.dihedral % 2 == 1:
            raise ShapeMismatchError("quarter turns require a square grid")
        src = self._position_map(y.shape.rows)
        perm = np.array(self.digit_perm, dtype=np.int16)
        values = y.values.copy()
        values[y.mask] = perm[y.values[y.mask]]
        return SolutionPoint(y.shape, values[src], y.mask[src])

    def invert_state(self, x: LatticeState) -> LatticeState:
        return self.inverse().apply_state(x)

    def invert_solution(self, y: SolutionPoint) -> SolutionPoint:
        return self.inverse().apply_solution(y)
