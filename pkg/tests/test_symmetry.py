import numpy as np
from hypothesis import given, strategies as st

from latdeduce import lattice as lat
from latdeduce.lattice import LatticeShape, LatticeState, SolutionPoint
from latdeduce.symmetry import Symmetry, shape_preserving_elements

SHAPE = LatticeShape(3, 3, 4)


def _random_state(rng):
    return LatticeState(SHAPE, rng.integers(0, SHAPE.full_set + 1, size=9))


def test_identity_is_identity():
    rng = np.random.default_rng(0)
    sym = Symmetry.identity(4)
    st_ = _random_state(rng)
    assert sym.apply_state(st_) == st_


def test_inverse_roundtrip_states():
    rng = np.random.default_rng(1)
    for _ in range(50):
        sym = Symmetry.random(rng, 4, 3, 3)
        st_ = _random_state(rng)
        assert sym.inverse().apply_state(sym.apply_state(st_)) == st_


def test_inverse_roundtrip_solutions():
    rng = np.random.default_rng(2)
    for _ in range(50):
        sym = Symmetry.random(rng, 4, 3, 3)
        y = SolutionPoint(SHAPE, rng.integers(0, 4, size=9))
        assert sym.inverse().apply_solution(sym.apply_solution(y)) == y


def test_compose_matches_sequential_application():
    rng = np.random.default_rng(3)
    for _ in range(50):
        f = Symmetry.random(rng, 4, 3, 3)
        g = Symmetry.random(rng, 4, 3, 3)
        st_ = _random_state(rng)
        assert g.compose(f).apply_state(st_) == g.apply_state(f.apply_state(st_))


def test_nonsquare_grids_use_shape_preserving_subgroup():
    assert shape_preserving_elements(3, 3) == list(range(8))
    assert shape_preserving_elements(2, 5) == [0, 2, 4, 6]
    rng = np.random.default_rng(4)
    wide = LatticeShape(2, 5, 3)
    for _ in range(30):
        sym = Symmetry.random(rng, 3, 2, 5)
        st_ = LatticeState(wide, rng.integers(0, 8, size=10))
        out = sym.apply_state(st_)
        assert out.shape == wide
        assert sym.inverse().apply_state(out) == st_


def test_digit_perm_subset():
    rng = np.random.default_rng(5)
    for _ in range(30):
        sym = Symmetry.random(rng, 5, 3, 3, permutable=(1, 2))
        for fixed in (0, 3, 4):
            assert sym.digit_perm[fixed] == fixed


def test_symmetry_commutes_with_lattice_ops():
    rng = np.random.default_rng(6)
    for _ in range(30):
        sym = Symmetry.random(rng, 4, 3, 3)
        a, b = _random_state(rng), _random_state(rng)
        assert sym.apply_state(lat.meet(a, b)) == lat.meet(sym.apply_state(a), sym.apply_state(b))
        assert lat.leq(a, b) == lat.leq(sym.apply_state(a), sym.apply_state(b))


@given(st.integers(0, 7), st.integers(0, 7))
def test_dihedral_composition_table_closed(e1, e2):
    f = Symmetry((0, 1, 2), e1)
    g = Symmetry((0, 1, 2), e2)
    composed = g.compose(f)
    assert 0 <= composed.dihedral <= 7
    grid = np.arange(9).reshape(3, 3)
    assert np.array_equal(
        composed.apply_grid(grid), g.apply_grid(f.apply_grid(grid))
    )
