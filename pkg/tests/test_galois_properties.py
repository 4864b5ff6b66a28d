"""Property tests of the abstraction/concretization pair on small grids."""

import numpy as np
from hypothesis import given, settings, strategies as st

from latdeduce import lattice as lat
from latdeduce.lattice import LatticeShape, LatticeState, SolutionPoint

SHAPE = LatticeShape(2, 2, 3)

cell_bits = st.integers(min_value=0, max_value=SHAPE.full_set)
states = st.lists(cell_bits, min_size=4, max_size=4).map(
    lambda cells: LatticeState(SHAPE, cells)
)
points = st.lists(st.integers(0, 2), min_size=4, max_size=4).map(
    lambda vals: SolutionPoint(SHAPE, vals)
)
point_sets = st.lists(points, min_size=0, max_size=6)


@given(point_sets)
def test_alpha_is_sound(sols):
    a = lat.alpha(sols, SHAPE)
    assert all(lat.consistent(y, a) for y in sols)


@given(point_sets)
def test_alpha_is_best(sols):
    """No strictly smaller state still covers the whole set."""
    a = lat.alpha(sols, SHAPE)
    for cell in range(4):
        for v in a.alive(cell):
            assert any(y.values[cell] == v for y in sols)


@settings(max_examples=200)
@given(states)
def test_gamma_alpha_refines(x):
    pts = lat.gamma_enumerate(x, limit=10_000)
    assert lat.leq(lat.alpha(pts, SHAPE), x)


@given(states, point_sets)
def test_adjointness(x, sols):
    lhs = lat.leq(lat.alpha(sols, SHAPE), x)
    rhs = all(lat.consistent(y, x) for y in sols)
    assert lhs == rhs


@given(states, states)
def test_meet_join_are_lattice_ops(a, b):
    m, j = lat.meet(a, b), lat.join(a, b)
    assert lat.leq(m, a) and lat.leq(m, b)
    assert lat.leq(a, j) and lat.leq(b, j)
    assert lat.meet(a, a) == a and lat.join(a, a) == a
    assert m == lat.meet(b, a) and j == lat.join(b, a)


@given(states, point_sets.filter(bool))
def test_supervision_target_below_input(x, sols):
    target, conflict = lat.supervision_target(x, sols)
    assert lat.leq(target, x)
    surviving = [y for y in sols if lat.consistent(y, x)]
    assert conflict == (not surviving)
    if surviving:
        # every surviving solution is still reachable from the target
        assert all(lat.consistent(y, target) for y in surviving)


@given(states)
def test_gamma_of_bottom_is_empty(x):
    if x.is_bottom():
        assert lat.gamma_enumerate(x, limit=10_000) == []
