import numpy as np
import pytest

from latdeduce import lattice as lat
from latdeduce.lattice import (
    CapacityError,
    LatticeShape,
    LatticeState,
    ShapeMismatchError,
    SolutionPoint,
)

S22 = LatticeShape(2, 2, 3)


def test_shape_validation():
    with pytest.raises(ValueError):
        LatticeShape(0, 2, 3)
    with pytest.raises(ValueError):
        LatticeShape(2, 2, 17)
    assert LatticeShape(4, 4, 4).num_cells == 16
    assert LatticeShape(2, 2, 4).full_set == 0b1111


def test_state_construction_and_immutability():
    st = LatticeState(S22, [0b111, 0b010, 0b001, 0b110])
    assert st.alive(0) == (0, 1, 2)
    assert st.alive(1) == (1,)
    with pytest.raises(ValueError):
        st.cells[0] = 0
    with pytest.raises(ValueError):
        LatticeState(S22, [0b1000, 0, 0, 0])  # bit outside vocab


def test_masked_out_cells_normalize_to_empty():
    st = LatticeState(S22, [0b111] * 4, mask=[True, False, True, False])
    assert st.cells[1] == 0 and st.cells[3] == 0
    # an equal state built from already-zeroed cells compares equal
    assert st == LatticeState(S22, [0b111, 0, 0b111, 0], mask=st.mask)


def test_top_and_bottom():
    top = LatticeState.top(S22)
    assert np.all(top.cells == S22.full_set)
    assert not top.is_bottom()
    assert LatticeState.all_empty(S22).is_bottom()
    # any state with one empty masked-in cell is a bottom representative
    assert LatticeState(S22, [0b111, 0, 0b111, 0b111]).is_bottom()


def test_meet_join_leq():
    a = LatticeState(S22, [0b110, 0b011, 0b111, 0b001])
    b = LatticeState(S22, [0b011, 0b011, 0b100, 0b011])
    m = lat.meet(a, b)
    j = lat.join(a, b)
    assert list(m.cells) == [0b010, 0b011, 0b100, 0b001]
    assert list(j.cells) == [0b111, 0b011, 0b111, 0b011]
    assert lat.leq(m, a) and lat.leq(m, b)
    assert lat.leq(a, j) and lat.leq(b, j)
    assert not lat.leq(a, b)


def test_structure_mismatch_raises():
    a = LatticeState.top(S22)
    b = LatticeState.top(LatticeShape(2, 2, 4))
    with pytest.raises(ShapeMismatchError):
        lat.meet(a, b)
    c = LatticeState.top(S22, mask=[True, True, True, False])
    with pytest.raises(ShapeMismatchError):
        lat.leq(a, c)


def test_solution_point_roundtrip():
    y = SolutionPoint(S22, [0, 2, 1, 0])
    st = y.as_state()
    assert list(st.cells) == [0b001, 0b100, 0b010, 0b001]
    assert lat.singleton_values(st) == y
    with pytest.raises(ValueError):
        SolutionPoint(S22, [0, 3, 1, 0])  # value outside vocab


def test_alpha_of_solutions():
    ys = [SolutionPoint(S22, [0, 1, 2, 0]), SolutionPoint(S22, [1, 1, 2, 2])]
    a = lat.alpha(ys, S22)
    assert list(a.cells) == [0b011, 0b010, 0b100, 0b101]
    assert lat.alpha([], S22) == LatticeState.all_empty(S22)


def test_gamma_enumerate_counts_and_order():
    a = LatticeState(S22, [0b011, 0b001, 0b110, 0b001])
    pts = lat.gamma_enumerate(a)
    assert len(pts) == 4
    assert [tuple(p.values) for p in pts] == [
        (0, 0, 1, 0),
        (0, 0, 2, 0),
        (1, 0, 1, 0),
        (1, 0, 2, 0),
    ]
    assert lat.gamma_enumerate(LatticeState.all_empty(S22)) == []
    with pytest.raises(CapacityError):
        lat.gamma_enumerate(LatticeState.top(LatticeShape(4, 4, 3)), limit=100)


def test_to_bits_from_bits_roundtrip():
    st = LatticeState(S22, [0b101, 0b010, 0b111, 0b001], mask=[True, True, True, False])
    bits = st.to_bits()
    assert bits.shape == (4, 3)
    assert LatticeState.from_bits(S22, bits, st.mask) == st


def test_supervision_target_consistent_case():
    x = LatticeState(S22, [0b011, 0b111, 0b110, 0b111])
    y1 = SolutionPoint(S22, [0, 1, 2, 0])
    y2 = SolutionPoint(S22, [1, 1, 1, 2])
    y3 = SolutionPoint(S22, [2, 0, 1, 1])  # inconsistent: cell 0 has no symbol 2
    target, conflict = lat.supervision_target(x, [y1, y2, y3])
    assert not conflict
    assert list(target.cells) == [0b011, 0b010, 0b110, 0b101]
    assert lat.leq(target, x)


def test_supervision_target_conflict_fallbacks():
    x = LatticeState(S22, [0b100, 0b111, 0b111, 0b111])
    y = SolutionPoint(S22, [0, 1, 2, 0])  # killed by cell 0
    target, conflict = lat.supervision_target(x, [y])
    assert conflict
    assert target == LatticeState.all_empty(S22)

    cached = LatticeState(S22, [0b001, 0b010, 0b100, 0b001])
    target2, conflict2 = lat.supervision_target(x, [y], y_prev=cached)
    assert conflict2
    # conflict stays localized: only the contradicting cell goes empty
    assert list(target2.cells) == [0, 0b010, 0b100, 0b001]


def test_supervision_target_requires_solutions():
    with pytest.raises(ValueError):
        lat.supervision_target(LatticeState.top(S22), [])


def test_counting_helpers():
    st = LatticeState(S22, [0b011, 0b001, 0b001, 0b001])
    assert lat.alive_count(st) == 5
    assert not lat.is_solved_shape(st)
    solved = LatticeState(S22, [0b010, 0b001, 0b100, 0b001])
    assert lat.is_solved_shape(solved)
    assert tuple(lat.singleton_values(solved).values) == (1, 0, 2, 0)
