import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bistoch.torus import Torus


@st.composite
def torus_and_site(draw):
    d = draw(st.integers(1, 3))
    L = draw(st.integers(2, 6))
    t = Torus(d, L)
    x = draw(st.integers(0, t.n - 1))
    return t, x


@given(torus_and_site())
@settings(max_examples=200, deadline=None)
def test_index_coords_bijection(tx):
    t, x = tx
    assert t.index(t.coords(x)) == x


@given(torus_and_site())
@settings(max_examples=200, deadline=None)
def test_neighbor_matches_coordinate_arithmetic(tx):
    t, x = tx
    c = np.asarray(t.coords(x))
    for k in range(t.ndir):
        want = tuple((c + t.directions[k]) % t.L)
        assert t.nbr[x, k] == t.index(want)


@given(torus_and_site())
@settings(max_examples=200, deadline=None)
def test_opposite_direction_round_trip(tx):
    t, x = tx
    for k in range(t.ndir):
        assert t.nbr[t.nbr[x, k], t.opposite(k)] == x


def test_direction_indexing():
    t = Torus(3, 4)
    assert t.ndir == 6
    assert np.array_equal(t.directions[:3], np.eye(3, dtype=np.int64))
    assert np.array_equal(t.directions[3:], -np.eye(3, dtype=np.int64))
    assert list(t.axis_of) == [0, 1, 2, 0, 1, 2]
    assert list(t.sign_of) == [1, 1, 1, -1, -1, -1]
    for k in range(6):
        assert t.opposite(k) == (k + 3) % 6


def test_row_major_enumeration():
    t = Torus(2, 3)
    # last coordinate varies fastest
    assert t.index((0, 0)) == 0
    assert t.index((0, 1)) == 1
    assert t.index((1, 0)) == 3
    assert t.coords(5) == (1, 2)


def test_plaquette_pairs():
    assert Torus(1, 4).pairs == []
    assert Torus(2, 4).pairs == [(0, 1)]
    assert Torus(3, 4).pairs == [(0, 1), (0, 2), (1, 2)]
    assert Torus(3, 4).npairs == 3


def test_shift_matches_roll():
    t = Torus(2, 4)
    f = np.arange(t.n, dtype=float)
    grid = f.reshape(t.shape)
    # shift by +e_1 reads the value at x + e_1
    shifted = t.shift(f, 0).reshape(t.shape)
    assert np.array_equal(shifted, np.roll(grid, -1, axis=0))


def test_equality_and_hash():
    assert Torus(2, 4) == Torus(2, 4)
    assert Torus(2, 4) != Torus(2, 8)
    assert hash(Torus(2, 4)) == hash(Torus(2, 4))


def test_rejects_bad_sizes():
    with pytest.raises(ValueError):
        Torus(0, 4)
    with pytest.raises(ValueError):
        Torus(2, 1)
