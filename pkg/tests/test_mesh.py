import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cmt_balance.mesh import build_mesh, gll_points, locate_element, locate_elements, order_elements

STRIP_LO = (-2.208, 0.0, 0.0)
STRIP_HI = (6.0, 0.0802, 0.0802)


@pytest.fixture
def strip():
    return order_elements(build_mesh(STRIP_LO, STRIP_HI, (12, 1, 1), 5))


def test_strip_mesh_shape(strip):
    assert strip.nelgt == 12
    assert strip.n_per_axis == 5
    assert list(strip.ordering) == list(range(12))


def test_single_element_mesh():
    m = order_elements(build_mesh((0, 0, 0), (1, 1, 1), (1, 1, 1), 2))
    assert m.nelgt == 1
    assert list(m.ordering) == [0]
    assert locate_element(m, (0.5, 0.5, 0.5)) == 1


@pytest.mark.parametrize(
    "lo, hi, counts, n",
    [
        ((0, 0, 0), (1, 1, 1), (0, 1, 1), 2),
        ((0, 0, 0), (0, 1, 1), (1, 1, 1), 2),
        ((0, 0, 0), (1, 1, 1), (1, 1, 1), 1),
        ((0, 0), (1, 1), (1, 1), 2),
    ],
)
def test_build_mesh_rejects_bad_input(lo, hi, counts, n):
    with pytest.raises(ValueError):
        build_mesh(lo, hi, counts, n)


def test_2x2x1_ordering_groups_x_halves():
    m = order_elements(build_mesh((0, 0, 0), (2, 2, 1), (2, 2, 1), 3))
    cells = [tuple(m.cell_of(g)) for g in range(1, 5)]
    # first bisection splits x: first two elements share i=0
    assert {c[0] for c in cells[:2]} == {0}
    assert {c[0] for c in cells[2:]} == {1}
    # within each half the two cells share a face
    for a, b in (cells[:2], cells[2:]):
        assert sum(abs(x - y) for x, y in zip(a, b)) == 1


def _connected(cells: set) -> bool:
    start = next(iter(cells))
    seen, todo = {start}, [start]
    while todo:
        c = todo.pop()
        for d in itertools.product((-1, 0, 1), repeat=3):
            if sum(map(abs, d)) != 1:
                continue
            nb = tuple(x + y for x, y in zip(c, d))
            if nb in cells and nb not in seen:
                seen.add(nb)
                todo.append(nb)
    return seen == cells


def test_4x4x1_every_prefix_connected():
    m = order_elements(build_mesh((0, 0, 0), (4, 4, 1), (4, 4, 1), 2))
    cells = [tuple(int(v) for v in m.cell_of(g)) for g in range(1, 17)]
    assert len(set(cells)) == 16
    for k in range(1, 17):
        assert _connected(set(cells[:k])), k


@settings(max_examples=40, deadline=None)
@given(st.tuples(st.integers(1, 6), st.integers(1, 6), st.integers(1, 4)))
def test_ordering_is_a_permutation_and_round_trips(counts):
    m = order_elements(build_mesh((0, 0, 0), (1, 1, 1), counts, 2))
    assert sorted(m.ordering.tolist()) == list(range(m.nelgt))
    gids = np.arange(1, m.nelgt + 1)
    cells = m.cell_of(gids)
    assert np.array_equal(m.gid_of_cell(cells[:, 0], cells[:, 1], cells[:, 2]), gids)


def test_locate_examples(strip):
    assert locate_element(strip, (-2.0, 0.04, 0.04)) == 1
    assert locate_element(strip, STRIP_LO) == 1
    assert locate_element(strip, STRIP_HI) == 12
    face = strip.edges[0][3]  # face between cells 3 and 4 (1-indexed)
    assert locate_element(strip, (face, 0.01, 0.01)) == 4


def test_locate_outside_raises(strip):
    with pytest.raises(ValueError):
        locate_element(strip, (7.0, 0.0, 0.0))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1)), min_size=1, max_size=20))
def test_located_cell_contains_point(points):
    m = order_elements(build_mesh((0, 0, 0), (1, 1, 1), (3, 4, 2), 2))
    pts = np.array(points)
    for p, g in zip(pts, locate_elements(m, pts)):
        lo, hi = m.cell_bounds(int(g))
        assert np.all(lo <= p) and np.all(p <= hi)


def test_gll_points():
    assert np.allclose(gll_points(2), [-1, 1])
    assert np.allclose(gll_points(3), [-1, 0, 1])
    assert np.allclose(gll_points(5), [-1, -np.sqrt(3 / 7), 0, np.sqrt(3 / 7), 1])


def test_element_geometry_spans_cell(strip):
    geom = strip.element_geometry([1, 7])
    assert geom.shape == (2, 3, 5, 5, 5)
    lo, hi = strip.cell_bounds(7)
    assert geom[1, 0].min() == pytest.approx(lo[0])
    assert geom[1, 0].max() == pytest.approx(hi[0])
    assert geom[1, 2].max() == pytest.approx(STRIP_HI[2])
