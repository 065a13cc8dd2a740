import csv
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from wel.errors import InvalidArgument
from wel.grid import Grid2D, build_disk, build_rectangle, grid_from_descriptor, with_conformal_factor


def test_rectangle_resolution_counts_nodes_per_unit():
    g = build_rectangle((0, 0), (1, 1), resolution=9)
    assert g.h == pytest.approx(1 / 8)
    assert g.shape == (9, 9)
    assert g.interior_count == 49
    assert not g.interior_mask[0].any() and not g.interior_mask[:, -1].any()


def test_rectangle_explicit_spacing_and_origin():
    g = build_rectangle((-1.0, 2.0), (1.0, 2.0), h=0.25)
    assert g.shape == (5, 9)
    assert g.x[0, 0] == -1.0 and g.y[0, -1] == pytest.approx(4.0)
    assert g.x[3, 0] == pytest.approx(-0.25)


@pytest.mark.parametrize("size", [(1.0, 0.3333), (0.0, 1.0), (-1.0, 1.0)])
def test_rectangle_rejects_bad_sizes(size):
    with pytest.raises(InvalidArgument):
        build_rectangle((0, 0), size, h=0.1)


def test_spacing_must_be_given():
    with pytest.raises(InvalidArgument):
        build_rectangle((0, 0), (1, 1))
    with pytest.raises(InvalidArgument):
        build_rectangle((0, 0), (1, 1), h=-0.1)


@given(st.integers(4, 40), st.integers(4, 40))
def test_rectangle_interior_is_inner_block(m, n):
    g = build_rectangle((0, 0), (m * 0.125, n * 0.125), h=0.125)
    assert g.shape == (m + 1, n + 1)
    assert g.interior_count == (m - 1) * (n - 1)


def test_disk_mask_and_area():
    h = 1 / 128
    g = build_disk((0, 0), 1.0, h=h)
    r = np.hypot(g.x, g.y)
    assert np.all(r[g.interior_mask] < 1 - h / 2)
    assert np.array_equal(g.interior_mask, g.interior_mask[::-1, :])
    assert np.array_equal(g.interior_mask, g.interior_mask.T)
    expected = math.pi * (1 - h) ** 2 / h**2
    assert abs(g.interior_count - expected) / expected < 0.03


def test_disk_nodes_on_global_lattice():
    g = build_disk((0.3, -0.2), 0.5, h=0.05)
    assert g.origin[0] / g.h == pytest.approx(round(g.origin[0] / g.h))
    assert g.boundary_distance(0.3, -0.2) == pytest.approx(0.5)


def test_disk_too_small():
    with pytest.raises(InvalidArgument):
        build_disk((0, 0), 0.1, h=0.05)


def test_grid_validation():
    mask = np.zeros((5, 5), dtype=bool)
    mask[0, 2] = True
    with pytest.raises(InvalidArgument):
        Grid2D(5, 5, 0.25, (0.0, 0.0), mask)
    with pytest.raises(InvalidArgument):
        Grid2D(5, 5, 0.0, (0.0, 0.0), np.zeros((5, 5), bool))
    with pytest.raises(InvalidArgument):
        Grid2D(5, 5, 0.25, (0.0, 0.0), np.zeros((4, 5), bool))


def test_conformal_factor_fields():
    g = build_rectangle((0, 0), (1, 1), h=0.125)
    psi = 0.3 * g.x
    gc = with_conformal_factor(g, psi)
    assert g.is_flat and not gc.is_flat
    np.testing.assert_allclose(gc.volume_factor, np.exp(2 * psi))
    np.testing.assert_allclose(gc.volume_factor * gc.inverse_metric_factor, 1.0)
    with pytest.raises(InvalidArgument):
        with_conformal_factor(g, np.zeros((3, 3)))
    with pytest.raises(InvalidArgument):
        with_conformal_factor(g, np.full(g.shape, np.inf))


def test_closure_adds_neighbours():
    g = build_rectangle((0, 0), (1, 1), h=0.125)
    c = g.closure_mask
    assert c.sum() == 9 * 9 - 4  # everything but the corners


def test_points_and_nodes():
    g = build_rectangle((0, 0), (1, 1), h=0.125)
    assert g.index_of((0.26, 0.49)) == (2, 4)
    assert g.on_node((0.25, 0.5)) and not g.on_node((0.3, 0.5))
    p, moved = g.offset_point((0.5, 0.5))
    assert moved and p == (0.5625, 0.5625)
    assert g.offset_point((0.3, 0.5)) == ((0.3, 0.5), False)
    assert g.contains((1.0, 0.0)) and not g.contains((1.01, 0.5))


def test_same_lattice_and_descriptor():
    a = build_disk((0, 0), 1.0, h=1 / 16)
    b = grid_from_descriptor(a.domain, 1 / 16)
    c = build_disk((0, 0), 1.0, h=1 / 32)
    assert a.same_lattice(b) and not a.same_lattice(c)
    d = a.descriptor()
    assert d["type"] == "disk" and d["nx"] == a.nx and d["h"] == a.h
    with pytest.raises(InvalidArgument):
        grid_from_descriptor({"type": "hexagon"}, 0.1)


def test_csv_dump(tmp_path):
    g = with_conformal_factor(build_rectangle((0, 0), (1, 1), h=0.25), np.full((5, 5), 0.1))
    path = tmp_path / "g.csv"
    g.to_csv(path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["x", "y", "mask", "psi"]
    assert len(rows) == 26
    assert rows[1 + 6] == ["0.25", "0.25", "1", "0.10000000000000001"]
