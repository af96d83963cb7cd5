import csv

import numpy as np
import pytest

from apdiff.grid import (
    CellField,
    NodeField,
    dump_cell_csv,
    dump_node_csv,
    make_grid,
    sample_cell,
    sample_cell_vec,
    sample_node,
)

UNIT = ((1.0, 2.0), (1.0, 2.0))


def test_make_grid_m100():
    g = make_grid(UNIT, 99, 99)
    assert g.dx == pytest.approx(0.01)
    assert g.dy == pytest.approx(0.01)
    assert g.cell_xs[0] == pytest.approx(1.0)  # boundary ring cell sits on the edge
    assert g.cell_xs[-1] == pytest.approx(2.0)
    assert g.node_xs[1] == pytest.approx(1.005)  # first interior node, half a step in


def test_make_grid_m200_step():
    g = make_grid(UNIT, 199, 199)
    assert g.h == pytest.approx(0.005)


def test_make_grid_rectangular():
    g = make_grid(((0.0, 1.0), (0.0, 2.0)), 9, 19)
    assert g.dx == pytest.approx(0.1)
    assert g.dy == pytest.approx(0.1)
    assert g.h == pytest.approx(0.1)


def test_make_grid_rejects_bad_input():
    with pytest.raises(ValueError):
        make_grid(((2.0, 1.0), (1.0, 2.0)), 10, 10)
    with pytest.raises(ValueError):
        make_grid(UNIT, 1, 10)
    with pytest.raises(ValueError):
        make_grid(UNIT, 10, 0)


def test_coordinate_round_trip():
    g = make_grid(((0.3, 1.7), (2.0, 5.0)), 13, 7)
    mid_x = 0.5 * (g.node_xs[:-1] + g.node_xs[1:])
    mid_y = 0.5 * (g.node_ys[:-1] + g.node_ys[1:])
    np.testing.assert_allclose(mid_x, g.cell_xs, rtol=1e-15)
    np.testing.assert_allclose(mid_y, g.cell_ys, rtol=1e-15)


def test_ghost_nodes_outside_domain():
    g = make_grid(UNIT, 9, 9)
    assert g.node_xs[0] < g.x_min
    assert g.node_xs[-1] > g.x_max
    assert np.all(g.node_xs[1:-1] > g.x_min) and np.all(g.node_xs[1:-1] < g.x_max)


def test_index_partition():
    g = make_grid(UNIT, 5, 7)
    ring_nodes = (~g.interior_node_mask).sum()
    assert ring_nodes == 2 * (g.nx + 3) + 2 * (g.ny + 3) - 4
    ring_cells = (~g.interior_cell_mask).sum()
    assert ring_cells == 2 * (g.nx + 2) + 2 * (g.ny + 2) - 4
    assert g.interior_node_mask.sum() == (g.nx + 1) * (g.ny + 1)
    assert g.interior_cell_mask.sum() == g.nx * g.ny


def test_sample_constant_zero():
    g = make_grid(UNIT, 5, 5)
    fld = sample_node(lambda x, y: 0.0, g)
    assert np.all(fld.values == 0.0)


def test_sample_identity_function():
    g = make_grid(UNIT, 99, 99)
    fld = sample_node(lambda x, y: x, g)
    # node (0, 0) sits half a step inside the domain
    assert fld.values[1, 1] == pytest.approx(1.005)


def test_sample_cell_boundary_value():
    g = make_grid(UNIT, 99, 99)
    fld = sample_cell(lambda x, y: 1.0 + np.sin(x) ** 2 * np.sin(y) ** 2, g)
    # ring cell (-1/2, -1/2) is centered exactly at the domain corner (1, 1)
    assert fld.values[0, 0] == pytest.approx(1.0 + np.sin(1.0) ** 4, rel=1e-14)
    assert fld.values[0, 0] == pytest.approx(1.5014, abs=1e-4)


def test_sample_reports_nonfinite_with_coordinate():
    g = make_grid(UNIT, 5, 5)
    with pytest.raises(ValueError, match=r"x=.*y="):
        sample_node(lambda x, y: np.where(x > 1.5, np.inf, 1.0), g)


def test_sample_cell_vec_shapes():
    g = make_grid(UNIT, 5, 5)
    fld = sample_cell_vec(lambda x, y: (np.ones_like(x), -np.ones_like(y)), g)
    assert fld.values.shape == (g.nx + 2, g.ny + 2, 2)
    assert np.all(fld.x == 1.0) and np.all(fld.y == -1.0)


def test_field_shape_validation():
    g = make_grid(UNIT, 5, 5)
    with pytest.raises(ValueError):
        NodeField(g, np.zeros((3, 3)))
    with pytest.raises(ValueError):
        CellField(g, np.zeros(g.node_shape))


def test_csv_dumps(tmp_path):
    g = make_grid(UNIT, 3, 3)
    npath = tmp_path / "nodes.csv"
    cpath = tmp_path / "cells.csv"
    dump_node_csv(sample_node(lambda x, y: x + y, g), npath)
    dump_cell_csv(sample_cell(lambda x, y: x * y, g), cpath)
    with open(npath) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["i", "j", "x", "y", "value"]
    assert len(rows) - 1 == (g.nx + 3) * (g.ny + 3)
    first = rows[1]
    assert int(first[0]) == -1 and int(first[1]) == -1
    assert float(first[4]) == pytest.approx(float(first[2]) + float(first[3]))
    with open(cpath) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["i", "j", "xc", "yc", "value"]
    assert len(rows) - 1 == (g.nx + 2) * (g.ny + 2)
