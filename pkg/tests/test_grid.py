import numpy as np
import pytest
from hypothesis import given, strategies as st

from gofd.errors import DegenerateMesh
from gofd.grid import OverlayGrid, build_overlay
from gofd.mesh import MeshStats


def test_paper_default_rule_arithmetic():
    stats = MeshStats(h=0.25, a_h=0.25, n_val=2, h_bar=0.125, dim=1)
    g = build_overlay(stats, ([-1.0], [1.0]), rule="paper_default", safety_factor=1.1)
    assert g.half_width == pytest.approx(1.1)
    assert g.n == 5
    assert g.spacing == pytest.approx(0.22)


def test_strict_rule_arithmetic():
    stats = MeshStats(h=0.25, a_h=0.25, n_val=2, h_bar=0.125, dim=1)
    g = build_overlay(stats, ([-1.0], [1.0]), rule="strict", safety_factor=1.1)
    assert g.n == 9
    assert g.spacing == pytest.approx(1.1 / 9)


def test_zero_height_rejected():
    stats = MeshStats(h=0.25, a_h=0.0, n_val=2, h_bar=0.125, dim=1)
    with pytest.raises(DegenerateMesh):
        build_overlay(stats, ([-1.0], [1.0]))


def test_index_conventions():
    g = OverlayGrid(2, (0.5, -0.25), 1.0, 1)
    assert tuple(g.multi_index(0)) == (-1, -1)
    assert g.node_coordinates(0) == pytest.approx([0.5 - 1.0, -0.25 - 1.0])
    for k in range(9):
        assert g.linear_index(g.multi_index(k)) == k
    g1 = OverlayGrid(1, (0.3,), 1.0, 2)
    assert g1.node_coordinates(2) == pytest.approx([0.3])


@given(st.integers(1, 3), st.integers(1, 6), st.floats(0.1, 5.0))
def test_grid_invariants(d, n, radius):
    g = OverlayGrid(d, (0.0,) * d, radius, n)
    assert g.spacing * n == pytest.approx(radius, rel=1e-15)
    assert g.n_nodes == (2 * n + 1) ** d
    k = g.n_nodes // 3
    m = np.asarray(g.multi_index(k))
    assert g.node_coordinates(k) == pytest.approx(g.spacing * m)
