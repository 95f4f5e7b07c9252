import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gofd.check import power_iteration, random_mesh_1d, transfer_properties
from gofd.errors import ParameterMismatch, RankDeficiencyRisk
from gofd.grid import OverlayGrid, build_overlay
from gofd.mesh import SimplicialMesh, generate_benchmark_mesh, mesh_stats
from gofd.transfer import (PointLocator, apply_transfer, apply_transpose, build_transfer, check_rank_conditions,
                           column_sums, locate, restrict_interior, scatter_interior)

THREE = SimplicialMesh(np.array([[0.0], [0.5], [1.0]]), np.array([[0, 1], [1, 2]]))


def test_locate_examples():
    loc = PointLocator(THREE)
    e, lam = locate(loc, [0.25])
    assert e == 0 and lam == pytest.approx([0.5, 0.5])
    e, lam = locate(loc, [0.5])
    assert e == 0 and lam == pytest.approx([0.0, 1.0])
    assert locate(loc, [2.0]) is None


def test_locate_many_rows():
    ids, lam = PointLocator(THREE).locate_many(np.array([[-0.1], [0.25], [0.75], [1.1]]))
    assert list(ids) == [-1, 0, 1, -1]
    assert lam[1] == pytest.approx([0.5, 0.5]) and lam[2] == pytest.approx([0.5, 0.5])


def test_build_transfer_hat_functions():
    grid = OverlayGrid(1, (0.5,), 0.75, 3)  # nodes -0.25, 0, ..., 1.25
    tm = build_transfer(THREE, grid).matrix.toarray()
    x = grid.all_nodes()[:, 0]
    hats = np.maximum(0, 1 - np.abs(x[:, None] - np.array([0.0, 0.5, 1.0])) / 0.5)
    hats[(x < 0) | (x > 1)] = 0
    assert tm == pytest.approx(hats, abs=1e-15)
    assert tm.sum(axis=1) == pytest.approx([0, 1, 1, 1, 1, 1, 0])


def test_partition_of_unity_and_linear_reproduction():
    mesh = generate_benchmark_mesh("disk", 5)
    grid = build_overlay(mesh_stats(mesh), mesh.bounding_box())
    tm = build_transfer(mesh, grid)
    assert apply_transfer(tm, np.ones(mesh.n_vertices)) == pytest.approx(tm.covered.astype(float))
    ell = lambda x: 0.3 + 2 * x[:, 0] - x[:, 1]
    out = apply_transfer(tm, ell(mesh.vertices))
    nodes = grid.all_nodes()
    assert out[tm.covered] == pytest.approx(ell(nodes[tm.covered]), abs=1e-13)


def test_adjoint_identity():
    mesh = generate_benchmark_mesh("lshape", 3)
    tm = build_transfer(mesh, build_overlay(mesh_stats(mesh), mesh.bounding_box()))
    rng = np.random.default_rng(3)
    u, g = rng.standard_normal(mesh.n_vertices), rng.standard_normal(tm.shape[0])
    assert apply_transfer(tm, u) @ g == pytest.approx(u @ apply_transpose(tm, g), rel=1e-13)
    with pytest.raises(ParameterMismatch):
        apply_transfer(tm, np.ones(3))


def test_strict_rule_positive_columns():
    mesh = generate_benchmark_mesh("interval", 8)
    stats = mesh_stats(mesh)
    grid = build_overlay(stats, mesh.bounding_box(), rule="strict")
    tm = build_transfer(mesh, grid)
    assert np.all(column_sums(tm) > 0)
    report = check_rank_conditions(tm, stats, grid)
    assert report.full_rank and report.exact_rank == mesh.n_vertices


def test_coarse_grid_rank_risk():
    mesh = generate_benchmark_mesh("interval", 40)
    stats = mesh_stats(mesh)
    grid = build_overlay(stats, mesh.bounding_box(), spacing=10 * stats.h)
    with pytest.raises(RankDeficiencyRisk) as info:
        check_rank_conditions(build_transfer(mesh, grid), stats, grid)
    assert len(info.value.vertices) > 0


def test_restrict_and_scatter():
    mesh = generate_benchmark_mesh("interval", 6)
    grid = build_overlay(mesh_stats(mesh), mesh.bounding_box())
    tm = build_transfer(mesh, grid)
    inner = restrict_interior(tm, mesh)
    assert inner.shape == (tm.shape[0], mesh.n_vertices - 2)
    rows = np.asarray(inner.matrix.sum(axis=1)).ravel()
    assert np.all(rows <= 1 + 1e-14) and np.any((rows > 0) & (rows < 1 - 1e-12))
    u = np.sin(mesh.vertices[:, 0] * 3)
    u[mesh.boundary] = 0
    assert scatter_interior(inner, u[~mesh.boundary], mesh.n_vertices) == pytest.approx(u)


@settings(max_examples=30)
@given(st.integers(0, 2**32 - 1), st.integers(4, 40), st.floats(1.0, 1.3), st.sampled_from(["paper_default", "strict"]))
def test_transfer_bounds_1d(seed, n, factor, rule):
    mesh = random_mesh_1d(np.random.default_rng(seed), n)
    stats = mesh_stats(mesh)
    grid = build_overlay(stats, mesh.bounding_box(), rule=rule, safety_factor=factor)
    problems, tm = transfer_properties(mesh, grid, stats)
    assert problems == []
    assert power_iteration(tm.matrix) <= stats.n_val * tm.nodes_per_element_max * (1 + 1e-9)
