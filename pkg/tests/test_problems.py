import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gofd.errors import InvalidParameter
from gofd.mesh import generate_benchmark_mesh
from gofd.problems import ConvergenceRow, ConvergenceTable, convergence_study, fit_slope, make_benchmark


def test_half_order_benchmark():
    p = make_benchmark(1, 0.5, 0)
    assert p.coefficient == pytest.approx(1.0, rel=1e-14)
    assert p.exact(np.array([[0.0]]))[0] == pytest.approx(1.0)
    assert p.rhs(np.array([[0.3], [-0.7]])) == pytest.approx([1.0, 1.0])


@given(st.integers(1, 3), st.floats(0.05, 0.95), st.integers(0, 3))
def test_exact_vanishes_outside(d, s, k):
    p = make_benchmark(d, s, k)
    rng = np.random.default_rng(0)
    x = rng.standard_normal((20, d))
    x /= np.linalg.norm(x, axis=1)[:, None]
    x *= rng.uniform(1.0, 3.0, size=(20, 1))
    assert np.all(p.exact(x) == 0)


@given(st.integers(1, 3), st.floats(0.05, 0.95))
def test_constant_rhs_for_k0(d, s):
    p = make_benchmark(d, s, 0)
    f = p.rhs(np.random.default_rng(1).uniform(-0.5, 0.5, size=(10, d)))
    assert np.ptp(f) == 0


def test_coefficient_formula():
    d, s, k = 2, 0.3, 2
    ref = 2 ** (2 * s) * math.gamma(1 + s + k) * math.gamma(d / 2 + s + k) / (math.gamma(k + 1) * math.gamma(d / 2 + k))
    assert make_benchmark(d, s, k).coefficient == pytest.approx(ref, rel=1e-13)


def test_invalid_parameters():
    for args in [(4, 0.5, 0), (1, 1.0, 0), (1, 0.5, -1)]:
        with pytest.raises(InvalidParameter):
            make_benchmark(*args)


@given(st.floats(0.1, 10), st.floats(-3, 3))
def test_fit_slope_exact(c, rate):
    h = np.array([0.1, 0.05, 0.025, 0.0125])
    assert fit_slope(h, c * h**rate) == pytest.approx(rate, abs=1e-12)


def test_synthetic_table_slope():
    table = ConvergenceTable()
    for ne in (512, 64, 128, 256):
        table.add(ConvergenceRow(ne, 1 / ne, 3.0 / ne, 0.5 / ne, 1, 0.0))
    assert [r.ne for r in table.rows] == [64, 128, 256, 512]
    assert table.slopes["l2"] == pytest.approx(1.0, abs=1e-12)


def test_half_order_l2_ratio():
    # an overlay aligned with the mesh (radius 1) keeps the discrete boundary
    # fixed under refinement, so the first-order rate shows row by row
    p = make_benchmark(1, 0.5)
    meshes = [generate_benchmark_mesh("interval", n) for n in (128, 256, 512)]
    table = convergence_study(p, meshes, safety_factor=1.0)
    ratio = table.rows[2].l2_error / table.rows[1].l2_error
    assert 0.35 < ratio < 0.65


def test_convergence_needs_three_meshes():
    with pytest.raises(ValueError):
        convergence_study(make_benchmark(1, 0.5), [generate_benchmark_mesh("interval", 8)] * 2)


def test_nonconverged_rows_are_flagged():
    p = make_benchmark(1, 0.5)
    table = convergence_study(p, [generate_benchmark_mesh("interval", n) for n in (32, 64, 128)], max_iter=3)
    assert not any(r.converged for r in table.rows)


def test_threaded_study_matches_sequential():
    p = make_benchmark(1, 0.25)
    meshes = [generate_benchmark_mesh("interval", n) for n in (32, 64, 128)]
    a = convergence_study(p, meshes)
    b = convergence_study(p, meshes, jobs=3)
    assert a.column("l2_error") == pytest.approx(b.column("l2_error"), rel=1e-12)
