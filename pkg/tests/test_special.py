import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st

from gofd.special import gamma, jacobi_polynomial, log_gamma


def explicit_jacobi(k, a, b, x):
    """Finite binomial sum evaluated at 50 digits."""
    with mpmath.workdps(50):
        x = mpmath.mpf(x)
        return sum(mpmath.binomial(k + a, k - m) * mpmath.binomial(k + b, m)
                   * ((x - 1) / 2) ** m * ((x + 1) / 2) ** (k - m) for m in range(k + 1))


def test_gamma_values():
    assert gamma(1.0) == pytest.approx(1.0, abs=1e-15)
    assert gamma(2.0) == pytest.approx(1.0, abs=1e-15)
    assert gamma(0.5) == pytest.approx(1.7724538509055159, rel=1e-15)
    assert math.exp(log_gamma(0.5)) == pytest.approx(float(mpmath.sqrt(mpmath.pi)), rel=1e-15)


@given(st.floats(0.5, 30.0))
def test_functional_equation(x):
    assert math.exp(log_gamma(x + 1) - log_gamma(x)) == pytest.approx(x, rel=1e-13)


def test_jacobi_examples():
    assert jacobi_polynomial(0, 0.3, 0.7, 0.42) == pytest.approx(1.0)
    assert jacobi_polynomial(1, 0.5, 0.0, 1.0) == pytest.approx(1.5)


@pytest.mark.parametrize("k", range(6))
@pytest.mark.parametrize("a,b", [(0.25, -0.5), (0.5, 0.0), (0.75, 0.5)])
def test_jacobi_endpoint(k, a, b):
    expected = math.exp(log_gamma(k + a + 1) - log_gamma(k + 1) - log_gamma(a + 1))
    assert jacobi_polynomial(k, a, b, 1.0) == pytest.approx(expected, rel=1e-13)


@given(st.integers(0, 6), st.floats(0.05, 0.95), st.floats(-0.5, 1.5), st.floats(-1, 1))
def test_jacobi_against_mpmath(k, a, b, x):
    ref = float(explicit_jacobi(k, a, b, x))
    assert jacobi_polynomial(k, a, b, x) == pytest.approx(ref, rel=1e-11, abs=1e-12)


def test_jacobi_vectorised():
    x = np.linspace(-1, 1, 7)
    out = np.asarray(jacobi_polynomial(3, 0.5, 0.0, x))
    assert out.shape == (7,)
    assert out == pytest.approx([float(explicit_jacobi(3, 0.5, 0.0, t)) for t in x], rel=1e-12, abs=1e-14)
