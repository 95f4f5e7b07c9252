"""Gamma function and Jacobi polynomials for the benchmark problems."""
import math

import numpy as np

from .errors import InvalidParameter


def log_gamma(x):
    """``log Gamma(x)`` for x > 0 (libm ``lgamma``)."""
    x = float(x)
    if not x > 0:
        raise InvalidParameter(f"log_gamma needs x > 0, got {x}")
    return math.lgamma(x)


def gamma(x):
    return math.exp(log_gamma(x))


def jacobi_polynomial(k, a, b, x):
    """``P_k^{(a,b)}(x)`` by the standard three-term recurrence.

    Works elementwise on arrays.
    """
    if not (a > -1 and b > -1):
        raise InvalidParameter(f"Jacobi parameters must exceed -1, got a={a}, b={b}")
    if k < 0 or int(k) != k:
        raise InvalidParameter(f"degree must be a non-negative integer, got {k}")
    x = np.asarray(x, dtype=float)
    p_prev = np.ones_like(x)
    if k == 0:
        return p_prev if p_prev.ndim else float(p_prev)
    p = 0.5 * (a - b) + 0.5 * (a + b + 2.0) * x
    for n in range(1, int(k)):
        c = 2 * n + a + b
        a1 = 2 * (n + 1) * (n + a + b + 1) * c
        a2 = (c + 1) * (a * a - b * b)
        a3 = c * (c + 1) * (c + 2)
        a4 = 2 * (n + a) * (n + b) * (c + 2)
        p, p_prev = ((a2 + a3 * x) * p - a4 * p_prev) / a1, p
    return p if p.ndim else float(p)
