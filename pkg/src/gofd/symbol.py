"""Fourier coefficients of the discrete fractional Laplacian symbol.

The symbol on the lattice is ``psi(xi) = (sum_i 4 sin^2(xi_i / 2))^s`` and the
Toeplitz generator ``T_p`` is its p-th Fourier coefficient. By symmetry only
the non-negative orthant ``0 <= p_i <= 2N`` is stored.

Four routes are provided: the closed form in 1D, the composite trapezoid rule
evaluated by FFT (any dimension), the 1D Filon rule, and Richardson
extrapolation on top of either quadrature.
"""
from dataclasses import dataclass, replace
import hashlib
import math
import os
import struct
from pathlib import Path

import numpy as np

from .errors import (InvalidOrder, NumericalInconsistency, ParameterMismatch,
                     QuadratureTooCoarse, QuadratureTooLarge)

DEFAULT_M = {1: 2**12, 2: 2**14, 3: 2**11}
QUADRATURE_BUDGET_BYTES = 1_500_000_000
IMAG_TOLERANCE = 1e-10
_CHUNK_ELEMENTS = 2**22

MAGIC = b"GOFDSYM1"
_HEADER = struct.Struct("<8sIdQQ16s")


@dataclass(frozen=True)
class SymbolCoefficients:
    dim: int
    s: float
    n: int
    coefficients: np.ndarray
    method: str
    m: int = 0

    def __post_init__(self):
        expected = (2 * self.n + 1,) * self.dim
        if self.coefficients.shape != expected:
            raise ValueError(f"coefficients must have shape {expected}, got {self.coefficients.shape}")

    @property
    def origin(self):
        return float(self.coefficients[(0,) * self.dim])

    def at(self, p):
        """T at an arbitrary signed multi-index (uses T_{-p} = T_p per axis)."""
        p = np.abs(np.asarray(p))
        if np.any(p > 2 * self.n):
            raise IndexError("multi-index outside the stored range [-2N, 2N]^d")
        return self.coefficients[tuple(p.T)]

    def truncate(self, n):
        """Coefficients for a smaller grid (T does not depend on N)."""
        if n > self.n:
            raise ValueError(f"cannot extend symbol from N={self.n} to N={n}")
        sl = (slice(0, 2 * n + 1),) * self.dim
        return replace(self, n=n, coefficients=self.coefficients[sl].copy())


def _check_order(s):
    if not 0 < s <= 1:
        raise InvalidOrder(f"fractional order s must lie in (0, 1], got {s}")


def symbol_eval(s, xi):
    """``psi(xi)``; the last axis of ``xi`` holds the d frequency components."""
    xi = np.asarray(xi, dtype=float)
    return np.sum(4.0 * np.sin(0.5 * xi) ** 2, axis=-1) ** s


def shifted_symbol_eval(s, xi):
    """``psi~(xi) = (sum_i 4 cos^2(pi xi_i))^s`` = ``psi(2 pi xi + pi)``."""
    xi = np.asarray(xi, dtype=float)
    return np.sum(4.0 * np.cos(np.pi * xi) ** 2, axis=-1) ** s


def symbol_1d_analytic(s, n):
    """Closed-form 1D coefficients.

    ``T_p = (-1)^p G(2s+1) / (G(p+s+1) G(s-p+1))``, evaluated by the ratio
    recurrence ``T_{p+1} = T_p (p - s) / (p + s + 1)`` so that the poles of
    ``G(s-p+1)`` are never touched.
    """
    _check_order(s)
    from .special import gamma

    t = np.empty(2 * n + 1)
    t[0] = gamma(2 * s + 1) / gamma(s + 1) ** 2
    p = np.arange(2 * n, dtype=float)
    t[1:] = t[0] * np.cumprod((p - s) / (p + s + 1))
    return SymbolCoefficients(1, float(s), n, t, "analytic1d", 0)


def _check_quadrature(d, n, m):
    if m < 2 * n + 1:
        raise QuadratureTooCoarse(f"M={m} must be at least 2N+1={2 * n + 1}")
    need = m * (2 * n + 1) ** (d - 1) * 8 + min(m**d, _CHUNK_ELEMENTS) * 24
    if need > QUADRATURE_BUDGET_BYTES:
        raise QuadratureTooLarge(
            f"quadrature with d={d}, N={n}, M={m} needs about {need / 1e9:.2f} GB"
        )


def _real_part(z, scale):
    if z.size and np.max(np.abs(z.imag)) > IMAG_TOLERANCE * scale:
        raise NumericalInconsistency(
            f"imaginary residue {np.max(np.abs(z.imag)):.3e} exceeds tolerance"
        )
    return z.real


def _alternating_sign(d, k):
    sign = (-1.0) ** np.arange(k)
    out = np.ones((k,) * d)
    for axis in range(d):
        shape = [1] * d
        shape[axis] = k
        out = out * sign.reshape(shape)
    return out


def _leading_modes(x, k):
    """First ``k`` DFT modes of real samples along the last axis.

    The half spectrum is enough while ``k <= M/2 + 1``; beyond that the
    aliased modes come from the full transform.
    """
    if k <= x.shape[-1] // 2 + 1:
        return np.fft.rfft(x, axis=-1)[..., :k]
    return np.fft.fft(x, axis=-1)[..., :k]


def symbol_trapezoid(d, s, n, m):
    """Composite trapezoid rule for every ``0 <= p_i <= 2N`` at once.

    The transform is done axis by axis on blocks of the sample tensor so the
    full ``M^d`` tensor is never held in memory.
    """
    _check_order(s)
    _check_quadrature(d, n, m)
    k = 2 * n + 1
    c = 4.0 * np.cos(np.pi * np.arange(m) / m) ** 2
    scale = (2.0 * d) ** s  # upper bound of the samples
    if d == 1:
        t = _real_part(_leading_modes(c**s, k), scale * m) / m
    else:
        partial = np.empty((m,) + (k,) * (d - 1))
        tail = _sum_of_axes(c, d - 1)
        block = max(1, _CHUNK_ELEMENTS // m ** (d - 1))
        for start in range(0, m, block):
            stop = min(m, start + block)
            samples = (c[start:stop].reshape((-1,) + (1,) * (d - 1)) + tail) ** s
            z = _leading_modes(samples, k)
            for axis in range(1, d - 1):
                z = np.fft.fft(z, axis=axis)
                z = np.take(z, np.arange(k), axis=axis)
            partial[start:stop] = _real_part(z, scale * m ** (d - 1))
        z = np.fft.fft(partial, axis=0)[:k]
        t = _real_part(z, scale * m**d) / m**d
    t = t * _alternating_sign(d, k)
    return SymbolCoefficients(d, float(s), n, np.ascontiguousarray(t), "trapezoid", m)


def _sum_of_axes(c, nd):
    out = np.zeros((len(c),) * nd)
    for axis in range(nd):
        shape = [1] * nd
        shape[axis] = len(c)
        out = out + c.reshape(shape)
    return out


def symbol_filon_1d(s, n, m):
    """Filon rule with piecewise linear ``psi~``.

    For p >= 1, ``T_p = (-1)^{p+1} / (2 pi p)^2 * sum_j M D2_j e^{i 2 pi p j/M}``
    where D2 is the periodic second difference of the samples. ``T_0`` is
    the trapezoid value since the Filon kernel is singular at p = 0.
    """
    _check_order(s)
    _check_quadrature(1, n, m)
    k = 2 * n + 1
    psi = (4.0 * np.cos(np.pi * np.arange(m) / m) ** 2) ** s
    d2 = np.roll(psi, -1) - 2.0 * psi + np.roll(psi, 1)
    f = _real_part(np.fft.rfft(m * d2)[:k], 4.0 * m * m)
    p = np.arange(1, k)
    t = np.empty(k)
    t[0] = psi.mean()
    t[1:] = (-1.0) ** (p + 1) / (2.0 * np.pi * p) ** 2 * f[1:]
    return SymbolCoefficients(1, float(s), n, t, "filon", m)


def richardson_extrapolate(coarse, fine, order=2.0):
    """Combine quadratures at M/2 and M to cancel an ``M^-order`` error term.

    With the default order 2 this is ``(4 T_fine - T_coarse) / 3``.
    """
    if (coarse.dim, coarse.s, coarse.n) != (fine.dim, fine.s, fine.n):
        raise ParameterMismatch("Richardson inputs differ in dimension, order or N")
    if _base_method(coarse.method) != _base_method(fine.method):
        raise ParameterMismatch(f"methods differ: {coarse.method} vs {fine.method}")
    if fine.m != 2 * coarse.m:
        raise ParameterMismatch(f"fine M={fine.m} must be twice coarse M={coarse.m}")
    w = 2.0**order
    t = (w * fine.coefficients - coarse.coefficients) / (w - 1.0)
    method = fine.method if fine.method.startswith("richardson") else f"richardson-{fine.method}"
    return replace(fine, coefficients=t, method=method)


def _base_method(method):
    return method.split("-")[-1]


def symbol_multi_d(d, s, n, m=None, levels=2):
    """Default pipeline for d >= 2: trapezoid at M/2^(levels-1)..M plus Richardson.

    The trapezoid error on this periodic integrand comes from the point
    singularity of ``psi~`` at (1/2, ..., 1/2) and expands in powers
    ``M^-(d+2s+2k)``; extrapolation level k cancels the k-th of them.
    """
    if d not in (2, 3):
        raise ValueError("symbol_multi_d is for d = 2 or 3")
    _check_order(s)
    m = DEFAULT_M[d] if m is None else int(m)
    if levels < 1:
        raise ValueError("levels must be >= 1")
    ms = [m // 2**i for i in range(levels - 1, -1, -1)]
    for mm in ms:
        _check_quadrature(d, n, mm)
    table = [symbol_trapezoid(d, s, n, mm) for mm in ms]
    order = d + 2.0 * s
    while len(table) > 1:
        table = [richardson_extrapolate(a, b, order) for a, b in zip(table[:-1], table[1:])]
        order += 2.0
    return table[0]


def compute_symbol(d, s, n, method=None, m=None, levels=2):
    """Dispatch on ``method`` (analytic, trapezoid, filon, richardson, multi)."""
    if method is None:
        method = "analytic" if d == 1 else "multi"
    if method in ("analytic", "analytic1d"):
        if d != 1:
            raise ValueError("the closed form exists only in 1D")
        return symbol_1d_analytic(s, n)
    m = int(m) if m is not None else DEFAULT_M[d]
    if method == "trapezoid":
        return symbol_trapezoid(d, s, n, m)
    if method == "filon":
        if d != 1:
            raise ValueError("the Filon rule is implemented in 1D only")
        return symbol_filon_1d(s, n, m)
    if method == "richardson":
        if d == 1:
            return richardson_extrapolate(symbol_filon_1d(s, n, m // 2), symbol_filon_1d(s, n, m))
        return symbol_multi_d(d, s, n, m, levels)
    if method == "multi":
        if d == 1:
            return symbol_1d_analytic(s, n)
        return symbol_multi_d(d, s, n, m, levels)
    raise ValueError(f"unknown symbol method {method!r}")


# ---------------------------------------------------------------------------
# binary cache


def write_symbol(path, sym):
    """Little-endian header followed by the stored orthant as float64."""
    tag = sym.method.encode("ascii")[:16]
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, sym.dim, sym.s, sym.n, sym.m, tag))
        fh.write(np.ascontiguousarray(sym.coefficients, dtype="<f8").tobytes())


def read_symbol(path):
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise ValueError(f"{path}: truncated symbol header")
        magic, d, s, n, m, tag = _HEADER.unpack(head)
        if magic != MAGIC:
            raise ValueError(f"{path}: not a symbol cache file")
        body = np.frombuffer(fh.read(), dtype="<f8")
    shape = (2 * n + 1,) * d
    if body.size != math.prod(shape):
        raise ValueError(f"{path}: body has {body.size} values, expected {math.prod(shape)}")
    method = tag.rstrip(b"\0").decode("ascii")
    return SymbolCoefficients(d, s, n, body.reshape(shape).astype(float), method, m)


def cache_dir():
    return Path(os.environ.get("GOFD_CACHE_DIR", Path.home() / ".cache" / "gofd"))


def cache_path(d, s, n, m, method, directory=None):
    directory = Path(directory) if directory is not None else cache_dir()
    key = f"{d}-{s!r}-{n}-{m}-{method}"
    digest = hashlib.sha1(key.encode()).hexdigest()[:16]
    return directory / f"symbol-{digest}.bin"


def cached_symbol(d, s, n, method=None, m=None, levels=2, directory=None):
    """``compute_symbol`` memoised on disk, keyed by (d, s, N, M, method)."""
    if method is None:
        method = "analytic" if d == 1 else "multi"
    m_key = 0 if method in ("analytic", "analytic1d") else (m or DEFAULT_M[d])
    path = cache_path(d, s, n, m_key, f"{method}{levels}", directory)
    if path.exists():
        try:
            return read_symbol(path)
        except ValueError:
            path.unlink()
    sym = compute_symbol(d, s, n, method, m, levels)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp")
    write_symbol(tmp, sym)
    os.replace(tmp, path)
    return sym


_MEMORY = {}
# quadrature cost is dominated by M, so compute generously once
_MEMO_FLOOR = {1: 1024, 2: 512, 3: 64}


def shared_symbol(d, s, n, method=None, m=None, levels=2, disk=False):
    """Symbol memoised in-process; larger stored orders are truncated.

    The coefficients do not depend on N, so one computation at the largest
    requested N serves every smaller grid.
    """
    key = (d, float(s), method, m, levels)
    sym = _MEMORY.get(key)
    if sym is None or sym.n < n:
        n_alloc = max(n, _MEMO_FLOOR[d], 2 * sym.n if sym is not None else 0)
        if m is not None:
            n_alloc = max(n, min(n_alloc, (int(m) // 2 - 1) // 2))
        if disk:
            sym = cached_symbol(d, s, n_alloc, method, m, levels)
        else:
            sym = compute_symbol(d, s, n_alloc, method, m, levels)
        _MEMORY[key] = sym
    return sym if sym.n == n else sym.truncate(n)
