"""FFT application of the multilevel Toeplitz matrix A_FD.

``A[(j),(m)] = T_{j-m}`` on the (2N+1)^d overlay grid. The generator is laid
out on a circulant of length ``L >= 4N+2`` per axis; its DFT is computed once,
so each product costs one forward and one inverse real FFT.
"""
import math

import numpy as np
from numpy.fft import irfftn, rfftn

from .errors import DenseTooLarge, ParameterMismatch

DENSE_BUDGET = 4096


def embedding_length(n):
    return 1 << math.ceil(math.log2(4 * n + 2))


class ToeplitzOperator:
    """Symmetric multilevel Toeplitz operator built from symbol coefficients."""

    def __init__(self, grid, symbol):
        if symbol.n != grid.n or symbol.dim != grid.dim:
            raise ParameterMismatch(
                f"symbol (d={symbol.dim}, N={symbol.n}) does not match grid (d={grid.dim}, N={grid.n})"
            )
        self.grid = grid
        self.symbol = symbol
        n, d = grid.n, grid.dim
        self.length = embedding_length(n)
        L = self.length
        # circulant position -> |p|, with 2N+1 pointing at an appended zero
        idx = np.full(L, 2 * n + 1)
        idx[: 2 * n + 1] = np.arange(2 * n + 1)
        idx[L - 2 * n:] = np.arange(2 * n, 0, -1)
        padded = np.pad(symbol.coefficients, [(0, 1)] * d)
        generator = padded[np.ix_(*([idx] * d))]
        spectrum = rfftn(generator)
        self._imag_residue = float(np.max(np.abs(spectrum.imag)) / max(np.max(np.abs(spectrum.real)), 1e-300))
        self.spectrum = spectrum.real.copy()

    @property
    def shape(self):
        k = self.grid.n_nodes
        return (k, k)

    def apply(self, u):
        """``A_FD @ u`` for a grid vector (lexicographic, last axis fastest)."""
        u = np.asarray(u, dtype=float)
        if u.shape != (self.grid.n_nodes,):
            raise ParameterMismatch(f"expected a vector of length {self.grid.n_nodes}, got {u.shape}")
        d, k, L = self.grid.dim, self.grid.nodes_per_axis, self.length
        uhat = rfftn(u.reshape((k,) * d), s=(L,) * d, axes=tuple(range(d)))
        uhat *= self.spectrum
        out = irfftn(uhat, s=(L,) * d, axes=tuple(range(d)))
        return out[(slice(0, k),) * d].ravel()

    __matmul__ = apply

    def apply_fractional(self, u, h_fd, s):
        """Finite-difference fractional Laplacian ``h_FD^{-2s} A_FD u``."""
        return self.apply(u) * h_fd ** (-2.0 * s)


def build_operator(grid, symbol):
    return ToeplitzOperator(grid, symbol)


def dense_materialize(symbol, n=None, budget=DENSE_BUDGET):
    """Dense ``A_FD`` of size (2N+1)^d, for validation on small grids."""
    n = symbol.n if n is None else n
    d = symbol.dim
    size = (2 * n + 1) ** d
    if size > budget:
        raise DenseTooLarge(f"dense matrix of size {size} exceeds budget {budget}")
    k = np.arange(2 * n + 1)
    multi = np.stack(np.meshgrid(*([k] * d), indexing="ij"), axis=-1).reshape(-1, d)
    coeffs = symbol.coefficients[(slice(0, 2 * n + 1),) * d]
    out = np.empty((size, size))
    block = max(1, 2**22 // (size * d))  # rows per block of index differences
    for start in range(0, size, block):
        diff = np.abs(multi[start:start + block, None, :] - multi[None, :, :])
        out[start:start + block] = coeffs[tuple(np.moveaxis(diff, -1, 0))]
    return out
