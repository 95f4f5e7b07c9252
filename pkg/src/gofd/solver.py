"""Assembly and iterative solution of the overlay-grid linear system.

The unknowns are the interior mesh values ``u``; the system is

    I^T A_FD I u = b,

with ``I`` the transfer matrix restricted to interior vertices. ``A_FD`` is
applied matrix-free by FFT, so the system is solved with conjugate gradients,
optionally preconditioned by an incomplete Cholesky factor of a sparse
stencil-pattern approximation.
"""
from dataclasses import dataclass, field
import itertools
import math
import time

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve_triangular

from .errors import InvalidParameter, NotConverged, ParameterMismatch, PreconditionerFailure
from .grid import build_overlay, warn_if_not_strict
from .mesh import mesh_stats
from .symbol import shared_symbol
from .toeplitz import ToeplitzOperator
from .transfer import build_transfer, restrict_interior, scatter_interior

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 5000
SHIFT_START = 1e-3
MAX_SHIFTS = 8

PATTERNS = {
    "stencil3": (1, "star"),
    "stencil5": (2, "star"),
    "stencil7": (3, "star"),
    "stencil9": (2, "box"),
    "stencil27": (3, "box"),
}
DEFAULT_PATTERN = {1: "stencil3", 2: "stencil9", 3: "stencil27"}


class GofdOperator:
    """Matrix-free ``v -> I^T A_FD I v`` on interior unknowns."""

    def __init__(self, mesh, grid, symbol, s, transfer=None):
        if not 0 < s < 1:
            raise InvalidParameter(f"fractional order must lie in (0, 1), got {s}")
        self.mesh = mesh
        self.grid = grid
        self.symbol = symbol
        self.s = float(s)
        self.h_fd = grid.spacing
        self.toeplitz = ToeplitzOperator(grid, symbol)
        self.transfer = transfer if transfer is not None else build_transfer(mesh, grid)
        self.transfer_interior = restrict_interior(self.transfer, mesh)
        self.interior = self.transfer_interior.columns

    @property
    def n_unknowns(self):
        return self.transfer_interior.shape[1]

    def apply(self, v):
        return apply_system(self, v)

    def scatter(self, v):
        """Full mesh vector with zero boundary values."""
        return scatter_interior(self.transfer_interior, v, self.mesh.n_vertices)


def build_system(mesh, s, rule="paper_default", safety_factor=None, symbol_method=None,
                 symbol_m=None, spacing=None, warn=False, cache=False):
    """Overlay grid, symbol and operator for ``mesh`` in one call.

    ``cache`` also stores the symbol on disk (see ``cached_symbol``).
    """
    stats = mesh_stats(mesh)
    kwargs = {} if safety_factor is None else {"safety_factor": safety_factor}
    grid = build_overlay(stats, mesh.bounding_box(), rule=rule, spacing=spacing, **kwargs)
    if warn:
        warn_if_not_strict(grid, stats)
    symbol = shared_symbol(mesh.dim, s, grid.n, method=symbol_method, m=symbol_m, disk=cache)
    return GofdOperator(mesh, grid, symbol, s)


def apply_system(op, v):
    v = np.asarray(v, dtype=float)
    if v.shape != (op.n_unknowns,):
        raise ParameterMismatch(f"expected {op.n_unknowns} interior values, got {v.shape}")
    tm = op.transfer_interior.matrix
    return tm.T @ op.toeplitz.apply(tm @ v)


def _evaluate(f, points):
    if callable(f):
        return np.asarray(f(points), dtype=float).reshape(len(points))
    return np.broadcast_to(np.asarray(f, dtype=float), (len(points),)).copy()


def grid_values(op, f):
    """``f`` at covered grid nodes, zero elsewhere (the exterior condition)."""
    covered = np.flatnonzero(op.transfer.covered)
    out = np.zeros(op.grid.n_nodes)
    out[covered] = _evaluate(f, op.grid.node_coordinates(covered))
    return out


def assemble_rhs(op, f, mode="grid_rhs"):
    """Right-hand side over interior unknowns.

    ``grid_rhs``: ``h^{2s} I^T f_FD``; ``mesh_rhs``: ``h^{2s} D_h f_h`` with
    ``f_h`` the vertex values and ``D_h`` the transfer column sums.
    """
    scale = op.h_fd ** (2 * op.s)
    if mode == "grid_rhs":
        return scale * (op.transfer_interior.matrix.T @ grid_values(op, f))
    if mode == "mesh_rhs":
        pts = op.mesh.vertices[op.interior]
        return scale * op.transfer_interior.column_sums * _evaluate(f, pts)
    raise ValueError(f"unknown rhs mode {mode!r}")


# ---------------------------------------------------------------------------
# sparse stencil approximations and IC(1)


def _shift(k, offset):
    return sp.eye(k, k=offset, format="csr")


def extract_sparse_pattern(symbol, grid, pattern):
    """Entries of ``A_FD`` restricted to a nearest-neighbour stencil."""
    if pattern not in PATTERNS:
        raise ValueError(f"unknown pattern {pattern!r}")
    d, kind = PATTERNS[pattern]
    if d != grid.dim or symbol.dim != d:
        raise ParameterMismatch(f"pattern {pattern} is for d={d}, grid has d={grid.dim}")
    k = grid.nodes_per_axis
    out = sp.csr_matrix((grid.n_nodes, grid.n_nodes))
    for offs in itertools.product((-1, 0, 1), repeat=d):
        if kind == "star" and sum(o != 0 for o in offs) > 1:
            continue
        term = _shift(k, offs[0])
        for o in offs[1:]:
            term = sp.kron(term, _shift(k, o), format="csr")
        out = out + symbol.coefficients[tuple(abs(o) for o in offs)] * term
    return out.tocsr()


def level1_pattern(a):
    """Lower-triangular pattern of ``a`` plus its level-1 Cholesky fill."""
    a = sp.csr_matrix(a)
    ones = a.copy()
    ones.data[:] = 1.0
    strict = sp.tril(ones, k=-1, format="csr")
    fill = sp.tril(strict @ strict.T, format="csr")
    pattern = (sp.tril(ones, format="csr") + fill).tocsr()
    pattern.sort_indices()
    return pattern


def incomplete_cholesky(a, pattern):
    """Row-oriented Cholesky restricted to ``pattern``; ``None`` on breakdown."""
    a = sp.csr_matrix(a)
    a.sort_indices()
    n = a.shape[0]
    indptr, indices = pattern.indptr, pattern.indices
    vals = np.zeros(len(indices))
    lookup = np.zeros(n)
    for i in range(n):
        lo, hi = indptr[i], indptr[i + 1]
        cols = indices[lo:hi]
        row_a = slice(a.indptr[i], a.indptr[i + 1])
        acols = a.indices[row_a]
        keep = acols <= i
        lookup[acols[keep]] = a.data[row_a][keep]
        for t in range(hi - lo - 1):
            j = cols[t]
            jlo, jhi = indptr[j], indptr[j + 1] - 1
            jc = indices[jlo:jhi]
            acc = lookup[j] - np.dot(lookup[jc], vals[jlo:jhi]) if jhi > jlo else lookup[j]
            lookup[j] = acc / vals[jhi]
        # lookup now holds the finished row entries for cols < i; diag is still A_ii
        prev = cols[:-1]
        pivot = lookup[i] - np.dot(lookup[prev], lookup[prev])
        if not pivot > 0 or cols[-1] != i:
            return None
        lookup[i] = math.sqrt(pivot)
        vals[lo:hi] = lookup[cols]
        lookup[cols] = 0.0
    return sp.csr_matrix((vals, indices.copy(), indptr.copy()), shape=(n, n))


@dataclass
class SparsePreconditioner:
    pattern: str
    factor: sp.csr_matrix
    diagonal_shift: float = 0.0
    matrix: sp.csr_matrix = field(default=None, repr=False)

    def __post_init__(self):
        self._upper = self.factor.T.tocsr()

    def apply(self, r):
        y = spsolve_triangular(self.factor, r, lower=True)
        return spsolve_triangular(self._upper, y, lower=False)

    __call__ = apply


def build_preconditioner(a_pattern, transfer_interior, pattern_name=""):
    """IC(1) factor of ``I^T A^(p) I`` with diagonal-shift breakdown recovery."""
    tm = transfer_interior.matrix
    ah = (tm.T @ a_pattern @ tm).tocsr()
    ah = 0.5 * (ah + ah.T)
    ah.sort_indices()
    pattern = level1_pattern(ah)
    diag = sp.diags(ah.diagonal())
    alpha = 0.0
    for attempt in range(MAX_SHIFTS + 1):
        shifted = ah + alpha * diag if alpha else ah
        factor = incomplete_cholesky(shifted, pattern)
        if factor is not None:
            return SparsePreconditioner(pattern_name, factor, alpha, ah)
        alpha = SHIFT_START if alpha == 0 else 2 * alpha
    raise PreconditionerFailure(f"incomplete Cholesky broke down after {MAX_SHIFTS} diagonal shifts")


def preconditioner_for(op, pattern=None):
    pattern = pattern or DEFAULT_PATTERN[op.grid.dim]
    a_p = extract_sparse_pattern(op.symbol, op.grid, pattern)
    return build_preconditioner(a_p, op.transfer_interior, pattern)


# ---------------------------------------------------------------------------
# conjugate gradients


@dataclass
class SolveReport:
    iterations: int = 0
    residual_history: list = field(default_factory=list)
    converged: bool = False
    wall_time: float = 0.0
    errors: dict = None
    preconditioner: str = "none"
    diagonal_shift: float = 0.0

    @property
    def final_residual(self):
        return self.residual_history[-1] if self.residual_history else 0.0


def pcg(matvec, b, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, precond=None, callback=None):
    """Preconditioned CG from a zero initial guess.

    Returns ``(x, residual_history, converged)``; the history holds
    ``||r_k|| / ||b||`` for k = 0, 1, ...
    """
    b = np.asarray(b, dtype=float)
    x = np.zeros_like(b)
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return x, [0.0], True
    r = b.copy()
    z = precond(r) if precond is not None else r
    p = z.copy()
    rz = r @ z
    history = [1.0]
    for _ in range(max_iter):
        q = matvec(p)
        pq = p @ q
        if not pq > 0:
            break
        alpha = rz / pq
        x += alpha * p
        r -= alpha * q
        history.append(np.linalg.norm(r) / bnorm)
        if callback is not None:
            callback(x)
        if history[-1] <= tol:
            return x, history, True
        z = precond(r) if precond is not None else r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, history, False


def solve_cg(op, rhs, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, precond=None, exact=None):
    """Solve the interior system; returns the full mesh vector and a report.

    ``precond`` is a :class:`SparsePreconditioner`, a pattern name, or None.
    ``exact`` (callable) adds error norms to the report.
    """
    if not tol > 0:
        raise InvalidParameter("tol must be positive")
    t0 = time.perf_counter()
    if isinstance(precond, str):
        precond = None if precond == "none" else preconditioner_for(op, precond)
    x, history, ok = pcg(op.apply, rhs, tol, max_iter, precond)
    report = SolveReport(
        iterations=len(history) - 1,
        residual_history=history,
        converged=ok,
        preconditioner=precond.pattern if precond is not None else "none",
        diagonal_shift=precond.diagonal_shift if precond is not None else 0.0,
    )
    u = op.scatter(x)
    if exact is not None:
        from .problems import error_norms
        report.errors = error_norms(op.mesh, u, exact)
    report.wall_time = time.perf_counter() - t0
    if not ok:
        raise NotConverged(
            f"CG stopped after {report.iterations} iterations at relative residual "
            f"{report.final_residual:.3e}",
            solution=u, report=report,
        )
    return u, report


def local_truncation_error(op, exact_u, f):
    """``tau_FD = f_FD - h^{-2s} A_FD I u_e`` on the grid.

    ``exact_u`` is a full mesh vector; ``f`` a callable or a grid vector.
    """
    u = np.asarray(exact_u, dtype=float)
    if u.shape != (op.mesh.n_vertices,):
        raise ParameterMismatch("exact solution must be a full mesh vector")
    f_fd = np.asarray(f, dtype=float) if not callable(f) else grid_values(op, f)
    return f_fd - op.toeplitz.apply_fractional(op.transfer.matrix @ u, op.h_fd, op.s)
