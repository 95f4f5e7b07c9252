"""Unit-ball benchmark with closed-form solution, error norms and rate fits."""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import math
import time

import numpy as np

from .errors import InvalidParameter, NotConverged, ParameterMismatch
from .special import jacobi_polynomial, log_gamma


@dataclass
class BenchmarkProblem:
    """``(-Delta)^s u = f`` on the unit ball, u = 0 outside.

    ``u = (1-|x|^2)_+^s P_k^{(s, d/2-1)}(2|x|^2-1)``.
    """

    dim: int
    s: float
    k: int
    coefficient: float
    domain: str = "ball"

    def _jacobi(self, r2):
        return jacobi_polynomial(self.k, self.s, self.dim / 2 - 1, 2 * r2 - 1)

    def _r2(self, x):
        x = np.asarray(x, dtype=float).reshape(-1, self.dim)
        return np.einsum("ij,ij->i", x, x)

    def rhs(self, x):
        return self.coefficient * np.asarray(self._jacobi(self._r2(x)))

    def exact(self, x):
        r2 = self._r2(x)
        w = np.maximum(1.0 - r2, 0.0) ** self.s
        return w * np.asarray(self._jacobi(r2))


def make_benchmark(d, s, k=0):
    if d not in (1, 2, 3):
        raise InvalidParameter(f"dimension must be 1, 2 or 3, got {d}")
    if not 0 < s < 1:
        raise InvalidParameter(f"fractional order must lie in (0, 1), got {s}")
    if k < 0 or int(k) != k:
        raise InvalidParameter(f"degree must be a non-negative integer, got {k}")
    k = int(k)
    log_c = (
        2 * s * math.log(2)
        + log_gamma(1 + s + k)
        + log_gamma(d / 2 + s + k)
        - log_gamma(k + 1)
        - log_gamma(d / 2 + k)
    )
    return BenchmarkProblem(d, float(s), k, math.exp(log_c))


def error_norms(mesh, u_h, exact):
    """Vertex max error and an L2 error by a vertex-plus-centroid rule.

    Each element uses weights 1/(d+2) at its d+1 vertices and at the centroid,
    where the discrete solution is the vertex average.
    """
    u_h = np.asarray(u_h, dtype=float)
    if u_h.shape != (mesh.n_vertices,):
        raise ParameterMismatch(f"expected {mesh.n_vertices} vertex values, got {u_h.shape}")
    ue = np.asarray(exact(mesh.vertices), dtype=float)
    err_v = u_h - ue
    d = mesh.dim
    uc = u_h[mesh.elements].mean(axis=1)
    err_c = uc - np.asarray(exact(mesh.centroids), dtype=float)
    local = (np.sum(err_v[mesh.elements] ** 2, axis=1) + err_c**2) / (d + 2)
    return {
        "linf": float(np.max(np.abs(err_v))),
        "l2": float(math.sqrt(np.sum(mesh.volumes * local))),
    }


def fit_slope(h, err):
    """Least-squares slope of log(err) against log(h)."""
    h, err = np.asarray(h, dtype=float), np.asarray(err, dtype=float)
    ok = (h > 0) & (err > 0) & np.isfinite(err)
    if ok.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(h[ok]), np.log(err[ok]), 1)[0])


@dataclass
class ConvergenceRow:
    ne: int
    h_bar: float
    l2_error: float
    linf_error: float
    iterations: int
    seconds: float
    converged: bool = True


@dataclass
class ConvergenceTable:
    rows: list = field(default_factory=list)

    def add(self, row):
        self.rows.append(row)
        self.rows.sort(key=lambda r: r.ne)

    def column(self, name):
        return np.array([getattr(r, name) for r in self.rows], dtype=float)

    @property
    def slopes(self):
        h = self.column("h_bar")
        return {"l2": fit_slope(h, self.column("l2_error")), "linf": fit_slope(h, self.column("linf_error"))}


def solve_benchmark(problem, mesh, rhs_mode="grid_rhs", precond=None, tol=None, max_iter=None, **system):
    """One fixed-mesh solve; returns ``(u_h, report)`` with error norms filled in."""
    from .solver import DEFAULT_MAX_ITER, DEFAULT_TOL, assemble_rhs, build_system, solve_cg

    op = build_system(mesh, problem.s, **system)
    b = assemble_rhs(op, problem.rhs, rhs_mode)
    return solve_cg(
        op, b,
        tol=tol or DEFAULT_TOL,
        max_iter=max_iter or DEFAULT_MAX_ITER,
        precond=precond,
        exact=problem.exact,
    )


def convergence_study(problem, meshes, solve=None, jobs=1, **solver_config):
    """Solve on every mesh and fit slopes against ``h_bar = N_e^{-1/d}``.

    Rows whose solve does not converge are kept (best iterate) and flagged.
    ``solve(problem, mesh)`` may replace the default fixed-mesh solve; it must
    return ``(mesh, u_h, report)``. ``jobs > 1`` solves rows on a thread pool.
    """
    meshes = list(meshes)
    if len(meshes) < 3:
        raise ValueError("a convergence study needs at least three meshes")

    def row(mesh):
        t0 = time.perf_counter()
        converged = True
        try:
            if solve is None:
                u, report = solve_benchmark(problem, mesh, **solver_config)
                final_mesh = mesh
            else:
                final_mesh, u, report = solve(problem, mesh)
        except NotConverged as exc:
            u, report, final_mesh, converged = exc.solution, exc.report, mesh, False
        errs = report.errors or error_norms(final_mesh, u, problem.exact)
        return ConvergenceRow(
            ne=final_mesh.n_elements,
            h_bar=final_mesh.n_elements ** (-1.0 / final_mesh.dim),
            l2_error=errs["l2"],
            linf_error=errs["linf"],
            iterations=report.iterations,
            seconds=time.perf_counter() - t0,
            converged=converged,
        )

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            rows = list(pool.map(row, meshes))
    else:
        rows = [row(m) for m in meshes]
    table = ConvergenceTable()
    for r in rows:
        table.add(r)
    return table
