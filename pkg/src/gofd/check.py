"""Desk-scale self checks: dense oracles, transfer properties, symbol agreement."""
from dataclasses import dataclass
import math

import numpy as np

from .grid import OverlayGrid, build_overlay
from .mesh import SimplicialMesh, generate_benchmark_mesh, interval_mesh, mesh_stats
from .symbol import compute_symbol, richardson_extrapolate, symbol_1d_analytic, symbol_filon_1d, symbol_trapezoid
from .toeplitz import ToeplitzOperator, dense_materialize
from .transfer import build_transfer, check_rank_conditions


@dataclass
class CheckResult:
    suite: str
    name: str
    passed: bool
    detail: str = ""


def random_mesh_1d(rng, n):
    x = np.sort(rng.uniform(-1, 1, n - 1))
    x = np.concatenate([[-1.0], x, [1.0]])
    gaps = np.diff(x)
    if gaps.min() < 1e-3:
        return interval_mesh(n)
    return SimplicialMesh(x[:, None], np.stack([np.arange(n), np.arange(1, n + 1)], axis=1))


def jittered_disk(rng, n, amount=0.2):
    mesh = generate_benchmark_mesh("disk", n)
    h = mesh_stats(mesh).a_h
    x = mesh.vertices.copy()
    inner = ~mesh.boundary
    x[inner] += amount * h * rng.uniform(-1, 1, size=x[inner].shape)
    return SimplicialMesh(x, mesh.elements, reorient=True)


def random_grid(rng, mesh, rule):
    stats = mesh_stats(mesh)
    factor = rng.uniform(1.0, 1.3)
    return build_overlay(stats, mesh.bounding_box(), rule=rule, safety_factor=factor), stats


def power_iteration(mat, iters=200, seed=0):
    v = np.random.default_rng(seed).standard_normal(mat.shape[1])
    lam = 0.0
    for _ in range(iters):
        w = mat.T @ (mat @ v)
        lam = float(np.linalg.norm(w))
        if lam == 0:
            return 0.0
        v = w / lam
    return lam


def suite_toeplitz(rng):
    out = []
    for d, n in ((1, 16), (2, 8), (3, 4)):
        for s in (0.25, 0.5, 0.75):
            sym = compute_symbol(d, s, n, method="analytic" if d == 1 else "trapezoid", m=None if d == 1 else 128)
            grid = OverlayGrid(d, (0.0,) * d, 1.0, n)
            op = ToeplitzOperator(grid, sym)
            dense = dense_materialize(sym)
            worst = 0.0
            for _ in range(5):
                u = rng.standard_normal(grid.n_nodes)
                ref = dense @ u
                worst = max(worst, np.linalg.norm(op.apply(u) - ref) / np.linalg.norm(ref))
            out.append(CheckResult("toeplitz", f"d={d} s={s} N={n}", worst <= 1e-12, f"rel err {worst:.2e}"))
    for d in (1, 2):
        for s in (0.1, 0.5, 0.9):
            sym = compute_symbol(d, s, 6, method="analytic" if d == 1 else "trapezoid", m=None if d == 1 else 256)
            lam = float(np.linalg.eigvalsh(dense_materialize(sym)).min())
            out.append(CheckResult("toeplitz", f"spd d={d} s={s}", lam > 0, f"min eig {lam:.3e}"))
    return out


def suite_symbol(rng):
    out = []
    n = 32
    for s in (0.25, 0.5, 0.75):
        exact = symbol_1d_analytic(s, n).coefficients
        trap = symbol_trapezoid(1, s, n, 2**12).coefficients
        rich = richardson_extrapolate(symbol_filon_1d(s, n, 2**10), symbol_filon_1d(s, n, 2**11)).coefficients
        e1 = float(np.abs(trap - exact).max())
        e2 = float(np.abs(rich - exact).max())
        out.append(CheckResult("symbol", f"trapezoid s={s}", e1 <= 1e-5, f"max err {e1:.2e}"))
        out.append(CheckResult("symbol", f"filon+richardson s={s}", e2 <= 1e-5, f"max err {e2:.2e}"))
    t0 = symbol_1d_analytic(0.5, 4).origin
    out.append(CheckResult("symbol", "T0(s=1/2) = 4/pi", abs(t0 - 4 / math.pi) <= 1e-12, f"{t0!r}"))
    return out


def transfer_properties(mesh, grid, stats):
    """Problems found with the transfer matrix (empty list when all hold)."""
    tm = build_transfer(mesh, grid)
    mat = tm.matrix
    problems = []
    if mat.nnz and (mat.data.min() < 0 or mat.data.max() > 1):
        problems.append("entry outside [0, 1]")
    rows = np.asarray(mat.sum(axis=1)).ravel()
    if np.any(np.minimum(np.abs(rows), np.abs(rows - 1)) > 1e-12):
        problems.append("row sum not in {0, 1}")
    colmax = mat.max(axis=0).toarray().ravel()
    bound = stats.n_val * tm.nodes_per_element_max
    if np.any(tm.column_sums < colmax - 1e-14) or np.any(tm.column_sums > bound + 1e-12):
        problems.append("column sum outside [max entry, N_val N_FD]")
    if power_iteration(mat) > bound * (1 + 1e-9):
        problems.append("largest eigenvalue of I^T I exceeds N_val N_FD")
    return problems, tm


def suite_transfer(rng, cases=10):
    out = []
    for i in range(cases):
        if i % 2 == 0:
            mesh = random_mesh_1d(rng, int(rng.integers(5, 40)))
        else:
            mesh = jittered_disk(rng, int(rng.integers(2, 6)))
        grid, stats = random_grid(rng, mesh, "paper_default" if i % 3 else "strict")
        problems, _ = transfer_properties(mesh, grid, stats)
        out.append(CheckResult("transfer", f"case {i} d={mesh.dim}", not problems, "; ".join(problems) or "ok"))
    for i in range(max(2, cases // 2)):
        mesh = random_mesh_1d(rng, int(rng.integers(5, 60))) if i % 2 == 0 else jittered_disk(rng, int(rng.integers(2, 5)))
        grid, stats = random_grid(rng, mesh, "strict")
        report = check_rank_conditions(build_transfer(mesh, grid), stats, grid)
        ok = bool(report.full_rank) and report.lower_bound_met
        out.append(CheckResult("transfer", f"rank case {i} d={mesh.dim}", ok,
                               f"rank {report.exact_rank}/{mesh.n_vertices}"))
    return out


def suite_solver(rng):
    from .solver import apply_system, assemble_rhs, build_system, solve_cg

    out = []
    mesh = random_mesh_1d(rng, 30)
    op = build_system(mesh, 0.5)
    tm = op.transfer_interior.matrix.toarray()
    dense = tm.T @ dense_materialize(op.symbol) @ tm
    v = rng.standard_normal(op.n_unknowns)
    err = np.linalg.norm(apply_system(op, v) - dense @ v) / np.linalg.norm(dense @ v)
    out.append(CheckResult("solver", "matrix-free vs dense", err <= 1e-12, f"rel err {err:.2e}"))
    b = assemble_rhs(op, lambda x: np.ones(len(x)))
    u, rep = solve_cg(op, b, tol=1e-12)
    direct = np.linalg.solve(dense, b)
    err = np.linalg.norm(u[op.interior] - direct) / np.linalg.norm(direct)
    out.append(CheckResult("solver", "CG vs direct", err <= 1e-8, f"rel err {err:.2e}, {rep.iterations} its"))
    return out


def suite_mmpde(rng):
    from .adapt import (MetricField, MmpdeConfig, energy_gradient, integrate_mmpde, mesh_energy,
                        metric_from_hessian, recover_hessian)

    out = []
    mesh = interval_mesh(12)
    ident = MetricField(mesh, np.ones((mesh.n_elements, 1, 1)), float("inf"))
    moved = integrate_mmpde(mesh, ident)
    shift = float(np.abs(moved.vertices - mesh.vertices).max())
    out.append(CheckResult("mmpde", "uniform mesh is a fixed point", shift <= 1e-10, f"max shift {shift:.1e}"))
    disk = jittered_disk(rng, 3)
    u = np.cos(2 * disk.vertices[:, 0]) * np.exp(disk.vertices[:, 1])
    metric = metric_from_hessian(disk, recover_hessian(disk, u))
    eigs = np.linalg.eigvalsh(metric.values)
    out.append(CheckResult("mmpde", "metric SPD", bool(eigs.min() > 0), f"min eig {eigs.min():.3e}"))
    x = disk.vertices.copy()
    free = np.flatnonzero(~disk.boundary)
    x[free] += 0.05 * mesh_stats(disk).a_h * rng.uniform(-1, 1, size=(len(free), 2))
    g = energy_gradient(disk, metric, x)[free]
    eps = 1e-6 * mesh_stats(disk).a_h
    fd = np.zeros_like(g)
    for a, i in enumerate(free):
        for k in range(2):
            xp, xm = x.copy(), x.copy()
            xp[i, k] += eps
            xm[i, k] -= eps
            fd[a, k] = (mesh_energy(disk, metric, xp) - mesh_energy(disk, metric, xm)) / (2 * eps)
    rel = float(np.abs(g - fd).max() / np.abs(fd).max())
    out.append(CheckResult("mmpde", "analytic vs finite-difference gradient", rel <= 1e-6, f"rel diff {rel:.1e}"))
    from .adapt import MotionReport

    report = MotionReport()
    moved = integrate_mmpde(disk, metric, MmpdeConfig(), report)
    descent = bool(np.all(np.diff(report.energy_history) <= 1e-8 * abs(report.energy_start)))
    same = np.array_equal(moved.elements, disk.elements)
    out.append(CheckResult("mmpde", "energy descent", descent, f"{report.energy_start:.6g} -> {report.energy_end:.6g}"))
    out.append(CheckResult("mmpde", "connectivity preserved", same))
    return out


SUITES = {
    "toeplitz": suite_toeplitz,
    "symbol": suite_symbol,
    "transfer": suite_transfer,
    "solver": suite_solver,
    "mmpde": suite_mmpde,
}


def run_checks(suites=None, seed=0):
    results = []
    for name in suites or SUITES:
        if name not in SUITES:
            raise KeyError(name)
        results.extend(SUITES[name](np.random.default_rng(seed)))
    return results
