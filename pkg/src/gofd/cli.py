"""Command-line front end: symbol, solve, converge, adapt and check."""
import argparse
import csv
from pathlib import Path
import sys
import time

import numpy as np

from .errors import GofdError, MeshMotionStalled, NotConverged, ParseError

EXIT_OK, EXIT_NUMERIC, EXIT_USAGE, EXIT_NOT_CONVERGED, EXIT_STALLED = 0, 1, 2, 3, 4
MESH_KINDS = ("interval", "disk", "lshape", "ball")
KIND_DIM = {"interval": 1, "disk": 2, "lshape": 2, "ball": 3}
DEFAULT_MESH = {1: "interval:64", 2: "disk:10", 3: "ball:4"}
# canned (N_e, L2, Linf) rows with errors exactly proportional to h^2 in 1D
SYNTHETIC_ROWS = [(64, 1 / 64**2, 2 / 64**2), (128, 1 / 128**2, 2 / 128**2),
                  (256, 1 / 256**2, 2 / 256**2), (512, 1 / 512**2, 2 / 512**2)]


class UsageError(Exception):
    pass


def _order(text):
    s = float(text)
    if not 0 < s < 1:
        raise argparse.ArgumentTypeError(f"s must lie in the open interval (0, 1), got {text}")
    return s


def _positive_int(text):
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return n


def _positive_float(text):
    x = float(text)
    if not x > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return x


def _resolutions(text):
    try:
        values = [int(t) for t in text.replace(" ", "").split(",") if t]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of integers, got {text}") from None
    if len(values) < 3 or min(values) < 1:
        raise argparse.ArgumentTypeError("need at least three positive resolutions")
    return values


def _common(p, mesh=True):
    p.add_argument("--config", help="key=value file; flags given on the command line win")
    p.add_argument("--dim", type=int, choices=(1, 2, 3), default=1)
    p.add_argument("--s", type=_order, default=0.5, help="fractional order in (0, 1)")
    p.add_argument("--out", default="out", help="output directory (default ./out)")
    if not mesh:
        return
    p.add_argument("--k", type=int, default=0, help="Jacobi degree of the benchmark solution")
    p.add_argument("--rule", choices=("paper_default", "strict"), default="paper_default",
                   help="overlay spacing rule: h_FD about a_h, or the rank-guarantee bound")
    p.add_argument("--safety", type=_positive_float, default=1.1, help="overlay radius over half the bounding diagonal")
    p.add_argument("--rhs", choices=("grid_rhs", "mesh_rhs"), default="grid_rhs")
    p.add_argument("--precond", default="none", help="none, stencil3, stencil5, stencil7, stencil9 or stencil27")
    p.add_argument("--tol", type=_positive_float, default=1e-10)
    p.add_argument("--max-iter", type=_positive_int, default=5000)
    p.add_argument("--symbol-method", default=None)
    p.add_argument("--symbol-m", type=_positive_int, default=None)


def build_parser():
    parser = argparse.ArgumentParser(prog="gofd", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("symbol", help="compute and cache the symbol coefficients T")
    _common(p, mesh=False)
    p.add_argument("--n", type=_positive_int, default=8)
    p.add_argument("--m", type=_positive_int, default=None, help="quadrature points per axis")
    p.add_argument("--method", choices=("analytic", "trapezoid", "filon", "richardson", "multi"), default=None)
    p.add_argument("--levels", type=_positive_int, default=2)

    p = sub.add_parser("solve", help="one fixed-mesh solve of the benchmark problem")
    _common(p)
    p.add_argument("--mesh", default=None, help="kind:resolution (interval, disk, lshape, ball) or a mesh file")

    p = sub.add_parser("converge", help="convergence study over a list of resolutions")
    _common(p)
    p.add_argument("--mesh", default=None, help="mesh kind (interval, disk, lshape, ball)")
    p.add_argument("--resolutions", type=_resolutions, default=None)
    p.add_argument("--jobs", type=_positive_int, default=1, help="rows solved concurrently (default sequential)")
    p.add_argument("--synthetic", action="store_true", help="replay canned errors (slope exactly 2)")
    p.add_argument("--no-timing", action="store_true", help="write 0 in the seconds column")

    p = sub.add_parser("adapt", help="adaptive solve with moving-mesh rounds")
    _common(p)
    p.add_argument("--mesh", default=None)
    p.add_argument("--lmax", type=_positive_int, default=5)
    p.add_argument("--tau", type=_positive_float, default=1e-2)
    p.add_argument("--boundary", choices=("fixed", "slide"), default="fixed")
    p.add_argument("--no-timing", action="store_true", help="write 0 in the seconds column")

    p = sub.add_parser("check", help="desk-scale self checks")
    p.add_argument("--config")
    p.add_argument("--suite", action="append", default=None,
                   help="toeplitz, symbol, transfer, solver or mmpde (repeatable; default all)")
    p.add_argument("--seed", type=int, default=0)
    return parser


def parse_args(argv):
    """Parse twice so that config-file values become defaults under the flags."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        from .io import read_config

        try:
            config = read_config(args.config)
        except (OSError, ParseError) as exc:
            parser.error(f"cannot read config {args.config}: {exc}")
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = sorted(set(config) - known - {"config"})
        if unknown:
            parser.error(f"unknown config keys: {', '.join(unknown)}")
        if "suite" in config:
            config["suite"] = [s for s in config["suite"].replace(" ", "").split(",") if s]
        for action in sub._actions:
            if action.dest in config and action.nargs == 0:
                config[action.dest] = config[action.dest].lower() in ("1", "true", "yes", "on")
        sub.set_defaults(**config)
        args = parser.parse_args(argv)
    return args


def load_mesh(source, dim):
    from .mesh import generate_benchmark_mesh

    source = source or DEFAULT_MESH[dim]
    kind, sep, res = source.partition(":")
    if sep and kind in MESH_KINDS:
        try:
            n = int(res)
        except ValueError:
            raise UsageError(f"bad mesh resolution in {source!r}") from None
        if KIND_DIM[kind] != dim:
            raise UsageError(f"mesh kind {kind!r} is {KIND_DIM[kind]}-dimensional but --dim is {dim}")
        return generate_benchmark_mesh(kind, n)
    path = Path(source)
    if not path.is_file():
        raise UsageError(f"mesh file not found: {source}")
    from .io import read_mesh

    try:
        mesh = read_mesh(path)
    except ParseError as exc:
        raise UsageError(f"{source}: {exc}") from None
    if mesh.dim != dim:
        raise UsageError(f"mesh file is {mesh.dim}-dimensional but --dim is {dim}")
    return mesh


def _system_options(args):
    return dict(rule=args.rule, safety_factor=args.safety, symbol_method=args.symbol_method,
                symbol_m=args.symbol_m, cache=True)


def _solver_options(args):
    precond = None if args.precond == "none" else args.precond
    return dict(rhs_mode=args.rhs, precond=precond, tol=args.tol, max_iter=args.max_iter)


def _out(args):
    out = Path(args.out).resolve()
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_symbol(args):
    from .symbol import cache_path, cached_symbol, DEFAULT_M

    method = args.method or ("analytic" if args.dim == 1 else "multi")
    if method in ("analytic", "filon") and args.dim != 1:
        raise UsageError(f"method {method!r} is available in 1D only")
    sym = cached_symbol(args.dim, args.s, args.n, method, args.m, args.levels)
    m_key = 0 if method == "analytic" else (args.m or DEFAULT_M[args.dim])
    print(f"symbol d={args.dim} s={args.s!r} N={args.n} method={method} M={m_key}")
    print(f"cache {cache_path(args.dim, args.s, args.n, m_key, f'{method}{args.levels}')}")
    for p in list(np.ndindex(*sym.coefficients.shape))[:5]:
        print(f"T{list(p)} = {sym.at(p):.10g}")
    return EXIT_OK


def _report_lines(mesh, report, extra=()):
    lines = [f"n_vertices={mesh.n_vertices}", f"n_elements={mesh.n_elements}",
             f"iterations={report.iterations}", f"converged={report.converged}",
             f"final_residual={report.final_residual:.6e}", f"preconditioner={report.preconditioner}"]
    if report.errors:
        lines += [f"l2_error={report.errors['l2']:.6e}", f"linf_error={report.errors['linf']:.6e}"]
    lines += list(extra)
    return lines


def cmd_solve(args):
    from .io import write_vtk
    from .problems import make_benchmark, solve_benchmark

    mesh = load_mesh(args.mesh, args.dim)
    problem = make_benchmark(args.dim, args.s, args.k)
    out = _out(args)
    status = EXIT_OK
    try:
        u, report = solve_benchmark(problem, mesh, **_solver_options(args), **_system_options(args))
    except NotConverged as exc:
        u, report, status = exc.solution, exc.report, EXIT_NOT_CONVERGED
    write_vtk(out / "solution.vtk", mesh, {"u_h": u, "u_exact": problem.exact(mesh.vertices)})
    lines = _report_lines(mesh, report, [f"wall_time={report.wall_time:.3f}"])
    (out / "report.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return status


def cmd_converge(args):
    from .io import write_convergence_csv
    from .mesh import generate_benchmark_mesh
    from .problems import ConvergenceRow, ConvergenceTable, convergence_study, make_benchmark

    out = _out(args)
    if args.synthetic:
        table = ConvergenceTable()
        for ne, l2, linf in SYNTHETIC_ROWS:
            table.add(ConvergenceRow(ne, 1.0 / ne, l2, linf, 0, 0.0))
    else:
        kind = (args.mesh or DEFAULT_MESH[args.dim]).partition(":")[0]
        if kind not in MESH_KINDS or KIND_DIM[kind] != args.dim:
            raise UsageError(f"--mesh must be a {args.dim}-dimensional generated kind, got {args.mesh!r}")
        resolutions = args.resolutions or {1: [64, 128, 256, 512, 1024], 2: [10, 14, 20, 29], 3: [3, 4, 5]}[args.dim]
        meshes = [generate_benchmark_mesh(kind, n) for n in resolutions]
        problem = make_benchmark(args.dim, args.s, args.k)
        options = {**_solver_options(args), **_system_options(args)}
        table = convergence_study(problem, meshes, jobs=args.jobs, **options)
        if args.no_timing:
            for row in table.rows:
                row.seconds = 0.0
    write_convergence_csv(out / "convergence.csv", table)
    slopes = table.slopes
    for r in table.rows:
        flag = "" if r.converged else "  not converged"
        print(f"N_e={r.ne:8d}  L2={r.l2_error:.4e}  Linf={r.linf_error:.4e}  its={r.iterations}{flag}")
    print(f"slopes: l2={slopes['l2']:.4f} linf={slopes['linf']:.4f}")
    return EXIT_OK if all(r.converged for r in table.rows) else EXIT_NOT_CONVERGED


ADAPT_HEADER = ["round", "ne", "a_h", "l2_error", "linf_error", "iterations", "alpha", "motion_steps", "seconds"]


def cmd_adapt(args):
    from .adapt import MmpdeConfig, adapt_loop
    from .io import write_vtk
    from .problems import error_norms, make_benchmark, solve_benchmark

    mesh = load_mesh(args.mesh, args.dim)
    problem = make_benchmark(args.dim, args.s, args.k)
    out = _out(args)
    config = MmpdeConfig(tau=args.tau, l_max=args.lmax, boundary=args.boundary)
    options = {**_solver_options(args), **_system_options(args)}
    stamps = []

    def solve(m):
        stamps.append(time.perf_counter())
        return solve_benchmark(problem, m, **options)

    start = time.perf_counter()
    result = adapt_loop(problem, mesh, l_max=args.lmax, config=config, solve=solve)
    stamps.append(time.perf_counter())
    rows = []
    for i, r in enumerate(result.rounds, start=1):
        errors = r.errors or error_norms(r.mesh, r.solution, problem.exact)
        write_vtk(out / f"round_{i}.vtk", r.mesh, {"u_h": r.solution})
        seconds = 0.0 if args.no_timing else stamps[i] - stamps[i - 1]
        rows.append([i, r.n_elements, f"{r.a_h:.17g}", f"{errors['l2']:.17g}", f"{errors['linf']:.17g}",
                     r.iterations, f"{r.alpha:.17g}", r.motion.steps, f"{seconds:.17g}"])
        print(f"round {i}: N_e={r.n_elements} a_h={r.a_h:.3e} L2={errors['l2']:.4e} "
              f"Linf={errors['linf']:.4e} its={r.iterations} motion_steps={r.motion.steps}")
    if result.next_mesh is not None:
        write_vtk(out / "final_mesh.vtk", result.next_mesh)
    with open(out / "adapt.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ADAPT_HEADER)
        writer.writerows(rows)
    if not args.no_timing:
        print(f"total {time.perf_counter() - start:.1f} s")
    if result.stalled:
        print(f"adaptation stalled: {result.message}", file=sys.stderr)
        return EXIT_STALLED
    if result.rounds and not result.rounds[-1].converged:
        print(f"solver did not converge: {result.message}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_check(args):
    from .check import SUITES, run_checks

    unknown = [s for s in args.suite or () if s not in SUITES]
    if unknown:
        raise UsageError(f"unknown suite(s) {', '.join(unknown)}; choose from {', '.join(SUITES)}")
    results = run_checks(args.suite, seed=args.seed)
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.suite:9s} {r.name:{width}s}  {r.detail}")
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_NUMERIC


COMMANDS = {"symbol": cmd_symbol, "solve": cmd_solve, "converge": cmd_converge, "adapt": cmd_adapt, "check": cmd_check}


def main(argv=None):
    try:
        args = parse_args(sys.argv[1:] if argv is None else argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"gofd {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NotConverged as exc:
        print(f"gofd {args.command}: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    except MeshMotionStalled as exc:
        print(f"gofd {args.command}: {exc}", file=sys.stderr)
        return EXIT_STALLED
    except (GofdError, ArithmeticError, ValueError, MemoryError, np.linalg.LinAlgError) as exc:
        print(f"gofd {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
