import math

import numpy as np
import pytest

from gofd import cli
from gofd.errors import MeshMotionStalled
from gofd.io import read_convergence_csv


@pytest.fixture(autouse=True)
def cache_dir(tmp_path, monkeypatch):
    path = tmp_path / "cache"
    monkeypatch.setenv("GOFD_CACHE_DIR", str(path))
    return path


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def report(path):
    return dict(line.split("=", 1) for line in path.read_text().splitlines())


def adapt_rows(path):
    lines = path.read_text().splitlines()
    assert lines[0].split(",") == cli.ADAPT_HEADER
    return [dict(zip(cli.ADAPT_HEADER, line.split(","))) for line in lines[1:]]


# symbol


def test_symbol_prints_t0(capsys):
    code, out, _ = run(capsys, "symbol", "--dim", 1, "--s", 0.5, "--n", 8, "--method", "analytic")
    assert code == 0
    first = [line for line in out.splitlines() if line.startswith("T[0]")][0]
    assert float(first.split("=")[1]) == pytest.approx(4 / math.pi, abs=1e-9)
    assert sum(line.startswith("T[") for line in out.splitlines()) == 5


def test_symbol_order_out_of_range(capsys):
    code, _, err = run(capsys, "symbol", "--s", 1.5)
    assert code == 2
    assert "(0, 1)" in err


def test_symbol_cache_is_deterministic(capsys, cache_dir):
    argv = ("symbol", "--dim", 2, "--s", 0.3, "--n", 6, "--method", "trapezoid", "--m", 128)
    assert run(capsys, *argv)[0] == 0
    files = list(cache_dir.iterdir())
    assert len(files) == 1
    first = files[0].read_bytes()
    files[0].unlink()
    assert run(capsys, *argv)[0] == 0
    assert files[0].read_bytes() == first


def test_symbol_method_dimension_mismatch(capsys):
    assert run(capsys, "symbol", "--dim", 2, "--method", "filon")[0] == 2


# solve


def test_solve_refinement_reduces_error(capsys, tmp_path):
    errs = {}
    for n in (64, 256):
        out = tmp_path / f"n{n}"
        code, _, _ = run(capsys, "solve", "--dim", 1, "--s", 0.5, "--k", 0, "--mesh", f"interval:{n}", "--out", out)
        assert code == 0
        assert (out / "solution.vtk").is_file()
        errs[n] = float(report(out / "report.txt")["l2_error"])
    assert errs[256] < errs[64]


def test_solve_preconditioner_reduces_iterations(capsys, tmp_path):
    its = {}
    for pc in ("none", "stencil9"):
        out = tmp_path / pc
        code, _, _ = run(capsys, "solve", "--dim", 2, "--s", 0.9, "--mesh", "disk:14", "--precond", pc,
                         "--symbol-method", "trapezoid", "--symbol-m", 512, "--out", out)
        assert code == 0
        its[pc] = int(report(out / "report.txt")["iterations"])
    assert its["stencil9"] < its["none"]


def test_solve_missing_mesh_file(capsys, tmp_path):
    code, _, err = run(capsys, "solve", "--mesh", tmp_path / "absent.msh", "--out", tmp_path / "o")
    assert code == 2
    assert "not found" in err


def test_solve_dimension_mismatch(capsys, tmp_path):
    assert run(capsys, "solve", "--dim", 1, "--mesh", "disk:5", "--out", tmp_path)[0] == 2


def test_solve_not_converged_still_writes_report(capsys, tmp_path):
    code, _, _ = run(capsys, "solve", "--mesh", "interval:128", "--max-iter", 2, "--out", tmp_path)
    assert code == 3
    rep = report(tmp_path / "report.txt")
    assert rep["converged"] == "False"
    assert int(rep["iterations"]) == 2


# converge


def test_converge_synthetic_slope(capsys, tmp_path):
    code, _, _ = run(capsys, "converge", "--synthetic", "--out", tmp_path)
    assert code == 0
    _, slopes = read_convergence_csv(tmp_path / "convergence.csv")
    assert slopes["l2"] == pytest.approx(2.0, abs=1e-12)
    assert slopes["linf"] == pytest.approx(2.0, abs=1e-12)


@pytest.mark.parametrize("s,norm,lo,hi", [(0.5, "l2", 0.85, 1.15), (0.25, "linf", 0.1, 0.4)])
def test_converge_1d_slopes(capsys, tmp_path, s, norm, lo, hi):
    code, _, _ = run(capsys, "converge", "--dim", 1, "--s", s, "--resolutions", "64,128,256,512,1024",
                     "--no-timing", "--out", tmp_path)
    assert code == 0
    _, slopes = read_convergence_csv(tmp_path / "convergence.csv")
    assert lo <= slopes[norm] <= hi


def test_converge_csv_byte_identical(capsys, tmp_path):
    texts = []
    for i, jobs in enumerate((1, 3)):
        out = tmp_path / str(i)
        argv = ("converge", "--resolutions", "16,32,64", "--no-timing", "--jobs", jobs, "--out", out)
        assert run(capsys, *argv)[0] == 0
        texts.append((out / "convergence.csv").read_bytes())
    assert texts[0] == texts[1]


def test_converge_needs_three_resolutions(capsys, tmp_path):
    assert run(capsys, "converge", "--resolutions", "16,32", "--out", tmp_path)[0] == 2


# adapt


def test_adapt_beats_uniform(capsys, tmp_path):
    argv = ("--dim", 1, "--s", 0.25, "--mesh", "interval:64")
    code, _, _ = run(capsys, "adapt", *argv, "--lmax", 5, "--no-timing", "--out", tmp_path / "a")
    assert code == 0
    rows = adapt_rows(tmp_path / "a" / "adapt.csv")
    assert [int(r["round"]) for r in rows] == [1, 2, 3, 4, 5]
    assert all(int(r["ne"]) == 64 for r in rows)
    assert (tmp_path / "a" / "final_mesh.vtk").is_file()
    assert all((tmp_path / "a" / f"round_{i}.vtk").is_file() for i in range(1, 6))
    assert run(capsys, "solve", *argv, "--out", tmp_path / "u")[0] == 0
    uniform = float(report(tmp_path / "u" / "report.txt")["l2_error"])
    l2 = [float(r["l2_error"]) for r in rows]
    assert l2[-1] < uniform
    # after the second round the error settles: no round is more than 5% worse
    for prev, cur in zip(l2[1:], l2[2:]):
        assert cur <= 1.05 * prev


def test_adapt_single_round(capsys, tmp_path):
    code, out, _ = run(capsys, "adapt", "--mesh", "interval:32", "--lmax", 1, "--no-timing", "--out", tmp_path)
    assert code == 0
    assert len(adapt_rows(tmp_path / "adapt.csv")) == 1
    assert sum(line.startswith("round ") for line in out.splitlines()) == 1


def test_adapt_csv_byte_identical(capsys, tmp_path):
    texts = []
    for i in range(2):
        out = tmp_path / str(i)
        assert run(capsys, "adapt", "--mesh", "interval:32", "--lmax", 2, "--no-timing", "--out", out)[0] == 0
        texts.append((out / "adapt.csv").read_bytes())
    assert texts[0] == texts[1]


def test_adapt_stall_exit_code(capsys, tmp_path, monkeypatch):
    import gofd.adapt as adapt

    def stall(mesh, metric, config=None, report=None):
        raise MeshMotionStalled("forced stall", mesh=mesh)

    monkeypatch.setattr(adapt, "integrate_mmpde", stall)
    code, _, err = run(capsys, "adapt", "--mesh", "interval:32", "--lmax", 3, "--out", tmp_path)
    assert code == 4
    assert "stalled" in err
    assert len(adapt_rows(tmp_path / "adapt.csv")) >= 1


# check


def test_check_single_suite(capsys):
    code, out, _ = run(capsys, "check", "--suite", "toeplitz")
    assert code == 0
    rows = [line for line in out.splitlines() if line.startswith(("PASS", "FAIL"))]
    assert rows and all(line.split()[1] == "toeplitz" for line in rows)


def test_check_seed_reproducible(capsys):
    first = run(capsys, "check", "--suite", "transfer", "--seed", 7)
    second = run(capsys, "check", "--suite", "transfer", "--seed", 7)
    assert first[0] == 0
    assert first == second


def test_check_unknown_suite(capsys):
    assert run(capsys, "check", "--suite", "nonsense")[0] == 2


def test_check_default_all_pass(capsys):
    code, out, _ = run(capsys, "check")
    assert code == 0
    assert "FAIL" not in out


# configuration


def test_config_file_and_flag_precedence(capsys, tmp_path):
    config = tmp_path / "run.cfg"
    config.write_text("s = 0.3\nmesh = interval:32\nno_timing = true\n")
    args = cli.parse_args(["converge", "--config", str(config)])
    assert args.s == 0.3 and args.mesh == "interval:32" and args.no_timing is True
    args = cli.parse_args(["converge", "--config", str(config), "--s", "0.7"])
    assert args.s == 0.7 and args.mesh == "interval:32"


def test_config_unknown_key(capsys, tmp_path):
    config = tmp_path / "run.cfg"
    config.write_text("colour = blue\n")
    assert run(capsys, "solve", "--config", config)[0] == 2


def test_config_suite_list(tmp_path):
    config = tmp_path / "run.cfg"
    config.write_text("suite = toeplitz, symbol\nseed = 3\n")
    args = cli.parse_args(["check", "--config", str(config)])
    assert args.suite == ["toeplitz", "symbol"]
    assert args.seed == 3


def test_solve_is_deterministic(capsys, tmp_path):
    vtk = []
    for i in range(2):
        assert run(capsys, "solve", "--mesh", "interval:48", "--out", tmp_path / str(i))[0] == 0
        vtk.append((tmp_path / str(i) / "solution.vtk").read_bytes())
    assert vtk[0] == vtk[1]
    assert np.isfinite(float(report(tmp_path / "0" / "report.txt")["l2_error"]))
