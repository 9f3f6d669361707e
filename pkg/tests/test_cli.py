import csv
import subprocess
import sys

import numpy as np
import pytest

from phhybrid.cli import KEYS, ConfigError, main, parse_config, run


def write(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return p


def read_csv(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# phhybrid")
    return list(csv.reader(lines[1:]))


def test_keys_exact():
    assert set(KEYS) == {
        "problem", "formulation", "mode", "n", "degree", "dt", "t_end", "profile",
        "gamma1", "c", "eps", "mu", "out_dir", "tol", "threads",
    }


def test_parse_defaults_and_overrides():
    cfg = parse_config("mode = sizes  # table\n\nproblem=maxwell\n", ["formulation=both"])
    assert cfg.n == (1, 2, 4, 8, 16) and cfg.kinds == ("primal", "dual")
    cfg = parse_config("mode=converge")
    assert cfg.n == (2, 4, 8)
    cfg = parse_config("mode=conserve\nn=3,5\ndt=0.5\nt_end=1")
    assert cfg.n == (3, 5) and cfg.dt == 0.5


@pytest.mark.parametrize(
    "text",
    ["bogus=1", "degree=2", "dt=abc", "mode=fast", "dt=0.3\nt_end=1", "n=0", "problem", "mu=-1", "threads=0"],
)
def test_parse_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_sizes_mode(tmp_path, capsys):
    cfg = write(tmp_path, f"mode=sizes\nproblem=wave\nformulation=dual\nout_dir={tmp_path / 'o'}\n")
    assert run(cfg) == 0
    rows = read_csv(tmp_path / "o" / "sizes.csv")
    assert rows[0] == ["n", "mixed_dofs", "hybrid_dofs", "ratio"]
    assert rows[1:] == [["1", "44", "8", "18"], ["2", "315", "27", "9"], ["4", "2429", "125", "5"],
                        ["8", "19161", "729", "4"], ["16", "152369", "4913", "3"]]
    assert "dual n=2" in capsys.readouterr().out


def test_sizes_both(tmp_path, capsys):
    cfg = write(tmp_path, f"mode=sizes\nproblem=maxwell\nformulation=both\nn=1,2\nout_dir={tmp_path}\n")
    assert run(cfg) == 0
    for kind in ("primal", "dual"):
        rows = read_csv(tmp_path / f"sizes_{kind}.csv")
        assert rows[1] == ["1", "43", "19", "44"] and rows[2] == ["2", "290", "98", "34"]
    assert "reference table lists 38%" in capsys.readouterr().out


def test_exit_code_config(tmp_path, capsys):
    assert run(write(tmp_path, "colour=red\n")) == 2
    assert run(write(tmp_path, "degree=2\n")) == 2
    assert run(tmp_path / "missing.cfg") == 2
    assert "config error" in capsys.readouterr().err


def test_conserve_homogeneous(tmp_path, capsys):
    out = tmp_path / "c"
    cfg = write(tmp_path, f"mode=conserve\nproblem=maxwell\nformulation=dual\nprofile=homogeneous\nn=1\ndt=0.1\nt_end=1\nout_dir={out}\n")
    assert run(cfg) == 0
    rows = read_csv(out / "steps.csv")
    assert rows[0] == ["formulation", "t", "H", "boundary_power", "residual", "div_norm"]
    H = np.array([float(r[2]) for r in rows[1:]])
    assert len(H) == 11
    assert np.max(np.abs(H - H[0])) / H[0] <= 1e-12
    div = np.array([float(r[5]) for r in rows[1:]])
    assert np.max(np.abs(div - div[0])) <= 1e-10


def test_deterministic_bytes(tmp_path):
    outs = []
    for i in range(2):
        out = tmp_path / f"o{i}"
        cfg = write(tmp_path, f"mode=equivalence\nproblem=wave\nformulation=primal\nn=1\ndt=0.1\nt_end=0.3\nout_dir={out}\n", f"{i}.cfg")
        assert run(cfg) == 0
        outs.append((out / "equivalence.csv").read_bytes())
    assert outs[0] == outs[1]
    rows = read_csv(tmp_path / "o0" / "equivalence.csv")
    assert len(rows) == 4 and all(float(r[2]) <= 1e-10 and float(r[3]) <= 1e-10 for r in rows[1:])


def test_converge_smoke(tmp_path):
    out = tmp_path / "v"
    cfg = write(tmp_path, f"mode=converge\nproblem=wave\nformulation=dual\nprofile=quadratic\nn=1,2\ndt=0.1\nt_end=0.2\nout_dir={out}\n")
    assert main([str(cfg)]) == 0
    rows = read_csv(out / "convergence.csv")
    assert rows[0] == ["formulation", "n", "h", "variable", "norm", "error"]
    assert {r[1] for r in rows[1:]} == {"1", "2"}
    rates = read_csv(out / "rates.csv")
    assert ["dual", "alpha", "H1"] in [r[:3] for r in rates[1:]]


@pytest.mark.parametrize("bad", ["c=inf", "mu=nan", "dt=nan"])
def test_non_finite_config(tmp_path, bad):
    cfg = write(tmp_path, f"mode=conserve\nn=1\ndt=0.1\nt_end=0.2\n{bad}\nout_dir={tmp_path}\n")
    assert run(cfg) == 2


def test_numeric_failure_exit(tmp_path, capsys, monkeypatch):
    import phhybrid.cli as cli
    from phhybrid.solver import SolverError

    def boom(*args, **kwargs):
        raise SolverError("non-finite values at step 4", step=4)

    monkeypatch.setattr(cli, "integrate", boom)
    cfg = write(tmp_path, f"mode=conserve\nn=1\ndt=0.1\nt_end=0.2\nout_dir={tmp_path}\n")
    assert run(cfg) == 3
    assert "step 4" in capsys.readouterr().err


def test_module_entry(tmp_path):
    cfg = write(tmp_path, f"mode=sizes\nn=1\nout_dir={tmp_path}\n")
    proc = subprocess.run([sys.executable, "-m", "phhybrid", str(cfg)], capture_output=True, text=True)
    assert proc.returncode == 0
    assert (tmp_path / "sizes.csv").exists()
