from __future__ import annotations

import csv
import io
import os
import subprocess
import sys

import pytest

from iontrap.circuits import DEFAULT_TABLE_TEXT
from iontrap.cli import (
    SUMMARY_FIELDS,
    TRACE_FIELDS,
    angle_grid,
    build_parser,
    fmt,
    grid_points,
    main,
    parse_seeds,
    parse_size,
)

TOY = """\
qubits 4
ROT q0 pi/2 pi/2
ROT q1 pi/2 pi/2
CNOT q0 q2
CCNOT q0 q1 q3
ROT q2 0.4 0.1
CNOT q3 q2
CNOT q1 q2
CCNOT q0 q1 q3
ROT q2 0.4 0.7
CNOT q3 q2
CNOT q0 q2
CCNOT q1 q2 q3
"""


@pytest.fixture
def toy(tmp_path):
    p = tmp_path / "toy.txt"
    p.write_text(TOY * 2)
    return p


def rows(text: str) -> list[dict[str, str]]:
    return list(csv.DictReader(io.StringIO(text)))


def test_helpers():
    assert parse_size("2G") == 2 * 1024**3
    assert parse_size("512MiB") == 512 * 1024**2
    assert parse_size("1000") == 1000
    assert parse_seeds("5,1-3,2") == [1, 2, 3, 5]
    assert fmt(0.1 + 0.2) == "0.3" and fmt(None) == "" and fmt(7) == "7"
    assert fmt(1 / 3) == "0.333333333333"


# ---------------------------------------------------------------------------
# run


def test_run_writes_trace_csv(toy, capsys):
    assert main(["run", "--circuit", str(toy), "--sigma", "pi/64", "--seeds", "1-2", "--stride", "5"]) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0] == ",".join(TRACE_FIELDS)
    data = rows(out)
    assert {r["seed"] for r in data} == {"1", "2"}
    first = [r for r in data if r["seed"] == "1"]
    assert [int(r["gate_index"]) for r in first] == [0, 5, 10, 15, 20, 24]
    assert first[0]["fidelity"] == "1" and first[0]["mode"] == "dense"
    assert first[0]["sigma_theta"] == fmt(3.141592653589793 / 64)
    for r in data:
        assert 0 <= float(r["fidelity"]) <= float(r["norm_sq"]) + 1e-9
        assert len(r["fidelity"].lstrip("0.").replace("e-", "")) <= 16


def test_run_is_byte_identical_across_repeats_and_workers(toy, tmp_path):
    outs = []
    for workers in ("1", "2", "max", "1"):
        out = tmp_path / f"w{len(outs)}.csv"
        argv = ["run", "--circuit", str(toy), "--sigma", "0.05", "--dec", "1e-3", "--seeds", "1-4",
                "--workers", workers, "-o", str(out)]
        assert main(argv) == 0
        outs.append(out.read_bytes())
    assert len(set(outs)) == 1


def test_run_auto_mode_uses_sparse_without_operational_error(toy, capsys):
    assert main(["run", "--circuit", str(toy), "--dec", "1e-2"]) == 0
    data = rows(capsys.readouterr().out)
    assert {r["mode"] for r in data} == {"sparse"}
    assert float(data[-1]["norm_sq"]) < 1


def test_run_rejects_lists_and_bad_input(toy, capsys):
    assert main(["run", "--circuit", str(toy), "--sigma", "0.1,0.2"]) == 2
    assert main(["run", "--circuit", str(toy), "--sigma", "bogus"]) == 2
    assert main(["run", "--circuit", str(toy), "--seeds", ","]) == 2
    assert main(["run", "--circuit", str(toy / "missing")]) == 2
    assert main(["run"]) == 2
    assert main(["run", "--circuit", str(toy), "--workers", "0"]) == 2
    capsys.readouterr()


def test_sparse_with_noise_needs_override(toy, capsys):
    argv = ["run", "--circuit", str(toy), "--sigma", "0.05", "--mode", "sparse"]
    assert main(argv) == 2
    assert "allow-sparse-noise" in capsys.readouterr().err
    assert main(argv + ["--allow-sparse-noise"]) == 0
    assert "warning" in capsys.readouterr().err


def test_memory_cap_gives_exit_3(toy, capsys):
    assert main(["run", "--circuit", str(toy), "--sigma", "0.05", "--memory-cap", "512"]) == 3
    assert "error" in capsys.readouterr().err


def test_grover_run_reports_iterations(capsys):
    assert main(["run", "-b", "grover", "--iterations", "2", "--stride", "1000"]) == 0
    data = rows(capsys.readouterr().out)
    marked = [r for r in data if r["marker"]]
    assert [r["marker"] for r in marked] == ["iteration_0", "iteration_1", "iteration_2"]
    assert all(r["success_prob"] for r in marked)


def test_emit_plot_writes_script(toy, tmp_path):
    out = tmp_path / "trace.csv"
    assert main(["run", "--circuit", str(toy), "-o", str(out), "--emit-plot"]) == 0
    script = tmp_path / "trace.plot.py"
    assert script.exists()
    compile(script.read_text(), str(script), "exec")


# ---------------------------------------------------------------------------
# sweep


def test_sweep_summary_rows(toy, capsys):
    argv = ["sweep", "--circuit", str(toy), "--sigma", "0,pi/64", "--dec", "0,1e-3", "--no-timing",
            "--stride", "10"]
    assert main(argv) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0] == ",".join(SUMMARY_FIELDS)
    data = rows(out)
    assert [r["param_point"] for r in data] == [
        f"sigma_theta={s};sigma_phi={s};dec={d}" for s in ("0", "pi/64") for d in ("0", "1e-3")
    ]
    assert data[0]["n_runs"] == "1" and data[0]["mean_final_fidelity"] == "1"
    assert data[1]["n_runs"] == "1" and float(data[1]["mean_final_fidelity"]) < 1
    assert int(data[2]["n_runs"]) >= 4
    assert all(r["wall_seconds"] == "0" for r in data)
    for r in data:
        assert float(r["ci_low"]) <= float(r["mean_final_fidelity"]) <= float(r["ci_high"])
        assert r["error_rate_per_gate"] != ""


def test_sweep_is_byte_identical_across_workers(toy, tmp_path):
    outs = []
    for workers in ("1", "2", "max"):
        out = tmp_path / f"s{workers}.csv"
        argv = ["sweep", "--circuit", str(toy), "--sigma-theta", "pi/64,pi/32", "--dec", "1e-3",
                "--correlate", "--no-timing", "--workers", workers, "-o", str(out)]
        assert main(argv) == 0
        outs.append(out.read_bytes())
    assert len(set(outs)) == 1
    data = rows(outs[0].decode())
    assert all(r["omega_max"] and r["omega_avg"] for r in data)


def test_sweep_usage_errors(toy, capsys):
    assert main(["sweep", "--circuit", str(toy)]) == 2
    assert main(["sweep", "--circuit", str(toy), "--sigma", ""]) == 2
    assert main(["sweep", "--circuit", str(toy), "--sigma", "0.1", "--correlate"]) == 2
    capsys.readouterr()


def test_sweep_capped_warning(toy, capsys):
    argv = ["sweep", "--circuit", str(toy), "--sigma", "0.3", "--ci", "1e-6", "--max-runs", "5", "--no-timing"]
    assert main(argv) == 0
    cap = capsys.readouterr()
    assert "warning" in cap.err
    assert rows(cap.out)[0]["n_runs"] == "5"


def test_config_file_supplies_defaults(toy, tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"# defaults\ncircuit = {toy}\nsigma_theta = pi/64\nseeds = 3-4\nstride = 12\n")
    assert main(["--config", str(cfg), "run", "--seeds", "7"]) == 0
    data = rows(capsys.readouterr().out)
    assert {r["seed"] for r in data} == {"7"}
    assert [r["gate_index"] for r in data] == ["0", "12", "24"]
    assert data[0]["sigma_theta"] == fmt(3.141592653589793 / 64)
    bad = tmp_path / "bad.cfg"
    bad.write_text("not a pair\n")
    assert main(["--config", str(bad), "run"]) == 2


# ---------------------------------------------------------------------------
# validate and info


def test_validate_default_tables(capsys):
    assert main(["validate"]) == 0
    out = capsys.readouterr().out
    for name in ("NOT", "CNOT", "CCNOT", "ROT", "CPHASE", "grover closed form", "modmult permutation"):
        assert name in out
    assert "FAIL" not in out


def test_corrupted_table_exits_1(tmp_path, capsys, toy):
    bad = tmp_path / "bad.txt"
    bad.write_text(DEFAULT_TABLE_TEXT.replace("CNOT       A    target   2*pi    0", "CNOT       A    target   2*pi+0.1    0"))
    assert main(["validate", "--tables", str(bad)]) == 1
    assert "FAIL" in capsys.readouterr().out
    assert main(["run", "--circuit", str(toy), "--tables", str(bad)]) == 1
    unparsable = tmp_path / "junk.txt"
    unparsable.write_text("NOT V target\n")
    assert main(["validate", "--tables", str(unparsable)]) == 2


def test_info_reports_counts(capsys):
    assert main(["info", "mult"]) == 0
    out = capsys.readouterr().out
    assert "qubits" in out and "pulses" in out and "published" in out
    assert main(["info", "factor57", "--memory-cap", "2G"]) == 0
    assert "EXCEEDS CAP" in capsys.readouterr().out


def test_module_entry_point():
    env = dict(os.environ, PYTHONWARNINGS="ignore")
    res = subprocess.run([sys.executable, "-m", "iontrap", "info", "mult"], capture_output=True, text=True, env=env)
    assert res.returncode == 0 and "pulses" in res.stdout
    res = subprocess.run([sys.executable, "-m", "iontrap", "bogus"], capture_output=True, text=True, env=env)
    assert res.returncode == 2


def test_sweep_grid_axes(toy):
    args = build_parser().parse_args(["sweep", "--circuit", str(toy), "--sigma", "a,b", "--sigma-phi", "c", "--dec", "0,1"])
    pts = grid_points(angle_grid(args))
    assert pts == [
        {"sigma_theta": t, "sigma_phi": "c", "dec": d} for t in ("a", "b") for d in ("0", "1")
    ]
