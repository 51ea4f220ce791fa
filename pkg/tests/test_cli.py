"""Command-line entry point: exit codes, outputs and determinism."""

from __future__ import annotations

import json
import subprocess
import sys

import pytest

from kinestat import cli, io

SHORT = """\
seed: 7
trajectory:
  duration: 3.0
  takeoff_time: 0.5
  takeoff_duration: 1.0
  landing_time: 10.0
filter:
  q_a: [0, 0, 0, 1.0e4]
  q_w: [0, 0, 0, 1.0e6]
  burn_in: 1.0
"""


@pytest.fixture()
def short_cfg(tmp_path):
    p = tmp_path / "short.yaml"
    p.write_text(SHORT)
    return str(p)


@pytest.fixture()
def short_log(tmp_path, short_cfg):
    out = tmp_path / "log.csv"
    assert cli.main(["simulate", "--config", short_cfg, "--out", str(out)]) == 0
    return out


def test_simulate_same_seed_same_bytes(tmp_path, short_cfg, short_log):
    again = tmp_path / "again.csv"
    assert cli.main(["simulate", "--config", short_cfg, "--out", str(again)]) == 0
    assert again.read_bytes() == short_log.read_bytes()
    other = tmp_path / "other.csv"
    assert cli.main(["simulate", "--config", short_cfg, "--seed", "8", "--out", str(other)]) == 0
    assert other.read_bytes() != short_log.read_bytes()
    meta = json.loads(io.meta_path(short_log).read_text())
    assert meta["config"]["seed"] == 7


def test_estimate_writes_table_and_report(tmp_path, short_cfg, short_log):
    out = tmp_path / "est.csv"
    assert cli.main(["estimate", str(short_log), "--config", short_cfg, "--out", str(out)]) == 0
    tab = io.read_table(out)
    assert {"t", "p_x", "R_rotvec_z", "3sigma_p_0"} <= set(tab)
    rep = json.loads((tmp_path / "est_report.json").read_text())
    # Three seconds is mostly the offset transient; accuracy is checked elsewhere.
    assert max(rep["rmse_p"]) < 0.5


def test_estimate_input_to_stdout(short_cfg, short_log, capsys):
    code = cli.main(["estimate", str(short_log), "--config", short_cfg, "--formulation", "input"])
    assert code == 0
    assert "rmse_p = " in capsys.readouterr().out


def test_benchmark_reports_ratio(short_cfg, short_log, capsys):
    assert cli.main(["benchmark", str(short_log), "--config", short_cfg]) == 0
    assert "per_step_ratio_state_over_input = " in capsys.readouterr().out


def test_observability_writes_trial_rows(tmp_path):
    out = tmp_path / "obs"
    assert cli.main(["observability", "--mode", "lemma1", "--trials", "5", "--out", str(out)]) == 0
    rows = (tmp_path / "obs.trials.csv").read_text().splitlines()
    assert len(rows) == 1 + 5
    assert json.loads((tmp_path / "obs.json").read_text())


def test_usage_errors_exit_1(tmp_path, short_log, capsys):
    assert cli.main(["estimate", str(short_log), "--config", str(tmp_path / "none.yaml")]) == 1
    bad = tmp_path / "bad.yaml"
    bad.write_text("filter:\n  q_a: [1, 2]\n")
    assert cli.main(["estimate", str(short_log), "--config", str(bad)]) == 1
    assert "q_a has 2 entries" in capsys.readouterr().err
    assert cli.main(["estimate", str(short_log), "--formulation", "inter-imu"]) == 1
    assert cli.main(["calibrate-imu", str(short_log)]) == 1
    assert cli.main(["observability", "--mode", "input", "--trials", "0"]) == 1
    assert cli.main(["simulate"]) == 1
    assert cli.main(["estimate", str(tmp_path / "missing.csv")]) == 1
    assert cli.main(["estimate", str(short_log), "--config", "@nope"]) == 1


def test_argument_errors_exit_1():
    with pytest.raises(SystemExit) as e:
        cli.main(["fly"])
    assert e.value.code == 1
    with pytest.raises(SystemExit) as e:
        cli.main(["observability", "--mode", "everything"])
    assert e.value.code == 1


def test_divergence_exits_2(tmp_path, short_cfg, short_log, capsys):
    lines = short_log.read_text().splitlines()
    header = lines[1].split(",")
    fields = lines[2 + 100].split(",")
    fields[header.index("a_m_x")] = "inf"
    lines[2 + 100] = ",".join(fields)
    short_log.write_text("\n".join(lines) + "\n")
    assert cli.main(["estimate", str(short_log), "--config", short_cfg]) == 2
    assert "diverged" in capsys.readouterr().err


def test_failed_probe_exits_2(tmp_path):
    cfg = tmp_path / "tol.yaml"
    cfg.write_text("observability:\n  rank_tol: 0.99\n")
    assert cli.main(["observability", "--mode", "lemma1", "--trials", "3", "--config", str(cfg)]) == 2


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "kinestat", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    for name in ("simulate", "estimate", "compare-filters", "observability", "calibrate-imu"):
        assert name in r.stdout
