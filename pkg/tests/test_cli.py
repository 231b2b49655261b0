import csv
import json
import subprocess
import sys

import pytest

from netstab import cli
from netstab.errors import NumericalError
from netstab.io import read_config, read_trace_csv


def run_cli(*argv):
    return cli.main([str(a) for a in argv])


def test_run_fig4_converges(tmp_path, capsys):
    assert run_cli("run", "--config", "fig4", "--out", tmp_path) == 0
    printed = capsys.readouterr().out.split()
    assert printed == [str(tmp_path / n) for n in ("trace.csv", "metrics.json", "config.toml")]
    metrics = json.loads((tmp_path / "metrics.json").read_text())
    assert metrics["converged"] is True
    assert len(read_trace_csv(tmp_path / "trace.csv")) == 3000
    assert read_config(tmp_path / "config.toml").estimator == "none"


def test_run_with_overrides_reproduces_fig5(tmp_path):
    assert run_cli("run", "--config", "fig4", "--out", tmp_path,
                   "--set", "delays.n=10", "--set", "delays.m=20") == 0
    assert json.loads((tmp_path / "metrics.json").read_text())["converged"] is False
    config = read_config(tmp_path / "config.toml")
    assert (config.delays.n, config.delays.m) == (10, 20)


def test_outputs_are_deterministic(tmp_path):
    for name in ("a", "b"):
        assert run_cli("run", "--config", "fig6", "--out", tmp_path / name,
                       "--set", "steps=300", "--seed", 4) == 0
    for name in ("trace.csv", "metrics.json", "config.toml"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_compare(tmp_path, capsys):
    assert run_cli("compare", "--config", "fig6", "--out", tmp_path, "--set", "steps=200") == 0
    table = capsys.readouterr().out
    for kind in ("none", "ekf_naive", "popf"):
        assert kind in table
        assert (tmp_path / kind / "trace.csv").exists()
    with (tmp_path / "comparison.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert [r["estimator"] for r in rows] == ["none", "ekf_naive", "popf"]
    with (tmp_path / "errors.csv").open() as fh:
        header = next(csv.reader(fh))
        assert len(fh.readlines()) == 200
    assert header[:2] == ["step", "time"] and "err_theta_popf" in header


def test_compare_without_delay_agrees(tmp_path):
    assert run_cli("compare", "--config", "fig6", "--out", tmp_path,
                   "--set", "delays.n=0", "--set", "delays.m=0", "--set", "noise.enabled=false",
                   "--set", "steps=1000") == 0
    with (tmp_path / "comparison.csv").open() as fh:
        verdicts = {r["converged"] for r in csv.DictReader(fh)}
    assert verdicts == {"True"}


def test_sweep(tmp_path):
    assert run_cli("sweep", "--config", "fig6", "--out", tmp_path, "--set", "steps=100",
                   "--key", "delays.m", "--values", "0", "5", "--seeds", 1, 2) == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["key"] == "delays.m"
    assert [r["value"] for r in summary["results"]] == ["0", "5"]
    assert read_config(tmp_path / "config_1.toml").delays.m == 5
    with (tmp_path / "sweep.csv").open() as fh:
        assert len(list(csv.DictReader(fh))) == 4


def test_config_errors_exit_2(tmp_path, capsys):
    assert run_cli("run", "--config", "fig6", "--out", tmp_path, "--set", "delays.n=-1") == 2
    assert "delays.n" in capsys.readouterr().err
    bad = tmp_path / "bad.toml"
    bad.write_text("steps = = 1\n")
    assert run_cli("run", "--config", bad, "--out", tmp_path) == 2
    assert "line 1" in capsys.readouterr().err
    assert run_cli("sweep", "--config", "fig6", "--out", tmp_path, "--key", "nope", "--values", "1") == 2
    assert not (tmp_path / "trace.csv").exists()


def test_numerical_failure_exits_3(tmp_path, monkeypatch):
    def boom(config):
        raise NumericalError("innovation covariance is singular", 1e18)

    monkeypatch.setattr(cli, "run_scenario", boom)
    assert run_cli("run", "--config", "fig6", "--out", tmp_path) == 3


def test_io_failure_exits_4(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert run_cli("run", "--config", "fig4", "--out", blocker / "sub", "--set", "steps=10") == 4
    assert run_cli("run", "--config", tmp_path / "missing.toml", "--out", tmp_path) == 4


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "netstab", "run", "--config", "fig4",
                           "--out", str(tmp_path), "--set", "steps=10"], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "trace.csv").exists()


def test_usage_error_exits_nonzero():
    with pytest.raises(SystemExit) as info:
        cli.main(["run"])
    assert info.value.code != 0
