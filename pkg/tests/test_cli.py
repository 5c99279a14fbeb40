import json
import subprocess
import sys

import pytest

from conftest import small_config
from wakeadapt import cli
from wakeadapt.gp import GpNumericalError


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "quick.toml"
    small_config(iterations=2).save(path)
    return path


def test_init_writes_loadable_config(tmp_path, capsys):
    target = tmp_path / "sub" / "c.toml"
    assert cli.main(["init", "--config", str(target), "--seed", "4"]) == 0
    assert "seed = 4" in target.read_text()


def test_run_then_resume(config_file, tmp_path):
    out = tmp_path / "run"
    assert cli.main(["run", "--config", str(config_file), "--out", str(out), "--stop-after", "1"]) == 0
    assert not (out / "summary.json").exists()
    assert cli.main(["run", "--resume", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["iterations"] == 2

    full = tmp_path / "full"
    assert cli.main(["run", "--config", str(config_file), "--out", str(full)]) == 0
    assert (full / "iterations.csv").read_bytes() == (out / "iterations.csv").read_bytes()


def test_seed_override(config_file, tmp_path):
    out = tmp_path / "s"
    assert cli.main(["run", "--config", str(config_file), "--seed", "11", "--out", str(out)]) == 0
    assert json.loads((out / "summary.json").read_text())["seed"] == 11


def test_slice_and_oracle(config_file, tmp_path, capsys):
    out = tmp_path / "run"
    cli.main(["run", "--config", str(config_file), "--out", str(out)])
    target = tmp_path / "row1.csv"
    assert cli.main(["slice", "--resume", str(out), "--row", "1", "--points", "7",
                     "--out", str(target)]) == 0
    assert len(target.read_text().splitlines()) == 8
    capsys.readouterr()
    assert cli.main(["oracle", "--resolution", "3", "--out", str(tmp_path / "o")]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["gain"] > 0 and (tmp_path / "o" / "oracle.json").exists()


def test_compare(config_file, tmp_path):
    c2 = tmp_path / "bo.toml"
    small_config(iterations=1, scheme="bo").save(c2)
    c1 = tmp_path / "ma.toml"
    small_config(iterations=1).save(c1)
    assert cli.main(["compare", "--config", str(c1), "--config", str(c2),
                     "--out", str(tmp_path / "cmp")]) == 0
    assert (tmp_path / "cmp" / "comparison.csv").exists()


@pytest.mark.parametrize("argv", [
    ["run"],
    ["run", "--config", "does-not-exist.toml"],
    ["slice"],
    ["slice", "--resume", "nowhere"],
])
def test_config_errors_exit_2(argv, capsys):
    assert cli.main(argv) == 2
    assert "configuration error" in capsys.readouterr().err


def test_invalid_value_exit_2(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text('scheme = "pso"\n')
    assert cli.main(["run", "--config", str(bad)]) == 2


def test_numerical_failure_exit_3(config_file, tmp_path, monkeypatch):
    def boom(*args, **kwargs):
        raise GpNumericalError("Cholesky failed after the full jitter ladder")

    monkeypatch.setattr(cli, "run_campaign", boom)
    assert cli.main(["run", "--config", str(config_file), "--out", str(tmp_path)]) == 3


def test_console_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "wakeadapt.cli", "init", "--config",
                          str(tmp_path / "x.toml")], capture_output=True, text=True)
    assert out.returncode == 0 and (tmp_path / "x.toml").exists()
