from __future__ import annotations

import csv
import subprocess
import sys

import pytest

from arterialsim.cli import main
from arterialsim.scenario import build_arterial, build_single_intersection, save_scenario


@pytest.fixture
def single(tmp_path):
    path = tmp_path / "single.scn"
    save_scenario(build_single_intersection(duration=60.0), path)
    return path


def test_run_writes_outputs(single, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", str(single), "--out", str(out), "--window", "30", "--trajectories", "--trajectory-every", "10"]) == 0
    for name in ("throughput.csv", "crossings.csv", "queues.csv", "platoon_events.csv", "trajectories.csv"):
        assert (out / name).exists(), name
    with open(out / "throughput.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert {r["detector_id"] for r in rows} == {"W_in/stop", "N_in/stop"}
    assert len(rows) == 4
    text = capsys.readouterr().out
    assert "steps          300" in text
    assert "I1:W_in" in text


def test_run_overrides_seed_and_duration(single, tmp_path, capsys):
    assert main(["run", str(single), "--out", str(tmp_path / "o"), "--duration", "10", "--seed", "3"]) == 0
    assert "steps          50" in capsys.readouterr().out


def test_sweep_prints_table_and_csv(single, tmp_path, capsys):
    assert main(["sweep", str(single), "--param", "a_max", "--values", "1.0,2.6", "--out", str(tmp_path)]) == 0
    text = capsys.readouterr().out
    assert text.splitlines()[0].split() == ["a_max", "outcome"]
    assert (tmp_path / "sweep_a_max.csv").exists()


def test_capacity_command(tmp_path, capsys):
    path = tmp_path / "a.scn"
    save_scenario(build_arterial(1, 150.0, 0.0), path)
    assert main(["capacity", str(path), "--hours", "2", "--warmup", "1", "--dt", "0.5"]) == 0
    text = capsys.readouterr().out
    assert "intersection I0" in text and "total" in text


def test_bad_parameter_exit_code(single, capsys):
    assert main(["sweep", str(single), "--param", "colour", "--values", "1"]) == 2
    assert "colour" in capsys.readouterr().err


def test_malformed_file_exit_code(tmp_path, capsys):
    path = tmp_path / "bad.scn"
    path.write_text("{\n  oops\n}\n")
    assert main(["run", str(path)]) == 2
    assert "bad.scn:2:" in capsys.readouterr().err


def test_missing_file_exit_code(tmp_path):
    assert main(["run", str(tmp_path / "none.scn")]) == 2


def test_module_entry_point(single, tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "arterialsim.cli", "run", str(single), "--out", str(tmp_path / "m"), "--duration", "2"],
        capture_output=True, text=True, check=False,
    )
    assert proc.returncode == 0, proc.stderr
    assert "hash" in proc.stdout
