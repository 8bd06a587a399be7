import json
from pathlib import Path

import pytest

from cli import build_parser, main

SMOKE = str(Path(__file__).resolve().parent.parent / "scenarios" / "smoke.env")


def test_simulate_writes_results(tmp_path, capsys):
    out = tmp_path / "run"
    code = main(["simulate", "--config", SMOKE, "--snr", "0,8", "--trials", "1", "--out", str(out), "--plot"])
    assert code == 0
    paths = json.loads(capsys.readouterr().out)
    assert set(paths) == {"records", "summary", "plot"}
    assert (out / "records.csv").exists()
    summary = json.loads((out / "summary.json").read_text())
    assert [point["snr_db"] for point in summary["schemes"]["ideal"]["points"]] == [0.0, 8.0]


def test_simulate_is_deterministic(tmp_path):
    for name in ("a", "b"):
        assert main(["simulate", "--config", SMOKE, "--trials", "1", "--seed", "3", "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a" / "records.csv").read_bytes() == (tmp_path / "b" / "records.csv").read_bytes()
    assert (tmp_path / "a" / "summary.json").read_bytes() == (tmp_path / "b" / "summary.json").read_bytes()


def test_sense_prints_report(capsys):
    assert main(["sense", "--config", SMOKE, "--snr", "12"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["snr_db"] == 12.0
    assert report["seed"] == 7


def test_design_prints_allocation(capsys):
    assert main(["design", "--config", SMOKE, "--tcrb", "1e12"]) == 0
    result = json.loads(capsys.readouterr().out)
    assert len(result["power_allocation"]) == 32 * 16


def test_infeasible_design_exits_with_error(capsys):
    assert main(["design", "--config", SMOKE, "--tcrb", "1e-30"]) == 2
    assert "T_CRB infeasible" in capsys.readouterr().err


def test_missing_config_exits_with_error(tmp_path, capsys):
    assert main(["simulate", "--config", str(tmp_path / "absent.env"), "--out", str(tmp_path)]) == 2
    assert "config file not found" in capsys.readouterr().err


def test_parser_requires_a_command():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])
