from pathlib import Path

import pytest

from app.core.errors import ConfigError
from app.services.scenario_loader import load_scenario, parse_scenario

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


def test_reference_scenario_file():
    cfg = load_scenario(str(SCENARIOS / "reference.env"))
    assert (cfg.M, cfg.N, cfg.delta_f) == (128, 20, 6e3)
    assert (cfg.n_tx, cfg.n_rx, cfg.n_ue) == (64, 64, 4)
    assert cfg.f_c == 3e9
    assert cfg.tx_power_dbm == 40.0
    assert cfg.tx_power_w == pytest.approx(10.0)
    ue, reflector = cfg.targets
    assert ue.is_ue and ue.heading_deg is None
    assert ue.speed == (10.0, 15.0)
    assert not reflector.is_ue
    assert cfg.ue_indices == [0]


def test_smoke_scenario_file():
    cfg = load_scenario(str(SCENARIOS / "smoke.env"))
    assert cfg.snr_grid_db == [0.0, 4.0, 8.0]
    assert cfg.targets[0].position == (30.0, 200.0)


def test_overrides_replace_file_values():
    cfg = load_scenario(str(SCENARIOS / "smoke.env"), {"snr_grid_db": "3,9", "trials": 5, "seed": None})
    assert cfg.snr_grid_db == [3.0, 9.0]
    assert cfg.trials == 5
    assert cfg.seed == 7


def test_parse_targets_and_lists():
    cfg = parse_scenario(
        {
            "M": "16",
            "N": "8",
            "schemes": "ideal, pilot",
            "target.0.position": "10, 300",
            "target.0.heading_deg": "180",
            "target.1.position": "-50, 900",
            "target.1.is_ue": "false",
        }
    )
    assert cfg.schemes == ["ideal", "pilot"]
    assert cfg.targets[0].heading_deg == 180.0
    assert cfg.targets[1].is_ue is False


def test_target_indices_must_be_contiguous():
    with pytest.raises(ConfigError, match="target indices"):
        parse_scenario({"target.0.position": "0, 100", "target.2.position": "0, 200"})


def test_malformed_target_key():
    with pytest.raises(ConfigError, match="malformed target key"):
        parse_scenario({"target.position": "0, 100"})


def test_unknown_key_is_rejected():
    with pytest.raises(ConfigError, match="invalid scenario"):
        parse_scenario({"frame_size": "12", "target.0.position": "0, 100"})


def test_key_without_value():
    with pytest.raises(ConfigError, match="has no value"):
        parse_scenario({"M": None, "target.0.position": "0, 100"})


@pytest.mark.parametrize(
    "key, value",
    [
        ("target.0.position", "0, 0"),
        ("target.0.position", "100, -5"),
        ("target.0.speed", "20, 10"),
        ("target.0.rcs", "0"),
        ("snr_mode", "decibel"),
        ("M", "1"),
    ],
)
def test_invalid_values(key, value):
    values = {"target.0.position": "0, 100", key: value}
    with pytest.raises(ConfigError):
        parse_scenario(values)


def test_speed_above_tenth_of_light_speed():
    with pytest.raises(ConfigError):
        parse_scenario({"c": "1000", "target.0.position": "0, 100", "target.0.speed": "10, 150"})


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_scenario(str(tmp_path / "absent.env"))


def test_comments_and_blank_lines(tmp_path):
    path = tmp_path / "scenario.env"
    path.write_text("# header\n\nM = 16\nN = 8  # inline\ntarget.0.position = 5, 400\n")
    cfg = load_scenario(str(path))
    assert (cfg.M, cfg.N) == (16, 8)
