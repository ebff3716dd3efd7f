import numpy as np
import pytest
# custom fxs
from scripts.utils.config_tools import (CONFIG_DIR, GEOMETRY_DIR, RunConfig, ScenarioConfig, geometry_path,
                                        load_run_config, load_scenario_config, scenario_from_dict,
                                        scenario_to_dict)
from scripts.utils.errors import ConfigError


def write(tmp_path, text, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_shipped_run_file_holds_the_defaults():
    assert load_run_config(CONFIG_DIR / "run_default.yaml") == load_run_config() == RunConfig()


def test_shipped_scenario_files_load():
    assert load_scenario_config(CONFIG_DIR / "scenario_default.yaml") == ScenarioConfig()
    for name in ("LP", "NP", "NT", "exact_model"):
        cfg = load_scenario_config(CONFIG_DIR / "scenarios" / f"{name}.yaml")
        assert cfg.name == name
        assert geometry_path(cfg.geometry).exists()


def test_unknown_keys_are_rejected(tmp_path):
    with pytest.raises(ConfigError, match="filter"):
        load_run_config(write(tmp_path, "filter:\n  use_magnetometers: false\n"))
    with pytest.raises(ConfigError, match="unknown key"):
        load_scenario_config(write(tmp_path, "wind: 3\n"))


def test_malformed_and_missing_files(tmp_path):
    with pytest.raises(ConfigError, match="malformed"):
        load_run_config(write(tmp_path, "model: [order: 1\n"))
    with pytest.raises(ConfigError, match="not found"):
        load_run_config(tmp_path / "absent.yaml")
    with pytest.raises(ConfigError, match="mapping"):
        load_run_config(write(tmp_path, "noise: 3\n"))


def test_dotted_overrides():
    cfg = load_run_config(**{"model.order": 2, "filter.use_mag": False, "filter.aiding_seconds": None})
    assert cfg.model.order == 2
    assert cfg.filter.use_mag is False
    assert cfg.filter.aiding_seconds == 60.0
    assert load_run_config(alignment_tolerance=0.01).alignment_tolerance == 0.01
    with pytest.raises(ConfigError, match="override"):
        load_run_config(**{"filter.speed": 1.0})


@pytest.mark.parametrize("text", [
    "filter:\n  jacobians: exact\n",
    "model:\n  order: 0\n",
    "model:\n  anchors: some\n",
    "filter:\n  aiding_seconds: -1\n",
    "noise:\n  mag_std: -0.1\n",
    "gravity: [0.0, -9.81]\n",
])
def test_out_of_range_values(tmp_path, text):
    with pytest.raises(ConfigError):
        load_run_config(write(tmp_path, text))


def test_presets_fill_height_and_tilt(tmp_path):
    cfg = load_scenario_config(CONFIG_DIR / "scenarios" / "NT.yaml")
    assert cfg.trajectory.height == 0.75
    assert cfg.trajectory.tilt == 0.3
    explicit = load_scenario_config(write(tmp_path, "preset: LP\ntrajectory:\n  height: 0.6\n"))
    assert explicit.trajectory.height == 0.6
    assert explicit.trajectory.tilt == 0.0
    with pytest.raises(ConfigError, match="preset"):
        load_scenario_config(write(tmp_path, "preset: XL\n"))


def test_scenario_overrides():
    cfg = load_scenario_config(**{"seed": 9, "trajectory.laps": 2.0})
    assert cfg.seed == 9
    assert cfg.trajectory.laps == 2.0


def test_scenario_dict_round_trip():
    cfg = load_scenario_config(CONFIG_DIR / "scenarios" / "exact_model.yaml")
    values = scenario_to_dict(cfg)
    assert values["world"]["background"] == [15.0, 0.0, -40.0]
    assert scenario_to_dict(scenario_from_dict(values)) == values


def test_noise_blocks():
    noise = RunConfig().noise
    Ts = 0.01
    sa, sw, soa, sow = noise.imu_blocks(Ts)
    np.testing.assert_allclose(sa, 1e-4 / Ts * np.eye(3))
    np.testing.assert_allclose(sw, 1e-6 / Ts * np.eye(3))
    np.testing.assert_allclose(soa, 1e-8 * np.eye(3))
    Q = noise.process_covariance(Ts, kappa=8)
    assert Q.shape == (20, 20)
    np.testing.assert_array_equal(Q, np.diag(np.diag(Q)))
    np.testing.assert_allclose(np.diag(Q)[12:], noise.theta_std ** 2)
    P0 = RunConfig().init.covariance(8)
    assert P0.shape == (23, 23)
    assert P0[15, 15] == 1e2


def test_geometry_path(tmp_path):
    assert geometry_path("square_5") == GEOMETRY_DIR / "square_5.txt"
    assert geometry_path(tmp_path / "board.txt") == tmp_path / "board.txt"
