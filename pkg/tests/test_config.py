import json

import pytest

from beamsched.config import DESK, FULL, ConfigError, ScenarioConfig, env_overrides, load_config


def test_desk_and_full_presets():
    assert (DESK.num_beams, DESK.users_per_beam, DESK.window_slots) == (7, 15, 50)
    assert FULL.num_users == 770
    assert FULL.window_slots == 500
    assert DESK.max_power_w == pytest.approx(70.0, rel=1e-3)  # 18.45 dBW


@pytest.mark.parametrize(
    "change, field",
    [
        ({"num_beams": 0}, "num_beams"),
        ({"window_slots": 0}, "window_slots"),
        ({"max_power_w": -1.0}, "max_power_w"),
        ({"noise_variance_w": 0.0}, "noise_variance_w"),
        ({"bandwidth_mhz": 0.0}, "bandwidth_mhz"),
        ({"qos_slots_range": (5, 2)}, "qos_slots_range"),
        ({"qos_slots_range": (0, 60)}, "qos_slots_range"),
        ({"rx_antenna_efficiency": 1.5}, "rx_antenna_efficiency"),
        ({"fixed_power_rule": "loud"}, "fixed_power_rule"),
    ],
)
def test_invalid_values_name_the_field(change, field):
    with pytest.raises(ConfigError) as exc:
        DESK.replace(**change)
    assert exc.value.field == field


def test_yaml_and_json_round_trip(tmp_path):
    y = tmp_path / "c.yaml"
    y.write_text("num_beams: 3\nusers_per_beam: 2\nqos_slots_range: [1, 4]\n")
    cfg = load_config(y, environ={})
    assert (cfg.num_beams, cfg.users_per_beam, cfg.qos_slots_range) == (3, 2, (1, 4))
    j = tmp_path / "c.json"
    j.write_text(json.dumps(cfg.to_dict()))
    assert load_config(j, environ={}) == cfg


def test_preset_key(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("preset: full\nwindow_slots: 100\n")
    cfg = load_config(p, environ={})
    assert cfg.users_per_beam == 110 and cfg.window_slots == 100


def test_env_overrides_win_over_file(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("num_beams: 3\n")
    env = {"BEAMSCHED_NUM_BEAMS": "5", "BEAMSCHED_NU_IGNORES_BANDWIDTH": "true", "OTHER": "1"}
    assert env_overrides(env) == {"num_beams": "5", "nu_ignores_bandwidth": "true"}
    cfg = load_config(p, environ=env)
    assert cfg.num_beams == 5 and cfg.nu_ignores_bandwidth is True


def test_unknown_key_and_bad_values(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("num_beemz: 3\n")
    with pytest.raises(ConfigError) as exc:
        load_config(p, environ={})
    assert exc.value.field == "num_beemz"
    with pytest.raises(ConfigError) as exc:
        load_config(None, environ={"BEAMSCHED_WINDOW_SLOTS": "many"})
    assert exc.value.field == "window_slots"
    p.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        load_config(p, environ={})


def test_derived_quantities():
    assert DESK.wavelength_m == pytest.approx(299_792_458.0 / 19.95e9)
    assert DESK.theta_3db_rad == pytest.approx(150e3 / 35_786e3, rel=1e-5)
    assert isinstance(DESK, ScenarioConfig)
