"""Config schema validation and the packaged default file."""

import importlib.resources

import pytest

from tendonsim.config import FullConfig, load_config, parse_config
from tendonsim.errors import ConfigError


def default_yaml_path():
    return importlib.resources.files("tendonsim") / "configs" / "default.yaml"


def test_empty_config_is_all_defaults(tmp_path):
    path = tmp_path / "empty.yaml"
    path.write_text("")
    assert load_config(path) == FullConfig()
    assert load_config(None) == FullConfig()


def test_packaged_default_file_matches_defaults():
    cfg = load_config(default_yaml_path())
    assert cfg == FullConfig()


def test_section_override():
    cfg = parse_config({"plant": {"kind": "finger", "spool_radius": 0.02},
                        "ppo": {"total_updates": 50}})
    assert cfg.plant.kind == "finger"
    assert cfg.plant.spool_radius == 0.02
    assert cfg.ppo.total_updates == 50
    assert cfg.servo == FullConfig().servo


def test_unknown_section_rejected():
    with pytest.raises(ConfigError, match="unknown config section 'motor'"):
        parse_config({"motor": {}})


def test_unknown_key_names_path():
    with pytest.raises(ConfigError, match=r"plant\.stifness: unknown key"):
        parse_config({"plant": {"stifness": 100.0}})


def test_negative_stiffness_names_field():
    with pytest.raises(ConfigError, match=r"plant\.stiffness"):
        parse_config({"plant": {"stiffness": -1.0}})


def test_type_errors_name_path():
    with pytest.raises(ConfigError, match=r"servo\.kp: expected a number"):
        parse_config({"servo": {"kp": "fast"}})
    with pytest.raises(ConfigError, match=r"env\.n_envs: expected an integer"):
        parse_config({"env": {"n_envs": 4.5}})
    with pytest.raises(ConfigError, match=r"env\.randomize: expected true/false"):
        parse_config({"env": {"randomize": 1}})
    with pytest.raises(ConfigError, match=r"plant\.link_lengths: expected 2"):
        parse_config({"plant": {"link_lengths": [0.05]}})
    with pytest.raises(ConfigError, match=r"plant\.joint_limits\[0\]"):
        parse_config({"plant": {"joint_limits": [0.1, [0.0, 1.0]]}})


def test_patience_accepts_null_and_int():
    assert parse_config({"train": {"patience": None}}).train.patience is None
    assert parse_config({"train": {"patience": 5}}).train.patience == 5
    with pytest.raises(ConfigError, match=r"train\.patience"):
        parse_config({"train": {"patience": 2.5}})


def test_rate_divisibility_check():
    with pytest.raises(ConfigError, match=r"env\.sim_rate_hz"):
        parse_config({"env": {"sim_rate_hz": 410}})


def test_root_must_be_mapping(tmp_path):
    path = tmp_path / "list.yaml"
    path.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError, match="mapping"):
        load_config(path)


def test_invalid_yaml_reports_path(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("plant: {kind: [unclosed\n")
    with pytest.raises(ConfigError, match="not valid YAML"):
        load_config(path)


def test_fingerprint_tracks_content():
    base = FullConfig().fingerprint()
    assert base == FullConfig().fingerprint()
    changed = parse_config({"servo": {"kp": 31.0}}).fingerprint()
    assert changed != base
    assert len(base) == 64
