import json

import pytest

from gaitforge.config import (ConfigError, RunConfig, config_from_dict, config_to_dict, load_config,
                              save_config)
from gaitforge.learner import PpoConfig
from gaitforge.physics import PhysicsConfig
from gaitforge.randomization import Curriculum


def test_roundtrip(tmp_path):
    cfg = RunConfig()
    save_config(cfg, tmp_path / "c.json")
    assert load_config(tmp_path / "c.json") == cfg
    assert config_from_dict(json.loads(json.dumps(config_to_dict(cfg)))) == cfg


def test_partial_documents_merge_with_defaults():
    cfg = config_from_dict({"seed": 4, "ppo": {"iterations": 7}, "physics": {"dt": 1e-3}})
    assert cfg.seed == 4
    assert cfg.ppo == PpoConfig(iterations=7)
    assert cfg.physics == PhysicsConfig(dt=1e-3)
    assert cfg.curriculum == Curriculum()


def test_defaults_come_from_owning_modules():
    cfg = RunConfig()
    assert cfg.physics == PhysicsConfig() and cfg.ppo == PpoConfig() and cfg.curriculum == Curriculum()
    assert len(cfg.library.vx_axis) == 11 and len(cfg.library.hz_axis) == 11
    assert cfg.library.hz_axis[0] == 0.70 and cfg.library.hz_axis[-1] == 0.95


@pytest.mark.parametrize("doc", [
    {"colour": 1},
    {"ppo": {"gamma": 1.5}},
    {"randomization": {"friction": [3.0, 0.5]}},
    {"model": "heavy"},
    {"reward": {"omega": [1, 0, 0]}},
])
def test_invalid_documents_raise(doc):
    with pytest.raises(ConfigError):
        config_from_dict(doc)


def test_missing_file_is_config_error(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.json")
