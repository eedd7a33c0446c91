"""RunConfig: defaults, validation, YAML loading, override precedence."""

import pytest

from videolane.config import RunConfig, config_from_dict, load_config
from videolane.errors import ConfigError, IoError


class TestValidation:
    def test_defaults_construct(self):
        cfg = RunConfig()
        assert cfg.k == 32 and cfg.m == 4 and cfg.s == 3

    @pytest.mark.parametrize("kwargs", [
        {"k": 0},
        {"k": 2.5},
        {"m": -1},
        {"s": 0},
        {"prob_threshold": 0.0},
        {"prob_threshold": 1.0},
        {"alpha": 1.5},
        {"gamma": -0.1},
        {"momentum": 1.0},
        {"ild_epochs": 0},
        {"ild_lr": 0.0},
        {"reg_weight": -1.0},
        {"rank": 0},
        {"ridge": 0.0},
        {"stripe_width": 0.5},
        {"unit_stride": 0},
    ])
    def test_bad_values_rejected(self, kwargs):
        with pytest.raises(ConfigError):
            RunConfig(**kwargs)

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown config keys.*momentun"):
            config_from_dict({"momentun": 0.8})

    def test_round_trip_through_dict(self):
        cfg = RunConfig(k=8, seed=5, no_warp=True)
        assert config_from_dict(cfg.to_dict()) == cfg


class TestLoading:
    def test_missing_file(self, tmp_path):
        with pytest.raises(IoError):
            load_config(tmp_path / "nope.yaml")

    def test_values_apply(self, tmp_path):
        p = tmp_path / "run.yaml"
        p.write_text("k: 8\nild_lr: 0.02\nno_reuse: true\n")
        cfg = load_config(p)
        assert cfg.k == 8 and cfg.ild_lr == 0.02 and cfg.no_reuse is True
        assert cfg.m == 4  # untouched default

    def test_empty_file_gives_defaults(self, tmp_path):
        p = tmp_path / "run.yaml"
        p.write_text("")
        assert load_config(p) == RunConfig()

    def test_non_mapping_rejected(self, tmp_path):
        p = tmp_path / "run.yaml"
        p.write_text("- just\n- a list\n")
        with pytest.raises(ConfigError, match="mapping"):
            load_config(p)

    def test_bad_yaml_rejected(self, tmp_path):
        p = tmp_path / "run.yaml"
        p.write_text("k: [unclosed\n")
        with pytest.raises(ConfigError):
            load_config(p)

    def test_unknown_key_in_file(self, tmp_path):
        p = tmp_path / "run.yaml"
        p.write_text("learning_rate: 0.1\n")
        with pytest.raises(ConfigError, match="unknown config keys"):
            load_config(p)

    def test_invalid_value_in_file(self, tmp_path):
        p = tmp_path / "run.yaml"
        p.write_text("alpha: 2.0\n")
        with pytest.raises(ConfigError, match="alpha"):
            load_config(p)

    def test_flags_override_file(self, tmp_path):
        p = tmp_path / "run.yaml"
        p.write_text("k: 8\nseed: 1\n")
        cfg = config_from_dict({"seed": 9}, base=load_config(p))
        assert cfg.k == 8 and cfg.seed == 9
