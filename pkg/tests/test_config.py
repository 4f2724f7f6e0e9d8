import pytest

from egoseg.lib.config import (
    TrainConfig,
    architecture_signature,
    build_config,
    env_overrides,
    flatten_config,
    load_config_file,
    parse_override,
    write_config_file,
)
from egoseg.lib.errors import ConfigError


class TestBuildConfig:
    def test_defaults(self):
        cfg = build_config()
        assert cfg.loss.tau == 100
        assert cfg.loss.lambda_dic == 5.0 and cfg.loss.lambda_ce == 5.0
        assert cfg.encoder.global_stride == max(cfg.encoder.strides)
        assert cfg.dqg.num_queries == 5

    def test_later_layers_win(self):
        cfg = build_config({"loss.tau": 20}, {"loss": {"tau": 30}}, {"seed": 4})
        assert cfg.loss.tau == 30
        assert cfg.seed == 4

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="loss.lambda_x"):
            build_config({"loss.lambda_x": 1})

    def test_alias(self):
        assert build_config({"boundary.dilation_radius": 2}).ipp.dilation_radius == 2

    @pytest.mark.parametrize(
        "settings",
        [
            {"loss.tau": 0},
            {"loss.lambda_co": -1},
            {"dqg.num_queries": 4},
            {"decoder.dim": 30, "decoder.heads": 4},
            {"encoder.strides": [8, 4], "encoder.channels": [8, 8]},
            {"encoder.strides": [4, 8], "encoder.channels": [8]},
            {"encoder.strides": [3, 6], "encoder.channels": [8, 8]},
            {"max_iterations": 10, "warmup_iterations": 10},
            {"ipp.enabled": False},
            {"data.std": [1.0, 0.0, 1.0]},
        ],
    )
    def test_invalid_values(self, settings):
        with pytest.raises(ConfigError):
            build_config(settings)

    def test_ipp_off_with_plain_decoder(self):
        cfg = build_config({"ipp.enabled": False, "dqg.enabled": False, "decoder.dfs": False})
        assert not cfg.ipp.enabled


class TestScaledConstants:
    def test_dilation_radius(self):
        cfg = build_config()
        assert cfg.ipp.radius_for(448) == 3
        assert cfg.ipp.radius_for(64) == 1
        assert build_config({"ipp.dilation_radius": 0}).ipp.radius_for(448) == 0

    def test_illusion_threshold(self):
        cfg = build_config()
        assert cfg.eval.presence_threshold(100, 448, 448) == 100
        assert cfg.eval.presence_threshold(100, 64, 64) == 2
        assert build_config({"eval.illusion_tau": 20}).eval.presence_threshold(100, 64, 64) == 20

    def test_level_sizes(self):
        cfg = build_config({"encoder.strides": [4, 8, 16], "encoder.channels": [8, 8, 8]})
        assert cfg.encoder.level_sizes((64, 64)) == [(16, 16), (8, 8), (4, 4)]


class TestOverrides:
    def test_parse_override(self):
        assert parse_override("loss.tau=50") == ("loss.tau", 50)
        assert parse_override("peak_lr=1e-4") == ("peak_lr", 1e-4)
        assert parse_override("data.flip=true") == ("data.flip", True)
        assert parse_override("encoder.strides=[2, 4]") == ("encoder.strides", [2, 4])

    def test_malformed_override(self):
        with pytest.raises(ConfigError):
            parse_override("loss.tau")

    def test_env_overrides(self):
        environ = {"EGOSEG_LOSS__TAU": "50", "EGOSEG_SEED": "3", "OTHER": "x"}
        assert env_overrides(environ) == {"loss.tau": 50, "seed": 3}

    def test_env_then_cli(self):
        cfg = build_config({"loss.tau": 20}, env_overrides({"EGOSEG_LOSS__TAU": "50"}), dict([parse_override("loss.tau=70")]))
        assert cfg.loss.tau == 70


class TestFiles:
    def test_echo_roundtrip(self, tmp_path):
        cfg = build_config({"name": "echo", "loss.tau": 20, "data.crop_size": 48})
        path = write_config_file(cfg, tmp_path / "run" / "config.yaml")
        assert build_config(load_config_file(path)) == cfg

    def test_nested_file(self, tmp_path):
        path = tmp_path / "cfg.yaml"
        path.write_text("loss:\n  tau: 40\ndata:\n  crop_size: 48\n")
        assert load_config_file(path) == {"loss.tau": 40, "data.crop_size": 48}

    def test_bad_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config_file(tmp_path / "missing.yaml")
        (tmp_path / "list.yaml").write_text("- 1\n- 2\n")
        with pytest.raises(ConfigError):
            load_config_file(tmp_path / "list.yaml")


class TestArchitectureSignature:
    def test_ignores_training_keys(self):
        a = build_config({"loss.tau": 20, "seed": 1, "decoder.dropout": 0.0})
        b = build_config({"loss.tau": 50, "seed": 2, "decoder.dropout": 0.3})
        assert architecture_signature(a) == architecture_signature(b)

    def test_includes_model_keys(self):
        a = build_config()
        b = build_config({"decoder.layers": 2})
        assert architecture_signature(a) != architecture_signature(b)
        assert architecture_signature(flatten_config(a)) == architecture_signature(a)

    def test_image_size_property(self):
        assert TrainConfig(max_iterations=2, warmup_iterations=1).image_size == (64, 64)
