import dataclasses

import pytest
import yaml

from rmmdf import NetworkConfig, load_config, preset, save_config, split_seed
from rmmdf.errors import ConfigError


class TestValidation:
    def test_defaults_are_valid(self):
        NetworkConfig().validate()

    @pytest.mark.parametrize(
        "overrides",
        [
            {"resolution": 100},
            {"resolution": 0},
            {"width_multiplier": 1 / 128},
            {"stages": 0},
            {"max_resolution": 32, "resolution": 64},
            {"with_vgg": False, "with_resnet": True, "with_drm": True},
            {"with_sdf": True, "with_dam": False, "with_drm": False},
            {"with_vgg": False, "with_resnet": False, "with_drm": False,
             "with_dam": False, "with_sdf": False},
        ],
    )
    def test_invalid_configs_rejected(self, overrides):
        cfg = NetworkConfig(with_vgg=True, with_resnet=True)
        for k, v in overrides.items():
            setattr(cfg, k, v)
        with pytest.raises(ConfigError):
            cfg.validate()

    @pytest.mark.parametrize(
        "field,value",
        [("lr", -1.0), ("momentum_main", 1.0), ("momentum_fusion", -0.1),
         ("weight_decay", -1e-4), ("lr_decay_step", 0), ("batch_size", 0)],
    )
    def test_invalid_optimizer_rejected(self, field, value):
        cfg = NetworkConfig()
        setattr(cfg.optimizer, field, value)
        with pytest.raises(ConfigError):
            cfg.validate()

    def test_zero_lr_is_allowed(self):
        cfg = NetworkConfig()
        cfg.optimizer.lr = 0.0
        cfg.validate()


class TestScaling:
    def test_full_width_channel_plans(self):
        cfg = NetworkConfig(width_multiplier=1.0, resolution=256)
        assert cfg.vgg_channels == (64, 128, 256, 512, 512)
        assert cfg.vgg_layers == (2, 2, 3, 3, 3)
        assert cfg.resnet_channels == (64, 256, 512, 1024, 2048)
        assert not cfg.resnet_plain
        assert cfg.agg_channels == 64 and cfg.sdf_channels == 64
        assert cfg.decoder_channels == (256, 128, 64, 32, 1)

    def test_micro_width_uses_plain_residuals(self):
        cfg = NetworkConfig(width_multiplier=1 / 32)
        assert cfg.resnet_plain
        assert cfg.vgg_channels == (2, 4, 8, 16, 16)

    def test_depth_multiplier_scales_blocks(self):
        cfg = NetworkConfig(depth_multiplier=0.5)
        assert cfg.vgg_layers == (1, 1, 2, 2, 2)
        assert all(u >= 1 for u in cfg.resnet_units)


class TestPresetsAndFiles:
    def test_known_presets(self):
        micro = preset("micro")
        assert micro.resolution == 64 and micro.stages == 3
        paper = preset("paper")
        assert paper.resolution == 256
        assert paper.optimizer.lr == 1e-8
        assert paper.optimizer.momentum_main == 0.99
        assert paper.optimizer.momentum_fusion == 0.9
        assert paper.optimizer.weight_decay == 5e-4
        assert paper.optimizer.lr_decay_step == 10_000
        assert paper.optimizer.batch_size == 4
        with pytest.raises(ConfigError):
            preset("nano")

    def test_file_roundtrip(self, tmp_path):
        cfg = preset("micro")
        cfg.stages = 4
        path = str(tmp_path / "cfg.yaml")
        save_config(cfg, path)
        back = load_config(path)
        assert dataclasses.asdict(back) == dataclasses.asdict(cfg)

    def test_partial_file_overrides_base(self, tmp_path):
        path = tmp_path / "cfg.yaml"
        path.write_text(yaml.safe_dump({"optimizer": {"lr": 0.5}}))
        cfg = load_config(str(path), base=preset("micro"))
        assert cfg.optimizer.lr == 0.5
        assert cfg.resolution == preset("micro").resolution

    @pytest.mark.parametrize(
        "payload",
        [{"resolutoin": 64}, {"optimizer": {"learning_rate": 1.0}},
         {"loss_weights": {"aux": 1.0}}, {"optimizer": 3}],
    )
    def test_unknown_or_malformed_keys_rejected(self, tmp_path, payload):
        path = tmp_path / "cfg.yaml"
        path.write_text(yaml.safe_dump(payload))
        with pytest.raises(ConfigError):
            load_config(str(path))


class TestSeedSplitting:
    def test_stable_and_distinct_per_consumer(self):
        a = split_seed(7, "weights")
        assert a == split_seed(7, "weights")
        assert a != split_seed(7, "shuffle")
        assert a != split_seed(8, "weights")
        assert 0 <= a < 2 ** 63
