import pytest
import torch

from conftest import micro_config
from rmmdf import NetworkConfig, build_model
from rmmdf.backbones import (
    BottleneckUnit,
    PlainUnit,
    ResNetStream,
    SaliencyDecoder,
    VggStream,
    load_backbone_weights,
    validate_pyramid,
)
from rmmdf.errors import ShapeError


def full_config(**overrides):
    defaults = dict(resolution=256, width_multiplier=1.0, stages=1)
    defaults.update(overrides)
    return NetworkConfig(**defaults)


class TestVggStream:
    def test_full_scale_pyramid(self):
        vgg = VggStream(full_config())
        with torch.no_grad():
            pyramid = vgg(torch.randn(1, 3, 256, 256))
        assert pyramid[4].shape == (1, 512, 8, 8)  # 256 / 32
        channels = tuple(p.shape[1] for p in pyramid)
        assert channels == (64, 128, 256, 512, 512)
        sizes = [tuple(p.shape[-2:]) for p in pyramid]
        assert sizes == [(128, 128), (64, 64), (32, 32), (16, 16), (8, 8)]

    def test_minimum_width_channel_pattern(self):
        vgg = VggStream(micro_config(width_multiplier=1 / 64))
        with torch.no_grad():
            pyramid = vgg(torch.randn(1, 3, 32, 32))
        assert tuple(p.shape[1] for p in pyramid) == (1, 2, 4, 8, 8)

    def test_zero_image_zero_bias_gives_zero_pyramid(self):
        model = build_model(micro_config(), seed=0)
        with torch.no_grad():
            pyramid = model.vgg(torch.zeros(1, 3, 32, 32))
        for level in pyramid:
            assert torch.all(level == 0)

    @pytest.mark.parametrize("shape", [(1, 3, 100, 100), (1, 3, 64, 60), (0, 3, 32, 32), (1, 1, 32, 32)])
    def test_rejects_bad_inputs(self, shape):
        vgg = VggStream(micro_config())
        with pytest.raises(ShapeError):
            vgg(torch.zeros(*shape))

    def test_halving_invariant_non_square(self):
        vgg = VggStream(micro_config(resolution=96))
        with torch.no_grad():
            pyramid = vgg(torch.randn(1, 3, 96, 160))
        validate_pyramid(pyramid)

    def test_forward_deterministic_and_finite(self):
        vgg = VggStream(micro_config())
        x = torch.randn(1, 3, 32, 32)
        with torch.no_grad():
            a = vgg(x)
            b = vgg(x)
        for u, v in zip(a, b):
            assert torch.equal(u, v)
            assert torch.isfinite(u).all()


class TestResNetStream:
    def test_full_scale_level5_resolution(self):
        resnet = ResNetStream(full_config())
        with torch.no_grad():
            pyramid = resnet(torch.randn(1, 3, 256, 256))
        assert pyramid[4].shape[-2:] == (8, 8)
        assert tuple(p.shape[1] for p in pyramid) == (64, 256, 512, 1024, 2048)

    @pytest.mark.parametrize("cfg", [micro_config(), full_config(resolution=64)])
    def test_levels_match_vgg_sizes(self, cfg):
        x = torch.randn(1, 3, cfg.resolution, cfg.resolution)
        with torch.no_grad():
            xs = VggStream(cfg)(x)
            fs = ResNetStream(cfg)(x)
        for xi, fi in zip(xs, fs):
            assert xi.shape[-2:] == fi.shape[-2:]

    def test_micro_uses_plain_units(self):
        resnet = ResNetStream(micro_config())
        assert isinstance(resnet.block2.unit1, PlainUnit)
        resnet_full = ResNetStream(full_config())
        assert isinstance(resnet_full.block2.unit1, BottleneckUnit)

    @pytest.mark.parametrize("unit_cls", [PlainUnit, BottleneckUnit])
    def test_residual_identity_with_zero_branch(self, unit_cls):
        if unit_cls is PlainUnit:
            unit = PlainUnit(4, 4)
            last = unit.conv2
        else:
            unit = BottleneckUnit(4, 2, 4)
            last = unit.conv3
        with torch.no_grad():
            last.weight.zero_()
            last.bias.zero_()
            x = torch.rand(1, 4, 8, 8)  # non-negative, as post-ReLU features are
            assert torch.equal(unit(x), x)


class TestSaliencyDecoder:
    def test_full_scale_upsampling(self):
        cfg = full_config()
        decoder = SaliencyDecoder(cfg)
        pyramid = (None, None, None, None, torch.randn(1, 2048, 8, 8))
        with torch.no_grad():
            m = decoder(pyramid)
        assert m.shape == (1, 1, 256, 256)

    def test_1x1_bottom_gives_32(self):
        cfg = micro_config()
        decoder = SaliencyDecoder(cfg)
        f5 = torch.randn(1, cfg.resnet_channels[-1], 1, 1)
        with torch.no_grad():
            m = decoder((None, None, None, None, f5))
        assert m.shape == (1, 1, 32, 32)

    def test_zero_weights_give_uniform_half(self):
        cfg = micro_config()
        decoder = SaliencyDecoder(cfg)
        with torch.no_grad():
            for p in decoder.parameters():
                p.zero_()
            m = decoder((None, None, None, None, torch.randn(1, cfg.resnet_channels[-1], 2, 2)))
        assert torch.all(m == 0.5)

    def test_output_in_unit_interval(self):
        cfg = micro_config()
        decoder = SaliencyDecoder(cfg)
        with torch.no_grad():
            m = decoder((None, None, None, None, torch.randn(2, cfg.resnet_channels[-1], 1, 1) * 10))
        assert m.min() >= 0 and m.max() <= 1

    def test_rejects_overflowing_resolution(self):
        cfg = micro_config(max_resolution=64)
        decoder = SaliencyDecoder(cfg)
        f5 = torch.randn(1, cfg.resnet_channels[-1], 4, 4)  # would decode to 128
        with pytest.raises(ShapeError):
            decoder((None, None, None, None, f5))


class TestCheckpointNaming:
    def test_state_dict_follows_name_scheme(self):
        model = build_model(micro_config(), seed=0)
        keys = set(model.state_dict().keys())
        expected = [
            "vgg.block1.conv1.weight",
            "vgg.block5.conv2.bias",
            "resnet.stem.conv.weight",
            "resnet.block2.unit1.conv1.weight",
            "resnet.block5.unit2.conv2.bias",
            "decoder.deconv1.weight",
            "decoder.deconv5.bias",
            "fusion.drm.level1.weight",
            "fusion.dam.reduce.level3.weight",
            "fusion.dam.mix.level2.weight",
            "fusion.dam.inject.level5.bias",
            "sdf.fuse.level4.weight",
            "sdf.enc1.conv1.weight",
            "sdf.enc4.conv4.weight",
            "sdf.enc2.bn1.running_mean",
            "sdf.dec4.weight",
            "sdf.dec1.bias",
            "sdf.classifier.weight",
            "heads.vgg.weight",
        ]
        for key in expected:
            assert key in keys, key

    def test_backbone_weight_loading_hook(self, tmp_path):
        from rmmdf.engine import save_checkpoint

        src = build_model(micro_config(), seed=3)
        path = str(tmp_path / "weights.pt")
        save_checkpoint(src, path)
        dst = build_model(micro_config(), seed=4)
        loaded = load_backbone_weights(dst, path)
        assert any(n.startswith("vgg.") for n in loaded)
        assert any(n.startswith("resnet.") for n in loaded)
        for name, p in dst.named_parameters():
            if name.startswith(("vgg.", "resnet.")):
                assert torch.equal(p, dict(src.named_parameters())[name])
