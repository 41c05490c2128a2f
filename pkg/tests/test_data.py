import numpy as np
import pytest
from PIL import Image

from rmmdf.data import (
    Sample,
    SyntheticSpec,
    ellipse_mask,
    generate_synthetic,
    load_dataset,
    load_saliency_png,
    preprocess,
    save_saliency_png,
    save_samples,
)
from rmmdf.errors import ConfigError, ShapeError


def write_pair(root, stem, size=32, mask_value=255):
    rng = np.random.default_rng(hash(stem) % 2**32)
    img = rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8)
    (root / "images").mkdir(exist_ok=True, parents=True)
    (root / "masks").mkdir(exist_ok=True, parents=True)
    Image.fromarray(img).save(root / "images" / f"{stem}.png")
    mask = np.zeros((size, size), dtype=np.uint8)
    mask[: size // 2] = mask_value
    Image.fromarray(mask).save(root / "masks" / f"{stem}.png")


class TestLoadDataset:
    def test_matched_pairs_and_orphan_rejects(self, tmp_path):
        for stem in ("a", "b", "c"):
            write_pair(tmp_path, stem)
        rng = np.random.default_rng(0)
        Image.fromarray(
            rng.integers(0, 256, size=(32, 32, 3), dtype=np.uint8)
        ).save(tmp_path / "images" / "orphan.png")
        loaded = load_dataset(str(tmp_path))
        assert [s.id for s in loaded.samples] == ["a", "b", "c"]
        assert loaded.rejects == ["orphan: image without mask"]

    def test_gray_mask_binarizes_at_128(self, tmp_path):
        write_pair(tmp_path, "gray", mask_value=200)
        loaded = load_dataset(str(tmp_path))
        mask = loaded.samples[0].mask
        assert set(np.unique(mask)) <= {0, 1}
        assert mask[0, 0] == 1  # 200 >= 128 counts as foreground

    def test_empty_directory_warns(self, tmp_path):
        (tmp_path / "images").mkdir()
        (tmp_path / "masks").mkdir()
        with pytest.warns(UserWarning):
            loaded = load_dataset(str(tmp_path))
        assert len(loaded) == 0

    def test_unreadable_file_is_fatal_and_names_path(self, tmp_path):
        write_pair(tmp_path, "ok")
        bad = tmp_path / "images" / "bad.png"
        bad.write_bytes(b"this is not a png")
        (tmp_path / "masks" / "bad.png").write_bytes(
            (tmp_path / "masks" / "ok.png").read_bytes()
        )
        with pytest.raises(RuntimeError) as err:
            load_dataset(str(tmp_path))
        assert "bad.png" in str(err.value)


class TestPreprocess:
    def test_512_to_256(self):
        rng = np.random.default_rng(1)
        sample = Sample(
            rng.integers(0, 256, size=(512, 512, 3), dtype=np.uint8),
            (rng.random((512, 512)) > 0.5).astype(np.uint8),
            "big",
        )
        image, mask = preprocess(sample, 256)
        assert image.shape == (3, 256, 256)
        assert mask.shape == (256, 256)
        assert set(np.unique(mask)) <= {0.0, 1.0}

    def test_same_size_mask_is_bit_exact(self):
        rng = np.random.default_rng(2)
        mask = (rng.random((64, 64)) > 0.5).astype(np.uint8)
        sample = Sample(
            rng.integers(0, 256, size=(64, 64, 3), dtype=np.uint8), mask, "same"
        )
        _, out = preprocess(sample, 64)
        assert np.array_equal(out, mask.astype(np.float32))

    def test_mean_subtraction_cancels_constant_image(self):
        sample = Sample(
            np.full((64, 64, 3), 128, dtype=np.uint8),
            np.zeros((64, 64), dtype=np.uint8),
            "flat",
        )
        image, _ = preprocess(sample, 64, channel_means=(128 / 255,) * 3)
        assert np.allclose(image, 0.0, atol=1e-7)

    def test_rejects_bad_resolution(self):
        sample = Sample(
            np.zeros((32, 32, 3), dtype=np.uint8),
            np.zeros((32, 32), dtype=np.uint8),
            "x",
        )
        with pytest.raises(ShapeError):
            preprocess(sample, 100)


class TestSynthetic:
    def test_same_seed_is_byte_identical(self):
        spec = SyntheticSpec(seed=7, count=4, resolution=32)
        a = generate_synthetic(spec)
        b = generate_synthetic(spec)
        for s, t in zip(a, b):
            assert s.id == t.id
            assert np.array_equal(s.image, t.image)
            assert np.array_equal(s.mask, t.mask)

    def test_different_seeds_differ(self):
        a = generate_synthetic(SyntheticSpec(seed=1, count=2, resolution=32))
        b = generate_synthetic(SyntheticSpec(seed=2, count=2, resolution=32))
        assert any(not np.array_equal(s.image, t.image) for s, t in zip(a, b))

    def test_masks_are_nonempty_and_binary(self):
        for s in generate_synthetic(SyntheticSpec(seed=3, count=8, resolution=32)):
            assert set(np.unique(s.mask)) == {0, 1}
            assert 0 < s.mask.sum() < s.mask.size
            assert s.image.shape == (32, 32, 3)

    def test_invalid_specs_rejected(self):
        with pytest.raises(ConfigError):
            generate_synthetic(SyntheticSpec(seed=0, count=0))
        with pytest.raises(ConfigError):
            generate_synthetic(SyntheticSpec(seed=0, count=1, resolution=8))

    def test_ellipse_rasterization_matches_membership_oracle(self):
        rng = np.random.default_rng(9)
        for _ in range(5):
            res = 24
            cx, cy = rng.uniform(6, 18, size=2)
            a, b = rng.uniform(3, 8, size=2)
            theta = rng.uniform(0, np.pi)
            mask = ellipse_mask(res, cx, cy, a, b, theta)
            count = 0
            for yy in range(res):
                for xx in range(res):
                    x = xx + 0.5 - cx
                    y = yy + 0.5 - cy
                    u = x * np.cos(theta) + y * np.sin(theta)
                    v = -x * np.sin(theta) + y * np.cos(theta)
                    inside = (u / a) ** 2 + (v / b) ** 2 <= 1.0
                    count += inside
                    assert mask[yy, xx] == int(inside)
            assert mask.sum() == count


class TestRoundTrips:
    def test_save_load_preserves_mask_binarity(self, tmp_path):
        samples = generate_synthetic(SyntheticSpec(seed=5, count=3, resolution=32))
        save_samples(samples, str(tmp_path))
        loaded = load_dataset(str(tmp_path))
        assert len(loaded) == 3
        for orig, back in zip(samples, loaded.samples):
            assert np.array_equal(orig.mask, back.mask)
            assert np.array_equal(orig.image, back.image)

    def test_saliency_png_quantization(self, tmp_path):
        rng = np.random.default_rng(6)
        saliency = rng.random((16, 16))
        path = str(tmp_path / "map.png")
        save_saliency_png(saliency, path)
        back = load_saliency_png(path)
        assert np.max(np.abs(back - saliency)) <= 0.5 / 255 + 1e-12

    def test_saliency_out_of_range_rejected(self, tmp_path):
        with pytest.raises(ShapeError):
            save_saliency_png(np.full((4, 4), 1.5), str(tmp_path / "bad.png"))
