"""Dataset ingestion, preprocessing, and a deterministic synthetic-shape
generator for desk-scale training and tests.

On-disk layout: ``root/images/*.png|jpg`` and ``root/masks/*.png`` with
matching stems. Masks binarize at 128. Predictions are written as 8-bit
grayscale PNGs with values round(255 * saliency).
"""

from __future__ import annotations

import os
import warnings
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .errors import ConfigError, ShapeError

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg")
MASK_BINARIZE_LEVEL = 128


@dataclass
class Sample:
    """One image/mask pair. ``image`` is (H, W, 3) uint8; ``mask`` is
    (H, W) uint8 with values in {0, 1}."""

    image: np.ndarray
    mask: np.ndarray
    id: str


@dataclass
class LoadedDataset:
    samples: list[Sample]
    rejects: list[str] = field(default_factory=list)

    def __iter__(self):
        return iter(self.samples)

    def __len__(self):
        return len(self.samples)


def _read_image(path: str) -> Image.Image:
    try:
        img = Image.open(path)
        img.load()
        return img
    except Exception as exc:
        raise RuntimeError(f"cannot read image file: {path}") from exc


def load_dataset(root: str) -> LoadedDataset:
    """Load matched image/mask pairs, sorted by stem.

    Stems present on only one side are collected in ``rejects`` rather
    than aborting the load; unreadable files do abort, naming the path.
    """
    image_dir = os.path.join(root, "images")
    mask_dir = os.path.join(root, "masks")
    images: dict[str, str] = {}
    if os.path.isdir(image_dir):
        for name in sorted(os.listdir(image_dir)):
            stem, ext = os.path.splitext(name)
            if ext.lower() in IMAGE_EXTENSIONS:
                images[stem] = os.path.join(image_dir, name)
    masks: dict[str, str] = {}
    if os.path.isdir(mask_dir):
        for name in sorted(os.listdir(mask_dir)):
            stem, ext = os.path.splitext(name)
            if ext.lower() == ".png":
                masks[stem] = os.path.join(mask_dir, name)

    samples = []
    rejects = []
    for stem in sorted(set(images) | set(masks)):
        if stem not in images:
            rejects.append(f"{stem}: mask without image")
            continue
        if stem not in masks:
            rejects.append(f"{stem}: image without mask")
            continue
        image = np.asarray(_read_image(images[stem]).convert("RGB"), dtype=np.uint8)
        gray = np.asarray(_read_image(masks[stem]).convert("L"))
        mask = (gray >= MASK_BINARIZE_LEVEL).astype(np.uint8)
        if image.shape[:2] != mask.shape:
            rejects.append(f"{stem}: image/mask size mismatch")
            continue
        samples.append(Sample(image, mask, stem))
    if not samples:
        warnings.warn(f"no usable image/mask pairs under {root}", stacklevel=2)
    return LoadedDataset(samples, rejects)


def preprocess(
    sample: Sample,
    resolution: int,
    channel_means: tuple[float, float, float] = (0.5, 0.5, 0.5),
) -> tuple[np.ndarray, np.ndarray]:
    """Resize to ``resolution`` squared and normalize.

    The image is resized bilinearly, scaled to [0, 1] and mean-subtracted
    per channel, returned as (3, R, R) float32. The mask is resized with
    nearest-neighbor so it stays binary, returned as (R, R) float32.
    """
    if resolution < 32 or resolution % 32 != 0:
        raise ShapeError(
            f"resolution must be a positive multiple of 32, got {resolution}"
        )
    img = Image.fromarray(sample.image).resize(
        (resolution, resolution), Image.BILINEAR
    )
    arr = np.asarray(img, dtype=np.float32) / 255.0
    arr = arr - np.asarray(channel_means, dtype=np.float32)
    mask = Image.fromarray(sample.mask * 255).resize(
        (resolution, resolution), Image.NEAREST
    )
    mask_arr = (np.asarray(mask) >= MASK_BINARIZE_LEVEL).astype(np.float32)
    return arr.transpose(2, 0, 1), mask_arr


# -- synthetic shapes -----------------------------------------------------------


@dataclass
class SyntheticSpec:
    seed: int
    count: int
    resolution: int = 64
    shapes: tuple[str, ...] = ("ellipse", "rectangle", "blob")
    backgrounds: tuple[str, ...] = ("flat", "gradient", "noise")


def ellipse_mask(resolution: int, cx: float, cy: float, a: float, b: float,
                 theta: float = 0.0) -> np.ndarray:
    """Rasterize a rotated ellipse by per-pixel-center membership."""
    ys, xs = np.mgrid[0:resolution, 0:resolution]
    x = xs + 0.5 - cx
    y = ys + 0.5 - cy
    ct, st = np.cos(theta), np.sin(theta)
    u = x * ct + y * st
    v = -x * st + y * ct
    return (((u / a) ** 2 + (v / b) ** 2) <= 1.0).astype(np.uint8)


def rectangle_mask(resolution: int, x0: float, y0: float, x1: float, y1: float
                   ) -> np.ndarray:
    ys, xs = np.mgrid[0:resolution, 0:resolution]
    cx = xs + 0.5
    cy = ys + 0.5
    return ((cx >= x0) & (cx <= x1) & (cy >= y0) & (cy <= y1)).astype(np.uint8)


def blob_mask(resolution: int, rng: np.random.Generator) -> np.ndarray:
    """Union of a few overlapping random ellipses around one center."""
    cx = rng.uniform(0.3, 0.7) * resolution
    cy = rng.uniform(0.3, 0.7) * resolution
    mask = np.zeros((resolution, resolution), dtype=np.uint8)
    for _ in range(rng.integers(2, 5)):
        ox = cx + rng.uniform(-0.08, 0.08) * resolution
        oy = cy + rng.uniform(-0.08, 0.08) * resolution
        a = rng.uniform(0.10, 0.22) * resolution
        b = rng.uniform(0.10, 0.22) * resolution
        theta = rng.uniform(0, np.pi)
        mask |= ellipse_mask(resolution, ox, oy, a, b, theta)
    return mask


def _random_shape(kind: str, resolution: int, rng: np.random.Generator) -> np.ndarray:
    if kind == "ellipse":
        cx = rng.uniform(0.3, 0.7) * resolution
        cy = rng.uniform(0.3, 0.7) * resolution
        a = rng.uniform(0.15, 0.3) * resolution
        b = rng.uniform(0.15, 0.3) * resolution
        return ellipse_mask(resolution, cx, cy, a, b, rng.uniform(0, np.pi))
    if kind == "rectangle":
        w = rng.uniform(0.25, 0.5) * resolution
        h = rng.uniform(0.25, 0.5) * resolution
        x0 = rng.uniform(0.1, 0.9 - w / resolution) * resolution
        y0 = rng.uniform(0.1, 0.9 - h / resolution) * resolution
        return rectangle_mask(resolution, x0, y0, x0 + w, y0 + h)
    if kind == "blob":
        return blob_mask(resolution, rng)
    raise ConfigError(f"unknown shape kind: {kind!r}")


def _background(kind: str, resolution: int, base: np.ndarray,
                rng: np.random.Generator) -> np.ndarray:
    canvas = np.ones((resolution, resolution, 3), dtype=np.float32) * base
    if kind == "flat":
        return canvas
    if kind == "gradient":
        direction = rng.integers(0, 2)
        ramp = np.linspace(-30, 30, resolution, dtype=np.float32)
        ramp = ramp[:, None] if direction == 0 else ramp[None, :]
        return canvas + ramp[..., None]
    if kind == "noise":
        return canvas + rng.uniform(-25, 25, size=canvas.shape).astype(np.float32)
    raise ConfigError(f"unknown background kind: {kind!r}")


def _make_sample(spec: SyntheticSpec, index: int) -> Sample:
    # Pure function of (seed, index): each sample owns its own stream.
    rng = np.random.default_rng([spec.seed, index])
    res = spec.resolution
    dark_bg = bool(rng.integers(0, 2))
    bg_level = rng.uniform(10, 70) if dark_bg else rng.uniform(185, 245)
    fg_level = rng.uniform(185, 245) if dark_bg else rng.uniform(10, 70)
    bg_color = np.clip(bg_level + rng.uniform(-15, 15, size=3), 0, 255)
    fg_color = np.clip(fg_level + rng.uniform(-15, 15, size=3), 0, 255)

    bg_kind = spec.backgrounds[rng.integers(0, len(spec.backgrounds))]
    canvas = _background(bg_kind, res, bg_color.astype(np.float32), rng)

    mask = np.zeros((res, res), dtype=np.uint8)
    for _ in range(rng.integers(1, 3)):
        kind = spec.shapes[rng.integers(0, len(spec.shapes))]
        mask |= _random_shape(kind, res, rng)
    canvas[mask == 1] = fg_color
    image = np.clip(np.round(canvas), 0, 255).astype(np.uint8)
    return Sample(image, mask, f"synthetic_{spec.seed}_{index:04d}")


def generate_synthetic(spec: SyntheticSpec) -> list[Sample]:
    """Deterministic high-contrast shape/background scenes with exact masks."""
    if spec.count < 1:
        raise ConfigError(f"count must be >= 1, got {spec.count}")
    if spec.resolution < 16:
        raise ConfigError(f"resolution must be >= 16, got {spec.resolution}")
    return [_make_sample(spec, i) for i in range(spec.count)]


# -- prediction I/O --------------------------------------------------------------


def save_saliency_png(saliency: np.ndarray, path: str) -> None:
    """Quantize a [0, 1] map to 8-bit grayscale PNG."""
    arr = np.asarray(saliency, dtype=np.float64)
    if arr.min() < 0 or arr.max() > 1:
        raise ShapeError("saliency values must lie in [0, 1]")
    Image.fromarray(np.round(arr * 255).astype(np.uint8), mode="L").save(path)


def load_saliency_png(path: str) -> np.ndarray:
    return np.asarray(_read_image(path).convert("L"), dtype=np.float64) / 255.0


def save_samples(samples: list[Sample], root: str) -> None:
    """Materialize samples in the on-disk dataset layout."""
    os.makedirs(os.path.join(root, "images"), exist_ok=True)
    os.makedirs(os.path.join(root, "masks"), exist_ok=True)
    for s in samples:
        Image.fromarray(s.image).save(os.path.join(root, "images", f"{s.id}.png"))
        Image.fromarray(s.mask * 255).save(os.path.join(root, "masks", f"{s.id}.png"))
