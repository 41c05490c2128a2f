"""Selective deep fusion head: feature summation plus a small
encoder-decoder classifier.

The final-stage aggregated maps are resized to the saliency map's size,
each mapped to one channel by a 3x3 conv, and summed element-wise with
the map itself. That fused single-channel feature runs through a 13-conv
encoder (four blocks of 3/3/3/4 convs, each conv followed by batch norm
and ReLU; blocks 2-4 open with a stride-2 conv) and a mirrored decoder of
four transposed convs that deliberately carry no ReLU, ending in a 1x1
conv to two classification channels (background, foreground).

Parameter names: ``sdf.fuse.level{i}``, ``sdf.enc{k}``, ``sdf.dec{k}``,
``sdf.classifier``.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .config import NetworkConfig
from .errors import ConfigError, ShapeError
from .fusion import AggregatedMap, resize_to

ENCODER_CONVS = (3, 3, 3, 4)


class SdfEncoderBlock(nn.Module):
    def __init__(self, in_ch: int, ch: int, n_convs: int, downsample: bool):
        super().__init__()
        self.n_convs = n_convs
        for j in range(1, n_convs + 1):
            stride = 2 if (j == 1 and downsample) else 1
            setattr(self, f"conv{j}", nn.Conv2d(in_ch, ch, 3, stride=stride, padding=1))
            setattr(self, f"bn{j}", nn.BatchNorm2d(ch))
            in_ch = ch

    def forward(self, x: Tensor) -> Tensor:
        for j in range(1, self.n_convs + 1):
            x = F.relu(getattr(self, f"bn{j}")(getattr(self, f"conv{j}")(x)))
        return x


class SelectiveFusion(nn.Module):
    def __init__(self, config: NetworkConfig):
        super().__init__()
        self.max_resolution = config.max_resolution
        ch = config.sdf_channels
        agg = config.agg_channels
        self.fuse = nn.ModuleDict(
            {f"level{i}": nn.Conv2d(agg, 1, 3, padding=1) for i in range(1, 6)}
        )
        in_ch = 1
        for k, n in enumerate(ENCODER_CONVS, start=1):
            setattr(self, f"enc{k}", SdfEncoderBlock(in_ch, ch, n, downsample=k > 1))
            in_ch = ch
        # dec4 keeps the bottleneck size; dec3..dec1 each double it.
        self.dec4 = nn.ConvTranspose2d(ch, ch, 3, stride=1, padding=1)
        for k in (3, 2, 1):
            setattr(
                self,
                f"dec{k}",
                nn.ConvTranspose2d(ch, ch, 3, stride=2, padding=1, output_padding=1),
            )
        self.classifier = nn.Conv2d(ch, 2, 1)

    # -- feature summation -------------------------------------------------

    def fuse_features(self, aggregates: list[AggregatedMap], saliency: Tensor) -> Tensor:
        """Element-wise sum of the per-level convolved aggregates and the
        fine-scale saliency map, everything at the map's resolution."""
        if len(aggregates) != 5 or any(a is None for a in aggregates):
            raise ConfigError("expected aggregated maps for all 5 levels")
        levels = sorted(a.level for a in aggregates)
        if levels != [1, 2, 3, 4, 5]:
            raise ConfigError(f"aggregated maps cover levels {levels}, expected 1..5")
        target = (saliency.shape[-2], saliency.shape[-1])
        for a in aggregates:
            h, w = a.data.shape[-2], a.data.shape[-1]
            if h > self.max_resolution or w > self.max_resolution:
                raise ShapeError(
                    f"aggregated map at level {a.level} is {h}x{w}, above the "
                    f"configured maximum of {self.max_resolution}"
                )
        fused = saliency
        for a in sorted(aggregates, key=lambda a: a.level):
            resized, _ = resize_to(a.data, target)
            fused = fused + self.fuse[f"level{a.level}"](resized)
        return fused

    # -- regression network -------------------------------------------------

    def encode(self, x: Tensor) -> Tensor:
        for k in range(1, 5):
            x = getattr(self, f"enc{k}")(x)
        return x

    def decode(self, x: Tensor) -> Tensor:
        for k in (4, 3, 2, 1):
            x = getattr(self, f"dec{k}")(x)
        return x

    def forward(self, fused: Tensor) -> Tensor:
        if fused.ndim != 4 or fused.shape[1] != 1:
            raise ShapeError(
                f"fused feature must be (B, 1, H, W), got {tuple(fused.shape)}"
            )
        h, w = fused.shape[-2], fused.shape[-1]
        if h != w:
            raise ShapeError(f"fused feature must be square, got {h}x{w}")
        if h % 16 != 0:
            raise ShapeError(f"resolution must be divisible by 16, got {h}")
        return self.classifier(self.decode(self.encode(fused)))


def saliency_from_logits(logits: Tensor) -> Tensor:
    """Per-pixel softmax; saliency is the foreground-channel probability."""
    if logits.ndim != 4 or logits.shape[1] != 2:
        raise ShapeError(
            f"expected (B, 2, H, W) classification logits, got {tuple(logits.shape)}"
        )
    return torch.softmax(logits, dim=1)[:, 1:2]
