"""Cross-stream exchange: detail refinement and dense aggregation.

Detail refinement pushes the ResNet stream's fine-scale saliency map into
every level of the VGG pyramid: the map is resized to the level's size
(direction picked by comparing spatial areas), concatenated, and mixed by
a channel-preserving 3x3 conv. Dense aggregation goes the other way: each
VGG level is squeezed to one channel, all five squeezed maps are resized
to a target level, concatenated in level order and mixed by a 1x1 conv;
the result is concatenated onto the matching ResNet level and folded back
in by another channel-preserving 3x3 conv.

All fusion convs carry a trailing ReLU and no normalization. Parameters
live under ``fusion.drm.level{i}`` and ``fusion.dam.{reduce|mix|inject}.level{i}``
and are shared across recursion stages.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .config import NetworkConfig
from .errors import ConfigError, ShapeError

UP = "up"
DOWN = "down"
NONE = "none"


@dataclass(frozen=True)
class ResizeOp:
    """A planned resize: direction, method, and the exact target size."""

    direction: str  # "up" | "down" | "none"
    target_size: tuple[int, int]
    method: str = "bilinear"


def resize_plan(source_size: tuple[int, int], target_size: tuple[int, int]) -> ResizeOp:
    """Pick the resize branch by comparing spatial areas.

    Smaller source area -> up-sample, larger -> down-sample, identical
    sizes -> no-op. The (unreachable in a strict pyramid) equal-area but
    different-shape case falls back to a height comparison so the result
    always lands exactly on ``target_size``.
    """
    sh, sw = source_size
    th, tw = target_size
    if (sh, sw) == (th, tw):
        return ResizeOp(NONE, (th, tw))
    if sh * sw < th * tw:
        return ResizeOp(UP, (th, tw))
    if sh * sw > th * tw:
        return ResizeOp(DOWN, (th, tw))
    return ResizeOp(UP if sh < th else DOWN, (th, tw))


def apply_resize(x: Tensor, op: ResizeOp) -> Tensor:
    if op.direction == NONE:
        return x
    return F.interpolate(x, size=op.target_size, mode="bilinear", align_corners=False)


def resize_to(x: Tensor, target_size: tuple[int, int]) -> tuple[Tensor, ResizeOp]:
    op = resize_plan((x.shape[-2], x.shape[-1]), target_size)
    return apply_resize(x, op), op


def aggregation_directions(
    sizes: list[tuple[int, int]], level: int
) -> list[str]:
    """Resize directions used when aggregating all levels onto ``level``.

    For a strict halving pyramid this is up for deeper (smaller) levels,
    down for shallower (larger) ones, and none for the level itself.
    """
    if not 1 <= level <= len(sizes):
        raise ConfigError(f"level must be in [1, {len(sizes)}], got {level}")
    target = sizes[level - 1]
    return [resize_plan(s, target).direction for s in sizes]


@dataclass
class AggregatedMap:
    """One dense-aggregation product: the mixed map for a pyramid level."""

    data: Tensor
    level: int
    stage: int


class DenseAggregation(nn.Module):
    def __init__(self, vgg_channels: tuple[int, ...], resnet_channels: tuple[int, ...],
                 agg_channels: int):
        super().__init__()
        n = len(vgg_channels)
        self.reduce = nn.ModuleDict(
            {f"level{j}": nn.Conv2d(vgg_channels[j - 1], 1, 1) for j in range(1, n + 1)}
        )
        self.mix = nn.ModuleDict(
            {f"level{i}": nn.Conv2d(n, agg_channels, 1) for i in range(1, n + 1)}
        )
        self.inject = nn.ModuleDict(
            {
                f"level{i}": nn.Conv2d(
                    resnet_channels[i - 1] + agg_channels, resnet_channels[i - 1], 3,
                    padding=1,
                )
                for i in range(1, n + 1)
            }
        )

    def reduced(self, pyramid: tuple[Tensor, ...]) -> list[Tensor]:
        return [
            F.relu(self.reduce[f"level{j}"](x)) for j, x in enumerate(pyramid, start=1)
        ]

    def aggregate(self, pyramid: tuple[Tensor, ...], level: int, stage: int,
                  reduced: list[Tensor] | None = None) -> AggregatedMap:
        if not 1 <= level <= len(pyramid):
            raise ConfigError(f"level must be in [1, {len(pyramid)}], got {level}")
        if reduced is None:
            reduced = self.reduced(pyramid)
        target = (pyramid[level - 1].shape[-2], pyramid[level - 1].shape[-1])
        resized = [resize_to(r, target)[0] for r in reduced]
        mixed = F.relu(self.mix[f"level{level}"](torch.cat(resized, dim=1)))
        return AggregatedMap(mixed, level, stage)

    def aggregate_all(self, pyramid: tuple[Tensor, ...], stage: int) -> list[AggregatedMap]:
        reduced = self.reduced(pyramid)
        return [
            self.aggregate(pyramid, level, stage, reduced)
            for level in range(1, len(pyramid) + 1)
        ]

    def inject_level(self, feature: Tensor, agg: AggregatedMap) -> Tensor:
        if feature.shape[-2:] != agg.data.shape[-2:]:
            raise ShapeError(
                f"aggregated map {tuple(agg.data.shape[-2:])} does not match "
                f"level-{agg.level} feature {tuple(feature.shape[-2:])}"
            )
        conv = self.inject[f"level{agg.level}"]
        return F.relu(conv(torch.cat([feature, agg.data], dim=1)))

    def inject_all(self, pyramid: tuple[Tensor, ...], aggs: list[AggregatedMap]
                   ) -> tuple[Tensor, ...]:
        if len(aggs) != len(pyramid):
            raise ConfigError(f"expected {len(pyramid)} aggregated maps, got {len(aggs)}")
        return tuple(self.inject_level(f, a) for f, a in zip(pyramid, aggs))


class InterModelFusion(nn.Module):
    """Owns the refinement and aggregation convs for all five levels.

    Either half can be disabled (for the ablation ladder), in which case
    its parameters do not exist at all.
    """

    def __init__(self, config: NetworkConfig):
        super().__init__()
        vgg_ch = config.vgg_channels
        if config.with_drm:
            self.drm = nn.ModuleDict(
                {
                    f"level{i}": nn.Conv2d(vgg_ch[i - 1] + 1, vgg_ch[i - 1], 3, padding=1)
                    for i in range(1, len(vgg_ch) + 1)
                }
            )
        else:
            self.drm = None
        if config.with_dam:
            self.dam = DenseAggregation(vgg_ch, config.resnet_channels,
                                        config.agg_channels)
        else:
            self.dam = None

    def refine_level(self, feature: Tensor, saliency: Tensor, level: int) -> Tensor:
        """Mix one VGG level with the (resized) fine-scale saliency map."""
        conv = self.drm[f"level{level}"]
        if conv.in_channels != feature.shape[1] + saliency.shape[1]:
            raise ConfigError(
                f"refinement conv at level {level} expects "
                f"{conv.in_channels - saliency.shape[1]} feature channels, "
                f"got {feature.shape[1]}"
            )
        resized, _ = resize_to(saliency, (feature.shape[-2], feature.shape[-1]))
        return F.relu(conv(torch.cat([feature, resized], dim=1)))

    def refine(self, pyramid: tuple[Tensor, ...], saliency: Tensor) -> tuple[Tensor, ...]:
        return tuple(
            self.refine_level(x, saliency, i) for i, x in enumerate(pyramid, start=1)
        )
