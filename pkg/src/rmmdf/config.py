"""Run configuration: network scaling, optimizer settings, presets, file I/O.

A config file is a YAML mapping with the same nesting as the dataclasses
below, e.g.::

    resolution: 64
    width_multiplier: 0.0625
    stages: 3
    optimizer:
      lr: 0.02
      momentum_main: 0.9
    loss_weights:
      sdf: 1.0

Unknown keys are rejected so typos cannot silently fall back to defaults.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field
from typing import Any

import yaml

from .errors import ConfigError

# Channel plan of the two encoder streams at width_multiplier = 1.
VGG_BASE_CHANNELS = (64, 128, 256, 512, 512)
VGG_BASE_LAYERS = (2, 2, 3, 3, 3)
RESNET_STEM_CHANNELS = 64
RESNET_BOTTLENECK_MID = (64, 128, 256, 512)
RESNET_BOTTLENECK_OUT = (256, 512, 1024, 2048)
RESNET_PLAIN_OUT = (64, 128, 256, 512)
RESNET_BASE_UNITS = (3, 4, 6, 3)
RESNET_PLAIN_UNITS = (2, 2, 2, 2)
DECODER_BASE_CHANNELS = (256, 128, 64, 32)
AGGREGATE_BASE_CHANNELS = 64
SDF_BASE_CHANNELS = 64

# Below this width the bottleneck residual unit degenerates (1-2 channel
# squeeze), so the stream switches to plain two-conv residual units.
PLAIN_RESNET_THRESHOLD = 0.125


def scaled(base: int, multiplier: float) -> int:
    """Channel count at the given width multiplier, floored at 1."""
    return max(1, round(base * multiplier))


def scaled_depth(base: int, multiplier: float) -> int:
    return max(1, round(base * multiplier))


@dataclass
class OptimizerConfig:
    """SGD settings. The two encoder streams and the fusion/regression
    modules use separate momentum values; everything else is shared."""

    lr: float = 1e-3
    momentum_main: float = 0.9
    momentum_fusion: float = 0.9
    weight_decay: float = 5e-4
    lr_decay_factor: float = 0.1
    lr_decay_step: int = 10_000
    batch_size: int = 4

    def validate(self) -> None:
        # lr == 0 is allowed: a null update is a useful test fixture.
        if self.lr < 0:
            raise ConfigError(f"optimizer.lr must be >= 0, got {self.lr}")
        for name in ("momentum_main", "momentum_fusion"):
            m = getattr(self, name)
            if not 0 <= m < 1:
                raise ConfigError(f"optimizer.{name} must be in [0, 1), got {m}")
        if self.weight_decay < 0:
            raise ConfigError("optimizer.weight_decay must be >= 0")
        if self.lr_decay_factor <= 0:
            raise ConfigError("optimizer.lr_decay_factor must be > 0")
        if self.lr_decay_step < 1:
            raise ConfigError("optimizer.lr_decay_step must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("optimizer.batch_size must be >= 1")


@dataclass
class LossWeights:
    vgg: float = 1.0
    resnet: float = 1.0
    sdf: float = 1.0

    def validate(self) -> None:
        for name in ("vgg", "resnet", "sdf"):
            if getattr(self, name) < 0:
                raise ConfigError(f"loss_weights.{name} must be >= 0")


@dataclass
class NetworkConfig:
    """Everything needed to build and train one model instance.

    ``width_multiplier`` scales every channel count in the network
    (1.0 = full scale, VGG stream base width 64). ``depth_multiplier``
    scales convs-per-block in the VGG stream and residual units per
    block in the ResNet stream. The ``with_*`` flags exist for the
    ablation ladder; the default is the full architecture.
    """

    resolution: int = 64
    width_multiplier: float = 0.25
    depth_multiplier: float = 1.0
    stages: int = 3
    max_resolution: int = 1024
    channel_means: tuple[float, float, float] = (0.5, 0.5, 0.5)
    with_vgg: bool = True
    with_resnet: bool = True
    with_drm: bool = True
    with_dam: bool = True
    with_sdf: bool = True
    detach_between_stages: bool = False
    iterations: int = 500
    checkpoint_every: int = 0  # 0 = final checkpoint only
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    loss_weights: LossWeights = field(default_factory=LossWeights)

    # -- derived channel plans -------------------------------------------

    @property
    def vgg_channels(self) -> tuple[int, ...]:
        return tuple(scaled(c, self.width_multiplier) for c in VGG_BASE_CHANNELS)

    @property
    def vgg_layers(self) -> tuple[int, ...]:
        return tuple(scaled_depth(n, self.depth_multiplier) for n in VGG_BASE_LAYERS)

    @property
    def resnet_plain(self) -> bool:
        return self.width_multiplier < PLAIN_RESNET_THRESHOLD

    @property
    def resnet_channels(self) -> tuple[int, ...]:
        """Channels of the five ResNet pyramid levels (stem + 4 blocks)."""
        stem = scaled(RESNET_STEM_CHANNELS, self.width_multiplier)
        outs = RESNET_PLAIN_OUT if self.resnet_plain else RESNET_BOTTLENECK_OUT
        return (stem,) + tuple(scaled(c, self.width_multiplier) for c in outs)

    @property
    def resnet_units(self) -> tuple[int, ...]:
        base = RESNET_PLAIN_UNITS if self.resnet_plain else RESNET_BASE_UNITS
        return tuple(scaled_depth(n, self.depth_multiplier) for n in base)

    @property
    def decoder_channels(self) -> tuple[int, ...]:
        mids = tuple(scaled(c, self.width_multiplier) for c in DECODER_BASE_CHANNELS)
        return mids + (1,)

    @property
    def agg_channels(self) -> int:
        return scaled(AGGREGATE_BASE_CHANNELS, self.width_multiplier)

    @property
    def sdf_channels(self) -> int:
        return scaled(SDF_BASE_CHANNELS, self.width_multiplier)

    # -- validation -------------------------------------------------------

    def validate(self) -> None:
        if self.resolution < 32 or self.resolution % 32 != 0:
            raise ConfigError(
                f"resolution must be a positive multiple of 32, got {self.resolution}"
            )
        if self.width_multiplier < 1 / 64:
            raise ConfigError(
                f"width_multiplier must be >= 1/64, got {self.width_multiplier}"
            )
        if self.depth_multiplier <= 0:
            raise ConfigError("depth_multiplier must be > 0")
        if self.stages < 1:
            raise ConfigError(f"stages must be >= 1, got {self.stages}")
        if self.max_resolution < self.resolution:
            raise ConfigError("max_resolution must be >= resolution")
        if len(self.channel_means) != 3:
            raise ConfigError("channel_means must have 3 entries")
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        if (self.with_drm or self.with_dam) and not (self.with_vgg and self.with_resnet):
            raise ConfigError("cross-stream fusion requires both encoder streams")
        if self.with_sdf and not self.with_dam:
            raise ConfigError("the selective-fusion head requires dense aggregation")
        if not (self.with_vgg or self.with_resnet):
            raise ConfigError("at least one encoder stream must be enabled")
        self.optimizer.validate()
        self.loss_weights.validate()

    # -- (de)serialization -------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["channel_means"] = list(self.channel_means)
        return d

    @classmethod
    def from_dict(cls, data: dict[str, Any], prefix: str = "") -> "NetworkConfig":
        cfg = cls()
        return _apply_overrides(cfg, data, prefix)


def _apply_overrides(cfg: NetworkConfig, data: dict[str, Any], prefix: str = "") -> NetworkConfig:
    if not isinstance(data, dict):
        raise ConfigError(f"config section '{prefix or '<root>'}' must be a mapping")
    names = {f.name for f in dataclasses.fields(NetworkConfig)}
    for key, value in data.items():
        if key not in names:
            raise ConfigError(f"unknown config key: {prefix}{key}")
        if key == "optimizer":
            if not isinstance(value, dict):
                raise ConfigError("config key 'optimizer' must be a mapping")
            opt_names = {f.name for f in dataclasses.fields(OptimizerConfig)}
            for k, v in value.items():
                if k not in opt_names:
                    raise ConfigError(f"unknown config key: optimizer.{k}")
                setattr(cfg.optimizer, k, v)
        elif key == "loss_weights":
            if not isinstance(value, dict):
                raise ConfigError("config key 'loss_weights' must be a mapping")
            lw_names = {f.name for f in dataclasses.fields(LossWeights)}
            for k, v in value.items():
                if k not in lw_names:
                    raise ConfigError(f"unknown config key: loss_weights.{k}")
                setattr(cfg.loss_weights, k, v)
        elif key == "channel_means":
            cfg.channel_means = tuple(float(v) for v in value)
        else:
            setattr(cfg, key, value)
    cfg.validate()
    return cfg


# -- presets ----------------------------------------------------------------

# "micro" is the desk-scale preset used by the smoke and ablation runs;
# its learning rate was calibrated on the 8-image synthetic overfit run.
# "paper" carries the published full-scale training protocol (pretrained
# backbones assumed, hence the tiny learning rate).
PRESETS: dict[str, dict[str, Any]] = {
    "micro": {
        "resolution": 64,
        "width_multiplier": 1 / 8,
        "stages": 3,
        "iterations": 500,
        "optimizer": {
            "lr": 5e-2,
            "momentum_main": 0.9,
            "momentum_fusion": 0.9,
            "weight_decay": 5e-4,
            "lr_decay_factor": 0.1,
            "lr_decay_step": 10_000,
            "batch_size": 4,
        },
    },
    "paper": {
        "resolution": 256,
        "width_multiplier": 1.0,
        "stages": 3,
        "iterations": 20_000,
        "optimizer": {
            "lr": 1e-8,
            "momentum_main": 0.99,
            "momentum_fusion": 0.9,
            "weight_decay": 5e-4,
            "lr_decay_factor": 0.1,
            "lr_decay_step": 10_000,
            "batch_size": 4,
        },
    },
}


def preset(name: str) -> NetworkConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset: {name!r} (choose from {sorted(PRESETS)})")
    return NetworkConfig.from_dict(PRESETS[name])


def load_config(path: str, base: NetworkConfig | None = None) -> NetworkConfig:
    """Load a YAML config file, overriding ``base`` (or the defaults)."""
    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must contain a mapping")
    cfg = dataclasses.replace(base) if base is not None else NetworkConfig()
    if base is not None:
        cfg.optimizer = dataclasses.replace(base.optimizer)
        cfg.loss_weights = dataclasses.replace(base.loss_weights)
    return _apply_overrides(cfg, data)


def save_config(cfg: NetworkConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=False)


def split_seed(root_seed: int, consumer: str) -> int:
    """Derive an independent 63-bit seed for one named consumer.

    Every randomized component (weight init, batch shuffling, synthetic
    data) draws its seed through this, so one root seed fixes the run.
    """
    digest = hashlib.sha256(f"{root_seed}:{consumer}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1
