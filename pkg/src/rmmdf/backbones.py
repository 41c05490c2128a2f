"""The two parallel encoder streams and the fine-scale saliency decoder.

Both encoders emit a five-level feature pyramid whose spatial size halves
at every level (level 5 sits at 1/32 of the input). The VGG-style stream
stacks plain conv/ReLU blocks with a trailing max-pool; the ResNet-style
stream uses residual units (bottlenecks at full width, two-conv units at
micro widths). The decoder lifts the deepest ResNet level back to input
resolution through five transposed convolutions and squashes the result
to [0, 1] with a logistic, producing the fine-scale saliency map.

Parameter names follow the ``stream.block.layer.kind`` checkpoint scheme,
e.g. ``vgg.block3.conv2.weight`` or ``resnet.block4.unit2.shortcut.bias``.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .config import NetworkConfig
from .errors import ShapeError

PYRAMID_LEVELS = 5


def check_image(image: Tensor) -> None:
    """Reject inputs the pyramid contract cannot hold for."""
    if image.ndim != 4:
        raise ShapeError(f"expected a (B, C, H, W) tensor, got {tuple(image.shape)}")
    b, c, h, w = image.shape
    if b < 1:
        raise ShapeError("batch must contain at least one image")
    if c != 3:
        raise ShapeError(f"expected 3 input channels, got {c}")
    if h % 32 != 0 or w % 32 != 0 or h == 0 or w == 0:
        raise ShapeError(
            f"input spatial size must be a positive multiple of 32, got {h}x{w}"
        )


def init_conv_weights(module: nn.Module) -> None:
    """Kaiming fan-in init for conv kernels, zeros for biases."""
    if isinstance(module, (nn.Conv2d, nn.ConvTranspose2d)):
        nn.init.kaiming_normal_(module.weight, mode="fan_in", nonlinearity="relu")
        if module.bias is not None:
            nn.init.zeros_(module.bias)


class VggBlock(nn.Module):
    """``n_layers`` 3x3 conv+ReLU pairs followed by one 2x2 max-pool."""

    def __init__(self, in_ch: int, out_ch: int, n_layers: int):
        super().__init__()
        self.n_layers = n_layers
        ch = in_ch
        for j in range(1, n_layers + 1):
            setattr(self, f"conv{j}", nn.Conv2d(ch, out_ch, 3, padding=1))
            ch = out_ch
        self.pool = nn.MaxPool2d(2)

    def forward(self, x: Tensor) -> Tensor:
        for j in range(1, self.n_layers + 1):
            x = F.relu(getattr(self, f"conv{j}")(x))
        return self.pool(x)


class VggStream(nn.Module):
    """Five-block plain convolutional encoder.

    Level ``i`` of the returned pyramid is the output of block ``i``
    (after its pool), so level 1 is at half resolution and level 5 at
    1/32.
    """

    def __init__(self, config: NetworkConfig):
        super().__init__()
        chans = config.vgg_channels
        layers = config.vgg_layers
        in_ch = 3
        for i in range(1, PYRAMID_LEVELS + 1):
            setattr(self, f"block{i}", VggBlock(in_ch, chans[i - 1], layers[i - 1]))
            in_ch = chans[i - 1]

    def forward(self, image: Tensor) -> tuple[Tensor, ...]:
        check_image(image)
        levels = []
        x = image
        for i in range(1, PYRAMID_LEVELS + 1):
            x = getattr(self, f"block{i}")(x)
            levels.append(x)
        return tuple(levels)


class PlainUnit(nn.Module):
    """Two-conv residual unit for micro-width configurations."""

    def __init__(self, in_ch: int, out_ch: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.shortcut = (
            nn.Conv2d(in_ch, out_ch, 1, stride=stride)
            if stride != 1 or in_ch != out_ch
            else None
        )

    def forward(self, x: Tensor) -> Tensor:
        identity = x if self.shortcut is None else self.shortcut(x)
        out = F.relu(self.conv1(x))
        out = self.conv2(out)
        return F.relu(out + identity)


class BottleneckUnit(nn.Module):
    """1x1 / 3x3 / 1x1 residual unit, used at full width."""

    def __init__(self, in_ch: int, mid_ch: int, out_ch: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, mid_ch, 1)
        self.conv2 = nn.Conv2d(mid_ch, mid_ch, 3, stride=stride, padding=1)
        self.conv3 = nn.Conv2d(mid_ch, out_ch, 1)
        self.shortcut = (
            nn.Conv2d(in_ch, out_ch, 1, stride=stride)
            if stride != 1 or in_ch != out_ch
            else None
        )

    def forward(self, x: Tensor) -> Tensor:
        identity = x if self.shortcut is None else self.shortcut(x)
        out = F.relu(self.conv1(x))
        out = F.relu(self.conv2(out))
        out = self.conv3(out)
        return F.relu(out + identity)


class ResNetStem(nn.Module):
    def __init__(self, out_ch: int):
        super().__init__()
        self.conv = nn.Conv2d(3, out_ch, 7, stride=2, padding=3)

    def forward(self, x: Tensor) -> Tensor:
        return F.relu(self.conv(x))


class ResNetBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, units: int, stride: int, plain: bool):
        super().__init__()
        self.units = units
        ch = in_ch
        for j in range(1, units + 1):
            s = stride if j == 1 else 1
            if plain:
                unit: nn.Module = PlainUnit(ch, out_ch, s)
            else:
                unit = BottleneckUnit(ch, max(1, out_ch // 4), out_ch, s)
            setattr(self, f"unit{j}", unit)
            ch = out_ch

    def forward(self, x: Tensor) -> Tensor:
        for j in range(1, self.units + 1):
            x = getattr(self, f"unit{j}")(x)
        return x


class ResNetStream(nn.Module):
    """Residual encoder producing a pyramid level-aligned with VggStream.

    Level 1 is the stem output at half resolution; levels 2-5 come from
    the four residual blocks (the first entered through a stride-2
    max-pool, the rest downsampling via their first unit).
    """

    def __init__(self, config: NetworkConfig):
        super().__init__()
        chans = config.resnet_channels
        units = config.resnet_units
        plain = config.resnet_plain
        self.stem = ResNetStem(chans[0])
        self.pool = nn.MaxPool2d(3, stride=2, padding=1)
        in_ch = chans[0]
        for i, (out_ch, n) in enumerate(zip(chans[1:], units), start=2):
            stride = 1 if i == 2 else 2
            setattr(self, f"block{i}", ResNetBlock(in_ch, out_ch, n, stride, plain))
            in_ch = out_ch

    def forward(self, image: Tensor) -> tuple[Tensor, ...]:
        check_image(image)
        f1 = self.stem(image)
        f2 = self.block2(self.pool(f1))
        f3 = self.block3(f2)
        f4 = self.block4(f3)
        f5 = self.block5(f4)
        return (f1, f2, f3, f4, f5)


class SaliencyDecoder(nn.Module):
    """Five 3x3 transposed convolutions from pyramid level 5 to a
    single-channel map at input resolution, squashed by a logistic.

    ReLU follows every layer except the last; the logistic keeps the
    output usable both as a feature and as a saliency score.
    """

    def __init__(self, config: NetworkConfig):
        super().__init__()
        self.max_resolution = config.max_resolution
        chans = (config.resnet_channels[-1],) + config.decoder_channels
        for i in range(1, 6):
            setattr(
                self,
                f"deconv{i}",
                nn.ConvTranspose2d(
                    chans[i - 1], chans[i], 3, stride=2, padding=1, output_padding=1
                ),
            )

    def forward(self, pyramid: tuple[Tensor, ...]) -> Tensor:
        x = pyramid[-1]
        h, w = x.shape[-2], x.shape[-1]
        if h * 32 > self.max_resolution or w * 32 > self.max_resolution:
            raise ShapeError(
                f"decoded map would be {h * 32}x{w * 32}, above the configured "
                f"maximum of {self.max_resolution}"
            )
        for i in range(1, 5):
            x = F.relu(getattr(self, f"deconv{i}")(x))
        return torch.sigmoid(self.deconv5(x))


def validate_pyramid(levels: tuple[Tensor, ...]) -> None:
    """Check the halving invariant; used by tests and debug assertions."""
    if len(levels) != PYRAMID_LEVELS:
        raise ShapeError(f"expected {PYRAMID_LEVELS} pyramid levels, got {len(levels)}")
    for i in range(1, PYRAMID_LEVELS):
        prev = levels[i - 1].shape[-2:]
        cur = levels[i].shape[-2:]
        want = (-(-prev[0] // 2), -(-prev[1] // 2))
        if tuple(cur) != want:
            raise ShapeError(
                f"pyramid level {i + 1} is {tuple(cur)}, expected {want}"
            )


def load_backbone_weights(model: nn.Module, path: str) -> list[str]:
    """Optional hook: copy encoder-stream weights from a checkpoint file.

    Only parameters under ``vgg.`` and ``resnet.`` whose shapes match are
    loaded; the list of loaded names is returned. Random init remains the
    tested path.
    """
    archive = torch.load(path, map_location="cpu", weights_only=True)
    state = archive.get("model", archive)
    own = model.state_dict()
    loaded = []
    for name, value in state.items():
        if not (name.startswith("vgg.") or name.startswith("resnet.")):
            continue
        if name in own and own[name].shape == value.shape:
            own[name].copy_(value)
            loaded.append(name)
    model.load_state_dict(own)
    return loaded
