"""Generator and discriminator architectures.

The generator is a fully convolutional RRDB trunk (23 blocks of 5 densely
connected convolutions each, 115 trunk convolutions total) followed by two
nearest-neighbor 2x upsampling stages. The discriminator stacks six
conv_blocks (two convolutions each, the second strided) and maps a square
crop to a single unbounded logit.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor, nn

CONVS_PER_RRDB = 5


@dataclass(frozen=True)
class GeneratorConfig:
    num_rrdb: int = 23
    base_channels: int = 64
    growth_channels: int = 32
    residual_scale: float = 0.2
    upscale_factor: int = 4

    def __post_init__(self):
        if self.num_rrdb < 1:
            raise ValueError(f"num_rrdb must be >= 1, got {self.num_rrdb}")
        if self.upscale_factor != 4:
            raise ValueError(f"only 4x upscaling is supported, got {self.upscale_factor}")
        if not 0 < self.residual_scale <= 1:
            raise ValueError(f"residual_scale must lie in (0, 1], got {self.residual_scale}")
        if self.base_channels < 1 or self.growth_channels < 1:
            raise ValueError("channel counts must be positive")


@dataclass(frozen=True)
class DiscriminatorConfig:
    input_size: int = 192
    block_channels: tuple[int, ...] = (64, 128, 256, 512, 512, 512)
    lrelu_slope: float = 0.2
    dense_units: int = 100

    def __post_init__(self):
        if len(self.block_channels) != 6:
            raise ValueError(
                f"exactly six conv_blocks required, got {len(self.block_channels)}"
            )
        if self.input_size % 64 != 0:
            raise ValueError(
                f"input_size must be divisible by 2^6 = 64, got {self.input_size}"
            )


class DenseResidualBlock(nn.Module):
    """Five densely connected 3x3 convolutions with a scaled residual skip."""

    def __init__(self, channels: int, growth: int, scale: float):
        super().__init__()
        self.scale = scale
        self.convs = nn.ModuleList()
        for i in range(CONVS_PER_RRDB - 1):
            self.convs.append(nn.Conv2d(channels + i * growth, growth, 3, 1, 1))
        self.convs.append(
            nn.Conv2d(channels + (CONVS_PER_RRDB - 1) * growth, channels, 3, 1, 1)
        )
        self.act = nn.LeakyReLU(0.2, inplace=True)

    def forward(self, x: Tensor) -> Tensor:
        feats = [x]
        for conv in self.convs[:-1]:
            feats.append(self.act(conv(torch.cat(feats, dim=1))))
        out = self.convs[-1](torch.cat(feats, dim=1))
        return x + self.scale * out


class Generator(nn.Module):
    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        ch = cfg.base_channels
        self.conv_first = nn.Conv2d(3, ch, 3, 1, 1)
        self.trunk = nn.ModuleList(
            DenseResidualBlock(ch, cfg.growth_channels, cfg.residual_scale)
            for _ in range(cfg.num_rrdb)
        )
        self.trunk_conv = nn.Conv2d(ch, ch, 3, 1, 1)
        self.upconv1 = nn.Conv2d(ch, ch, 3, 1, 1)
        self.upconv2 = nn.Conv2d(ch, ch, 3, 1, 1)
        self.conv_hr = nn.Conv2d(ch, ch, 3, 1, 1)
        self.conv_last = nn.Conv2d(ch, 3, 3, 1, 1)
        self.act = nn.LeakyReLU(0.2, inplace=True)
        self._init_weights()

    def _init_weights(self):
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.kaiming_normal_(m.weight, a=0.2, nonlinearity="leaky_relu")
                nn.init.zeros_(m.bias)
        # Small trunk init keeps the residual stack stable early in training.
        for block in self.trunk:
            for conv in block.convs:
                conv.weight.data.mul_(0.1)
        self.conv_last.weight.data.mul_(0.1)

    def trunk_conv_count(self) -> int:
        """Number of convolutional layers inside the RRDB trunk."""
        return sum(
            1
            for block in self.trunk
            for m in block.modules()
            if isinstance(m, nn.Conv2d)
        )

    def forward(self, x: Tensor) -> Tensor:
        if x.dim() != 4 or x.shape[1] != 3:
            raise ValueError(
                f"generator expects an NCHW batch with 3 channels, got {tuple(x.shape)}"
            )
        fea = self.conv_first(x)
        out = fea
        for block in self.trunk:
            out = block(out)
        fea = fea + self.trunk_conv(out)
        fea = self.act(self.upconv1(nn.functional.interpolate(fea, scale_factor=2, mode="nearest")))
        fea = self.act(self.upconv2(nn.functional.interpolate(fea, scale_factor=2, mode="nearest")))
        sr = self.conv_last(self.act(self.conv_hr(fea)))
        if not self.training:
            sr = sr.clamp(0.0, 1.0)
        return sr


class Discriminator(nn.Module):
    def __init__(self, cfg: DiscriminatorConfig):
        super().__init__()
        self.cfg = cfg
        layers: list[nn.Module] = []
        in_ch = 3
        n_blocks = len(cfg.block_channels)
        for i, ch in enumerate(cfg.block_channels):
            layers.append(nn.Conv2d(in_ch, ch, 3, 1, 1))
            layers.append(nn.LeakyReLU(cfg.lrelu_slope, inplace=True))
            layers.append(nn.Conv2d(ch, ch, 3, 2, 1))
            if i < n_blocks - 1:
                layers.append(nn.BatchNorm2d(ch))
            layers.append(nn.LeakyReLU(cfg.lrelu_slope, inplace=True))
            in_ch = ch
        self.features = nn.Sequential(*layers)
        spatial = cfg.input_size // 2**n_blocks
        self.dense = nn.Linear(cfg.block_channels[-1] * spatial * spatial, cfg.dense_units)
        self.act = nn.LeakyReLU(cfg.lrelu_slope, inplace=True)
        self.out = nn.Linear(cfg.dense_units, 1)

    def forward(self, x: Tensor) -> Tensor:
        if x.dim() != 4 or x.shape[1] != 3:
            raise ValueError(
                f"discriminator expects an NCHW batch with 3 channels, got {tuple(x.shape)}"
            )
        if x.shape[2] != self.cfg.input_size or x.shape[3] != self.cfg.input_size:
            raise ValueError(
                f"discriminator input must be {self.cfg.input_size}x{self.cfg.input_size}, "
                f"got {x.shape[2]}x{x.shape[3]}"
            )
        fea = self.features(x).flatten(1)
        return self.out(self.act(self.dense(fea))).squeeze(1)


def build_generator(cfg: GeneratorConfig) -> Generator:
    return Generator(cfg)


def generator_forward(g: Generator, lr_batch: Tensor) -> Tensor:
    return g(lr_batch)


def build_discriminator(cfg: DiscriminatorConfig) -> Discriminator:
    return Discriminator(cfg)


def parameter_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
