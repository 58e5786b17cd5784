"""Frame-wise encoder / residual / decoder translation network."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import torch
import torch.nn as nn

__all__ = ["GeneratorConfig", "ResnetGenerator", "build_generator", "translate_clip",
           "translate_frame"]


@dataclass(frozen=True)
class GeneratorConfig:
    in_channels: int = 1
    out_channels: int = 3
    width: int = 64
    n_down: int = 2
    n_res: int = 9
    resolution: int = 256

    @classmethod
    def preset(cls, name: str, in_channels: int = 1, resolution: int = 256) -> "GeneratorConfig":
        if name == "tiny":
            return cls(in_channels, 3, width=16, n_down=1, n_res=2, resolution=resolution)
        if name == "standard":
            n_res = 9 if resolution >= 256 else 6
            return cls(in_channels, 3, width=64, n_down=2, n_res=n_res, resolution=resolution)
        raise ValueError(f"unknown generator preset {name!r}")


def _norm(ch):
    return nn.InstanceNorm2d(ch, affine=True)


class ResidualBlock(nn.Module):
    def __init__(self, ch: int):
        super().__init__()
        self.block = nn.Sequential(
            nn.ReflectionPad2d(1), nn.Conv2d(ch, ch, 3, bias=False), _norm(ch), nn.ReLU(True),
            nn.ReflectionPad2d(1), nn.Conv2d(ch, ch, 3, bias=False), _norm(ch),
        )

    def forward(self, x):
        return x + self.block(x)


class ResnetGenerator(nn.Module):
    """Downsampling convs, residual blocks, upsampling convs, tanh output.

    Convolutions feeding an instance norm carry no bias (the norm would cancel
    it); the norms are affine so every parameter receives gradient.
    """

    def __init__(self, config: GeneratorConfig):
        super().__init__()
        self.config = config
        w = config.width
        layers = [nn.ReflectionPad2d(3), nn.Conv2d(config.in_channels, w, 7, bias=False),
                  _norm(w), nn.ReLU(True)]
        ch = w
        for _ in range(config.n_down):
            layers += [nn.Conv2d(ch, ch * 2, 3, stride=2, padding=1, bias=False),
                       _norm(ch * 2), nn.ReLU(True)]
            ch *= 2
        layers += [ResidualBlock(ch) for _ in range(config.n_res)]
        for _ in range(config.n_down):
            layers += [nn.ConvTranspose2d(ch, ch // 2, 3, stride=2, padding=1,
                                          output_padding=1, bias=False),
                       _norm(ch // 2), nn.ReLU(True)]
            ch //= 2
        layers += [nn.ReflectionPad2d(3), nn.Conv2d(ch, config.out_channels, 7), nn.Tanh()]
        self.model = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.model(x)


def build_generator(config: GeneratorConfig, seed: int = 0) -> ResnetGenerator:
    """Generator with weights drawn from ``N(0, 0.02)`` under ``seed``."""
    gen = torch.Generator().manual_seed(seed)
    net = ResnetGenerator(config)
    for m in net.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            with torch.no_grad():
                m.weight.copy_(torch.randn(m.weight.shape, generator=gen) * 0.02)
                if m.bias is not None:
                    m.bias.zero_()
        elif isinstance(m, nn.InstanceNorm2d):
            with torch.no_grad():
                m.weight.copy_(1 + torch.randn(m.weight.shape, generator=gen) * 0.02)
                m.bias.zero_()
    return net


def _check_input(net: ResnetGenerator, x: torch.Tensor):
    cfg = net.config
    if x.shape[-3] != cfg.in_channels:
        raise ValueError(f"generator expects {cfg.in_channels} channels, got {x.shape[-3]}")
    if tuple(x.shape[-2:]) != (cfg.resolution, cfg.resolution):
        raise ValueError(f"generator expects {cfg.resolution}x{cfg.resolution} frames, "
                         f"got {tuple(x.shape[-2:])}")


def translate_frame(net: ResnetGenerator, x: torch.Tensor) -> torch.Tensor:
    """Translate one ``(C, H, W)`` frame, or a ``(B, C, H, W)`` batch."""
    _check_input(net, x)
    if x.ndim == 3:
        return net(x.unsqueeze(0))[0]
    return net(x)


def translate_clip(net: ResnetGenerator, frames: Sequence[torch.Tensor]) -> list[torch.Tensor]:
    """Frame-wise translation of a clip; order preserved."""
    if len(frames) == 0:
        raise ValueError("cannot translate an empty clip")
    shape = frames[0].shape
    if any(f.shape != shape for f in frames):
        raise ValueError("clip frames must share one shape")
    return [translate_frame(net, f) for f in frames]
