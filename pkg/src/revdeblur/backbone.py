"""Head, encoder and per-column tails."""
from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .blocks import Downsample, NAFBlock


@dataclass
class BackboneConfig:
    base_channels: int = 8
    levels: int = 5
    encoder_blocks: list[int] = field(default_factory=lambda: [1, 1, 1, 1, 1])
    frozen_encoder: bool = False

    def __post_init__(self):
        if self.levels < 2:
            raise ValueError("need at least two levels")
        if len(self.encoder_blocks) != self.levels or min(self.encoder_blocks) < 1:
            raise ValueError("encoder_blocks needs one entry >= 1 per level")

    def channels(self, level: int) -> int:
        """Channel count of encoder level ``level`` (1-based)."""
        return self.base_channels * 2 ** (level - 1)

    @property
    def multiple(self) -> int:
        return 2 ** (self.levels - 1)


class Head(nn.Module):
    """3x3 conv lifting an RGB image to ``c`` shallow feature channels."""

    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv2d(3, channels, 3, padding=1)

    def forward(self, image: Tensor) -> Tensor:
        if image.ndim != 4 or image.shape[1] != 3:
            raise ValueError(f"expected a (b, 3, h, w) image, got {tuple(image.shape)}")
        return self.conv(image)


class Encoder(nn.Module):
    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        self.cfg = cfg
        for i in range(1, cfg.levels + 1):
            c = cfg.channels(i)
            self.add_module(f"level{i}", nn.Sequential(*[NAFBlock(c) for _ in range(cfg.encoder_blocks[i - 1])]))
            if i < cfg.levels:
                self.add_module(f"down{i}", Downsample(c))

    def forward(self, h: Tensor) -> list[Tensor]:
        m = self.cfg.multiple
        if h.shape[-2] % m or h.shape[-1] % m:
            raise ValueError(f"spatial dims {tuple(h.shape[-2:])} not divisible by {m}")
        feats = []
        x = h
        for i in range(1, self.cfg.levels + 1):
            x = getattr(self, f"level{i}")(x)
            feats.append(x)
            if i < self.cfg.levels:
                x = getattr(self, f"down{i}")(x)
        return feats


class Tail(nn.Module):
    """3x3 conv from decoder features to an RGB residual, added to the blur input.

    Starts at zero so the initial restoration equals the blur image.
    """

    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv2d(channels, 3, 3, padding=1)
        nn.init.zeros_(self.conv.weight)
        nn.init.zeros_(self.conv.bias)

    def residual(self, d1: Tensor) -> Tensor:
        return self.conv(d1)

    def forward(self, d1: Tensor, blur: Tensor) -> Tensor:
        if d1.shape[-2:] != blur.shape[-2:] or d1.shape[0] != blur.shape[0]:
            raise ValueError(f"tail input {tuple(d1.shape)} does not match image {tuple(blur.shape)}")
        return blur + self.residual(d1)


def pad_to_multiple(image: Tensor, multiple: int) -> tuple[Tensor, tuple[int, int]]:
    """Reflect-pad bottom/right so both spatial dims divide ``multiple``."""
    h, w = image.shape[-2:]
    ph, pw = (-h) % multiple, (-w) % multiple
    if ph == 0 and pw == 0:
        return image, (h, w)
    mode = "reflect" if ph < h and pw < w else "replicate"
    return F.pad(image, (0, pw, 0, ph), mode=mode), (h, w)


def crop(image: Tensor, size: tuple[int, int]) -> Tensor:
    return image[..., : size[0], : size[1]]
