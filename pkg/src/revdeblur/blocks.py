"""Convolutional building blocks shared by encoder, decoder and classifier."""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import Tensor, nn

# tanh approximation everywhere so reference implementations can match it exactly
GELU_APPROX = "tanh"


def gelu(x: Tensor) -> Tensor:
    return F.gelu(x, approximate=GELU_APPROX)


@dataclass
class BlockConfig:
    channels: int
    expansion: float = 2.0
    kernel: int = 3

    def __post_init__(self):
        if self.channels < 1:
            raise ValueError("channels must be >= 1")
        hidden = self.expansion * self.channels
        if hidden != int(hidden):
            raise ValueError("expansion * channels must be integral")

    @property
    def hidden(self) -> int:
        return int(self.expansion * self.channels)


class LayerNorm2d(nn.Module):
    """Layer norm over the channel axis of an NCHW tensor."""

    def __init__(self, channels: int, eps: float = 1e-6):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        mu = x.mean(1, keepdim=True)
        var = (x - mu).pow(2).mean(1, keepdim=True)
        y = (x - mu) / torch.sqrt(var + self.eps)
        return self.weight.view(1, -1, 1, 1) * y + self.bias.view(1, -1, 1, 1)


def simple_gate(x: Tensor) -> Tensor:
    x1, x2 = x.chunk(2, dim=1)
    return x1 * x2


class SimpleChannelAttention(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels, 1)

    def forward(self, x: Tensor) -> Tensor:
        return x * self.conv(x.mean(dim=(2, 3), keepdim=True))


class FourierConv(nn.Module):
    """RFFT2 -> 1x1 conv -> GELU -> 1x1 conv -> IRFFT2.

    Real and imaginary parts of the half spectrum are stacked as ``2c``
    channels. The forward transform is unnormalized, the inverse carries the
    ``1/(h*w)`` factor, so identity mixing reproduces the input.
    ``linear=True`` drops the GELU (used to test the transform pair).
    """

    def __init__(self, channels: int, linear: bool = False):
        super().__init__()
        self.mix1 = nn.Conv2d(2 * channels, 2 * channels, 1)
        self.mix2 = nn.Conv2d(2 * channels, 2 * channels, 1)
        self.linear = linear

    def forward(self, x: Tensor) -> Tensor:
        _, c, h, w = x.shape
        spec = torch.fft.rfft2(x, norm="backward")
        y = torch.cat([spec.real, spec.imag], dim=1)
        y = self.mix1(y)
        if not self.linear:
            y = gelu(y)
        y = self.mix2(y)
        re, im = y.chunk(2, dim=1)
        return torch.fft.irfft2(torch.complex(re, im), s=(h, w), norm="backward")


class NAFBlock(nn.Module):
    """Nonlinear-activation-free residual block.

    Spatial path: LN -> 1x1 expand -> 3x3 depthwise -> SimpleGate -> SCA ->
    1x1 project, added back with per-channel scale ``beta``. Feed-forward
    path: LN -> 1x1 expand -> SimpleGate -> 1x1, scaled by ``gamma``.
    Both scales start at zero so a fresh block is the identity.

    With ``fourier=True`` a :class:`FourierConv` on the normalized input runs
    in parallel to the depthwise path and is summed in before the projection.
    """

    def __init__(self, channels: int, expansion: float = 2.0, kernel: int = 3, fourier: bool = False):
        super().__init__()
        cfg = BlockConfig(channels, expansion, kernel)
        hidden = cfg.hidden
        self.channels = channels
        self.norm1 = LayerNorm2d(channels)
        self.conv1 = nn.Conv2d(channels, hidden, 1)
        self.conv2 = nn.Conv2d(hidden, hidden, kernel, padding=kernel // 2, groups=hidden)
        self.sca = SimpleChannelAttention(hidden // 2)
        self.conv3 = nn.Conv2d(hidden // 2, channels, 1)
        self.fourier = FourierConv(channels) if fourier else None
        if fourier and hidden // 2 != channels:
            raise ValueError("fourier branch requires expansion == 2")
        self.norm2 = LayerNorm2d(channels)
        self.conv4 = nn.Conv2d(channels, hidden, 1)
        self.conv5 = nn.Conv2d(hidden // 2, channels, 1)
        self.beta = nn.Parameter(torch.zeros(1, channels, 1, 1))
        self.gamma = nn.Parameter(torch.zeros(1, channels, 1, 1))

    def forward(self, inp: Tensor) -> Tensor:
        if inp.shape[1] != self.channels:
            raise ValueError(f"expected {self.channels} channels, got {inp.shape[1]}")
        xn = self.norm1(inp)
        x = self.sca(simple_gate(self.conv2(self.conv1(xn))))
        if self.fourier is not None:
            x = x + self.fourier(xn)
        y = inp + self.conv3(x) * self.beta
        x = self.conv5(simple_gate(self.conv4(self.norm2(y))))
        return y + x * self.gamma


class FourierBlock(NAFBlock):
    def __init__(self, channels: int, kernel: int = 3):
        super().__init__(channels, 2.0, kernel, fourier=True)


class Downsample(nn.Module):
    """2x2 stride-2 conv: (b, c, h, w) -> (b, 2c, h/2, w/2)."""

    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv2d(channels, 2 * channels, 2, stride=2)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-2] % 2 or x.shape[-1] % 2:
            raise ValueError(f"downsample needs even spatial dims, got {tuple(x.shape[-2:])}")
        return self.conv(x)


class Upsample(nn.Module):
    """1x1 conv + pixel shuffle: (b, c, h, w) -> (b, c/2, 2h, 2w)."""

    def __init__(self, channels: int):
        super().__init__()
        if channels % 2:
            raise ValueError("upsample needs an even channel count")
        self.conv = nn.Conv2d(channels, 2 * channels, 1, bias=False)
        self.shuffle = nn.PixelShuffle(2)

    def forward(self, x: Tensor) -> Tensor:
        return self.shuffle(self.conv(x))


class FuseBlock(nn.Module):
    """Merge the coarser feature of this column with the finer one of the previous column.

    ``up`` (2c channels, half resolution) is pixel-shuffled to c channels,
    ``down`` (c/2 channels, double resolution) goes through a stride-2 conv
    to c channels. The aligned maps are concatenated, layer-normalized,
    reweighted by channel attention and projected back to c channels with a
    1x1 conv. Level 1 has no finer neighbour and only consumes ``up``.
    """

    def __init__(self, channels: int, with_down: bool = True):
        super().__init__()
        self.channels = channels
        self.up = Upsample(2 * channels)
        self.down = Downsample(channels // 2) if with_down else None
        width = 2 * channels if with_down else channels
        # channel attention is quadratic in its input; normalizing first keeps stacked columns bounded
        self.norm = LayerNorm2d(width)
        self.sca = SimpleChannelAttention(width)
        self.fuse = nn.Conv2d(width, channels, 1)

    def forward(self, up: Tensor, down: Tensor | None = None) -> Tensor:
        parts = [self.up(up)]
        if self.down is not None:
            if down is None:
                raise ValueError("fuse block expects a finer neighbour feature")
            parts.append(self.down(down))
        elif down is not None:
            raise ValueError("level-1 fuse block takes no finer neighbour")
        if len(parts) == 2 and parts[0].shape != parts[1].shape:
            raise ValueError(f"aligned shapes differ: {tuple(parts[0].shape)} vs {tuple(parts[1].shape)}")
        x = torch.cat(parts, dim=1)
        return self.fuse(self.sca(self.norm(x)))
