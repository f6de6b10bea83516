"""Reversible multi-column decoder.

A column (sub-decoder) maps the previous column's features
``d_1 .. d_{N-1}`` to new ones, level by level from coarse to fine::

    d_i^j = L_i^j(d_{i+1}^j, d_{i-1}^{j-1}) + alpha_i^j * d_i^{j-1}

with ``d_N^j = e_N`` for every column and no ``d_{i-1}`` argument at level
1. Because ``L`` never sees ``d_i^{j-1}`` the map is invertible, fine to
coarse::

    d_i^{j-1} = (d_i^j - L_i^j(d_{i+1}^j, d_{i-1}^{j-1})) / alpha_i^j

Column 0 is the encoder output ``e_1 .. e_{N-1}``.
"""
from __future__ import annotations

from typing import Sequence

import torch
from torch import Tensor, nn

from .autodiff import reversible_segment
from .backbone import BackboneConfig
from .blocks import FourierBlock, FuseBlock

ALPHA_MIN = 1e-3

ColumnState = list[Tensor]


class LevelModule(nn.Module):
    """FuseBlock followed by FourierBlock.

    The fuse projection starts at zero, so a fresh level outputs zero and a
    fresh column with alpha = 1 is the identity map.
    """

    def __init__(self, channels: int, with_down: bool):
        super().__init__()
        self.fuse = FuseBlock(channels, with_down)
        self.fourier = FourierBlock(channels)
        nn.init.zeros_(self.fuse.fuse.weight)
        nn.init.zeros_(self.fuse.fuse.bias)

    def forward(self, up: Tensor, down: Tensor | None = None) -> Tensor:
        return self.fourier(self.fuse(up, down))


class SubDecoder(nn.Module):
    """One reversible column of ``N-1`` level modules with per-level ``alpha``."""

    def __init__(self, cfg: BackboneConfig, alpha_init: float = 1.0):
        super().__init__()
        self.depth = cfg.levels - 1
        for i in range(1, self.depth + 1):
            self.add_module(f"level{i}", LevelModule(cfg.channels(i), with_down=i > 1))
            self.register_parameter(f"alpha{i}", nn.Parameter(torch.tensor(float(alpha_init))))

    def level(self, i: int) -> LevelModule:
        return getattr(self, f"level{i}")

    def alpha(self, i: int) -> Tensor:
        return getattr(self, f"alpha{i}")

    def alphas(self) -> list[Tensor]:
        return [self.alpha(i) for i in range(1, self.depth + 1)]

    def _check(self, state: Sequence[Tensor]) -> None:
        if len(state) != self.depth:
            raise ValueError(f"column state needs {self.depth} tensors, got {len(state)}")

    def step_forward(self, state: Sequence[Tensor], shared: Sequence[Tensor]) -> ColumnState:
        self._check(state)
        (e_top,) = shared
        new: list[Tensor | None] = [None] * self.depth
        for i in range(self.depth, 0, -1):
            up = e_top if i == self.depth else new[i]
            down = state[i - 2] if i > 1 else None
            out = self.level(i)(up, down) + self.alpha(i) * state[i - 1]
            if out.shape != state[i - 1].shape:
                raise ValueError(f"level {i} produced {tuple(out.shape)}, expected {tuple(state[i - 1].shape)}")
            new[i - 1] = out
        return new

    def step_inverse(self, state: Sequence[Tensor], shared: Sequence[Tensor]) -> ColumnState:
        self._check(state)
        (e_top,) = shared
        prev: list[Tensor | None] = [None] * self.depth
        for i in range(1, self.depth + 1):
            a = self.alpha(i)
            if abs(float(a.detach())) < ALPHA_MIN:
                raise ValueError(f"alpha{i} = {float(a.detach()):.2e} is below the invertibility bound {ALPHA_MIN}")
            up = e_top if i == self.depth else state[i]
            down = prev[i - 2] if i > 1 else None
            prev[i - 1] = (state[i - 1] - self.level(i)(up, down)) / a
        return prev

    @torch.no_grad()
    def clamp_alphas(self, minimum: float = ALPHA_MIN) -> None:
        for a in self.alphas():
            sign = 1.0 if float(a) >= 0 else -1.0
            a.copy_(sign * a.abs().clamp_min(minimum))


def column_forward(prev: Sequence[Tensor], e_top: Tensor, column: SubDecoder) -> ColumnState:
    out = column.step_forward(prev, [e_top])
    for i, t in enumerate(out, 1):
        if not bool(torch.isfinite(t).all()):
            raise FloatingPointError(f"non-finite output at level {i}")
    return out


def column_inverse(nxt: Sequence[Tensor], e_top: Tensor, column: SubDecoder) -> ColumnState:
    return column.step_inverse(nxt, [e_top])


class DecoderStack(nn.Module):
    """``J`` sub-decoders chained column after column."""

    def __init__(self, cfg: BackboneConfig, columns: int):
        super().__init__()
        if columns < 1:
            raise ValueError("need at least one column")
        self.cfg = cfg
        self.columns = columns
        for j in range(1, columns + 1):
            self.add_module(f"dec{j}", SubDecoder(cfg))

    def column(self, j: int) -> SubDecoder:
        return getattr(self, f"dec{j}")

    def clamp_alphas(self) -> None:
        for j in range(1, self.columns + 1):
            self.column(j).clamp_alphas()

    def forward(
        self,
        feats: Sequence[Tensor],
        upto: int | None = None,
        reversible: bool = False,
        debug: bool = False,
    ) -> tuple[list[Tensor], ColumnState]:
        """Run columns ``1..upto``.

        Returns ``(d1, final)``: the finest feature ``d_1^j`` of every column
        (what the tails consume) and the last column state. In reversible
        mode columns 2.. run inside a reversible segment, so only the last
        state and ``e_N`` are kept for backward; column 1 reads the encoder
        features, which stay alive anyway, and runs as an ordinary graph.
        """
        upto = self.columns if upto is None else upto
        if not 0 <= upto <= self.columns:
            raise ValueError(f"upto={upto} outside 0..{self.columns}")
        depth = self.cfg.levels - 1
        if len(feats) != self.cfg.levels:
            raise ValueError(f"expected {self.cfg.levels} encoder features")
        state = list(feats[:depth])
        e_top = feats[-1]
        if upto == 0:
            return [], state
        state = column_forward(state, e_top, self.column(1))
        d1 = [state[0]]
        if upto == 1:
            return d1, state
        cols = [self.column(j) for j in range(2, upto + 1)]
        if not reversible:
            for col in cols:
                state = column_forward(state, e_top, col)
                d1.append(state[0])
            return d1, state
        params = [p for col in cols for p in col.parameters()]
        state, taps = reversible_segment(
            cols, state, [e_top], params, tap_index=0, name="decoder", debug=debug
        )
        return d1 + taps + [state[0]], state

    def all_states(self, feats: Sequence[Tensor], upto: int | None = None) -> list[ColumnState]:
        """Every column state ``0..upto`` (non-reversible; for analysis)."""
        upto = self.columns if upto is None else upto
        depth = self.cfg.levels - 1
        states = [list(feats[:depth])]
        for j in range(1, upto + 1):
            states.append(column_forward(states[-1], feats[-1], self.column(j)))
        return states
