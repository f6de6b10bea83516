"""Degradation classes, increment tables and the early-exit rule."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import Tensor, nn

from .blocks import Downsample, LayerNorm2d, NAFBlock, gelu
from .metrics import psnr

GOPRO_BINS = (20.0, 25.0, 30.0, 35.0, 40.0)
REALBLUR_R_BINS = (20.0, 25.0, 30.0, 35.0, 40.0, 45.0, 50.0)


def make_bins(start: float = 20.0, step: float = 5.0, count: int = 5) -> tuple[float, ...]:
    """``count`` ascending edges ``start, start+step, ...`` (``count+1`` classes)."""
    if step <= 0 or count < 1:
        raise ValueError("need a positive step and at least one edge")
    return tuple(start + k * step for k in range(count))


def class_of_psnr(value: float, bins: Sequence[float] = GOPRO_BINS) -> int:
    """1-based class: ``c = 1`` for ``value <= bins[0]``, ``len(bins)+1`` above the last edge."""
    return 1 + sum(value > e for e in bins)


def psnr_class(blur_patch, sharp_patch, bins: Sequence[float] = GOPRO_BINS) -> int:
    return class_of_psnr(psnr(blur_patch, sharp_patch), bins)


@dataclass
class IncrementTable:
    """Mean PSNR gain ``gains[c-1, j-1]`` of column ``j`` over column ``j-1`` for class ``c``.

    Column 1 is measured against the blur input. Rows of empty classes are NaN.
    """

    gains: np.ndarray
    counts: np.ndarray

    @property
    def num_classes(self) -> int:
        return self.gains.shape[0]

    @property
    def columns(self) -> int:
        return self.gains.shape[1]

    def to_tsv(self) -> str:
        lines = ["\t".join(["class", *[f"dec{j}" for j in range(1, self.columns + 1)], "count"])]
        for c in range(self.num_classes):
            vals = ["nan" if math.isnan(v) else repr(float(v)) for v in self.gains[c]]
            lines.append("\t".join([str(c + 1), *vals, str(int(self.counts[c]))]))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_tsv(cls, text: str) -> "IncrementTable":
        rows = [ln.split("\t") for ln in text.strip().splitlines()]
        header, body = rows[0], rows[1:]
        if header[0] != "class" or header[-1] != "count":
            raise ValueError("not an increment table")
        gains = np.array([[float(v) for v in r[1:-1]] for r in body], dtype=np.float64)
        counts = np.array([int(r[-1]) for r in body], dtype=np.int64)
        return cls(gains, counts)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_tsv(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "IncrementTable":
        return cls.from_tsv(Path(path).read_text(encoding="utf-8"))


def increment_table_from_psnrs(psnrs: np.ndarray, classes: Sequence[int], num_classes: int) -> IncrementTable:
    """Aggregate per-patch PSNRs into an increment table.

    ``psnrs[k, 0]`` is PSNR(blur, sharp) of patch ``k`` and ``psnrs[k, j]``
    the PSNR of column ``j``'s restoration.
    """
    psnrs = np.asarray(psnrs, dtype=np.float64)
    classes = np.asarray(classes, dtype=np.int64)
    deltas = np.diff(psnrs, axis=1)
    gains = np.full((num_classes, deltas.shape[1]), np.nan)
    counts = np.zeros(num_classes, dtype=np.int64)
    for c in range(1, num_classes + 1):
        mask = classes == c
        counts[c - 1] = int(mask.sum())
        if counts[c - 1]:
            gains[c - 1] = deltas[mask].mean(axis=0)
    return IncrementTable(gains, counts)


@torch.no_grad()
def column_psnrs(model, pairs) -> np.ndarray:
    """Per-patch PSNRs, shape (n, J+1): the blur input first, then every column's restoration.

    ``pairs`` yields ``(blur, sharp)`` arrays shaped (3, h, w) or (h, w, 3)
    in [0, 1]; ``model.restore_all`` must return the J restorations.
    """
    rows = []
    for blur, sharp in pairs:
        b = _as_chw(blur)
        s = _as_chw(sharp)
        outs = model.restore_all(torch.from_numpy(b)[None])
        rows.append([psnr(b, s)] + [psnr(o[0].numpy().astype(np.float64), s) for o in outs])
    return np.array(rows, dtype=np.float64)


def build_increment_table(model, pairs, bins: Sequence[float] = GOPRO_BINS) -> IncrementTable:
    """Run every column of ``model`` on each (blur, sharp) patch pair and tabulate gains."""
    rows = column_psnrs(model, pairs)
    classes = [class_of_psnr(r, bins) for r in rows[:, 0]]
    return increment_table_from_psnrs(rows, classes, len(bins) + 1)


def _as_chw(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float32)
    if a.ndim == 3 and a.shape[-1] == 3 and a.shape[0] != 3:
        a = a.transpose(2, 0, 1)
    return np.ascontiguousarray(a)


@dataclass
class ExitPolicy:
    """Exit column ``exits[c-1]`` for patches of class ``c``."""

    exits: tuple[int, ...]
    tau: float = 0.05
    columns: int = field(default=0)

    def __post_init__(self):
        if self.columns == 0:
            self.columns = max(self.exits)
        if any(not 1 <= e <= self.columns for e in self.exits):
            raise ValueError(f"exit indices must lie in 1..{self.columns}")

    def exit_for(self, c: int) -> int:
        return self.exits[c - 1]

    def to_tsv(self) -> str:
        lines = ["class\tE"] + [f"{c}\t{e}" for c, e in enumerate(self.exits, 1)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_tsv(cls, text: str, columns: int = 0) -> "ExitPolicy":
        rows = [ln.split("\t") for ln in text.strip().splitlines()[1:]]
        return cls(tuple(int(r[1]) for r in rows), columns=columns)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_tsv(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path, columns: int = 0) -> "ExitPolicy":
        return cls.from_tsv(Path(path).read_text(encoding="utf-8"), columns)


def compute_exit_signal(table: IncrementTable, tau: float, inclusive: bool = False) -> ExitPolicy:
    """Exit one column before the first gain below ``tau``; never below column 1.

    Classes without data keep all columns. ``inclusive`` switches the
    comparison from ``<`` to ``<=``.
    """
    J = table.columns
    exits = []
    for c in range(table.num_classes):
        row = table.gains[c]
        if table.counts[c] == 0 or np.isnan(row).any():
            exits.append(J)
            continue
        below = row <= tau if inclusive else row < tau
        hits = np.flatnonzero(below)
        exits.append(max(int(hits[0]), 1) if hits.size else J)
    return ExitPolicy(tuple(exits), tau, J)


def d_rate(exits: Sequence[int], columns: int) -> float:
    """Fraction of column evaluations used relative to always running all ``columns``."""
    exits = list(exits)
    return sum(exits) / (len(exits) * columns)


class Classifier(nn.Module):
    """Degradation-degree classifier on the level-4 encoder feature.

    Downsample -> NAF block -> LayerNorm -> GAP -> Linear -> GELU -> Linear.
    """

    def __init__(self, in_channels: int, num_classes: int = 6, hidden: int | None = None):
        super().__init__()
        width = 2 * in_channels
        hidden = hidden or width
        self.in_channels = in_channels
        self.down = Downsample(in_channels)
        self.block = NAFBlock(width)
        self.norm = LayerNorm2d(width)
        self.fc1 = nn.Linear(width, hidden)
        self.fc2 = nn.Linear(hidden, num_classes)
        self.num_classes = num_classes

    def features(self, e4: Tensor) -> Tensor:
        """Feature map after the NAF block (the degradation-degree representation)."""
        if e4.ndim != 4 or e4.shape[1] != self.in_channels:
            raise ValueError(f"classifier expects {self.in_channels} input channels, got {tuple(e4.shape)}")
        return self.block(self.down(e4))

    def forward(self, e4: Tensor) -> Tensor:
        x = self.norm(self.features(e4)).mean(dim=(2, 3))
        return self.fc2(gelu(self.fc1(x)))


def predict_class(logits: Tensor) -> Tensor:
    """1-based argmax; ties go to the lower class (first maximum)."""
    return logits.argmax(dim=-1) + 1
