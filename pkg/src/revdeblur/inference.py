"""Sliding-window inference with per-window adaptive exits."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .backbone import crop, pad_to_multiple
from .data import tile_positions
from .exit_policy import ExitPolicy, predict_class

MIN_SIDE = 16


@dataclass
class TileConfig:
    window: int = 384
    stride: int = 352

    def __post_init__(self):
        if not 1 <= self.stride <= self.window:
            raise ValueError("need 1 <= stride <= window")

    @property
    def overlap(self) -> int:
        return self.window - self.stride


@dataclass
class InferenceConfig:
    mode: str = "fixed"  # "fixed" or "adaptive"
    fixed_j: int | None = None
    policy: ExitPolicy | None = None
    tiles: TileConfig = field(default_factory=TileConfig)

    def __post_init__(self):
        if self.mode not in ("fixed", "adaptive"):
            raise ValueError(f"unknown exit mode {self.mode!r}")
        if self.mode == "adaptive" and self.policy is None:
            raise ValueError("adaptive mode needs an exit policy")


@dataclass
class Window:
    y: int
    x: int
    h: int
    w: int


def tile_plan(h: int, w: int, cfg: TileConfig) -> list[Window]:
    """Row-major windows covering an ``h x w`` image; windows shrink to the image if it is smaller."""
    if h < 1 or w < 1:
        raise ValueError("image must be non-empty")
    wh, ww = min(cfg.window, h), min(cfg.window, w)
    ys = tile_positions(h, wh, min(cfg.stride, wh))
    xs = tile_positions(w, ww, min(cfg.stride, ww))
    return [Window(y, x, wh, ww) for y in ys for x in xs]


def _ramp(starts: list[int], size: int) -> list[np.ndarray]:
    """Per-window 1-D weights: linear ramps across the overlap with each neighbour, 1 elsewhere."""
    t = np.arange(size, dtype=np.float64)
    out = []
    for k, p in enumerate(starts):
        wgt = np.ones(size)
        if k > 0:
            ov = starts[k - 1] + size - p
            if ov > 0:
                wgt = np.minimum(wgt, (t + 1) / (ov + 1))
        if k + 1 < len(starts):
            ov = p + size - starts[k + 1]
            if ov > 0:
                wgt = np.minimum(wgt, (size - t) / (ov + 1))
        out.append(wgt)
    return out


def blend_weights(h: int, w: int, windows: list[Window]) -> list[np.ndarray]:
    """Normalized 2-D weights per window; they sum to 1 at every pixel."""
    ys = sorted({win.y for win in windows})
    xs = sorted({win.x for win in windows})
    ry = dict(zip(ys, _ramp(ys, windows[0].h)))
    rx = dict(zip(xs, _ramp(xs, windows[0].w)))
    raw = [np.outer(ry[win.y], rx[win.x]) for win in windows]
    total = np.zeros((h, w))
    for win, r in zip(windows, raw):
        total[win.y : win.y + win.h, win.x : win.x + win.w] += r
    return [r / total[win.y : win.y + win.h, win.x : win.x + win.w] for win, r in zip(windows, raw)]


@torch.no_grad()
def deblur_image(model, blur: np.ndarray, cfg: InferenceConfig) -> tuple[np.ndarray, list[tuple[int, int, int]]]:
    """Restore a (3, h, w) image in [0, 1].

    Each window is encoded once; in adaptive mode the classifier picks the
    class and the policy its exit column, otherwise ``fixed_j`` (default J)
    columns run. Window residuals are blended with partition-of-unity ramps
    and added to the blur image. Returns the restoration and ``(x, y, E)``
    for every window.
    """
    blur = np.asarray(blur, dtype=np.float32)
    if blur.ndim != 3 or blur.shape[0] != 3:
        raise ValueError(f"expected a (3, h, w) image, got {blur.shape}")
    _, h, w = blur.shape
    if min(h, w) < MIN_SIDE:
        raise ValueError(f"image sides must be >= {MIN_SIDE} px")
    J = model.columns
    if cfg.fixed_j is not None and not 1 <= cfg.fixed_j <= J:
        raise ValueError(f"fixed_j must lie in 1..{J}")
    if cfg.policy is not None and len(cfg.policy.exits) != model.cfg.num_classes:
        raise ValueError("exit policy and classifier disagree on the class count")
    windows = tile_plan(h, w, cfg.tiles)
    weights = blend_weights(h, w, windows)
    residual = np.zeros((3, h, w), dtype=np.float64)
    exits = []
    for win, wgt in zip(windows, weights):
        tile = torch.from_numpy(np.ascontiguousarray(blur[:, win.y : win.y + win.h, win.x : win.x + win.w]))[None]
        padded, size = pad_to_multiple(tile, model.enc.cfg.multiple)
        feats = model.encode(padded)
        if cfg.mode == "adaptive":
            c = int(predict_class(model.classify_features(feats))[0])
            e = min(cfg.policy.exit_for(c), J)
        else:
            e = cfg.fixed_j or J
        d1, _ = model.dec(feats, e)
        out = crop(model.tail(e).forward(d1[-1], padded), size)[0].numpy()
        residual[:, win.y : win.y + win.h, win.x : win.x + win.w] += wgt * (out - tile[0].numpy())
        exits.append((win.x, win.y, e))
    return (blur + residual).astype(np.float32), exits


def write_exit_map(path: str | Path, exits: list[tuple[int, int, int]]) -> None:
    lines = ["x\ty\tE"] + [f"{x}\t{y}\t{e}" for x, y, e in exits]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
