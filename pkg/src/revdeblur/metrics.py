"""Image quality metrics, linear CKA and the retained-memory benchmark."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

PSNR_CAP = 100.0


def _np64(a) -> np.ndarray:
    if hasattr(a, "detach"):
        a = a.detach().cpu().numpy()
    return np.asarray(a, dtype=np.float64)


def psnr(x, y, data_range: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB, capped at 100 for identical inputs."""
    x, y = _np64(x), _np64(y)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(data_range**2 / mse))


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(r**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    # separable 'valid' correlation over the last two axes
    k = len(g)
    h, w = img.shape[-2:]
    rows = sum(g[i] * img[..., i : h - k + 1 + i, :] for i in range(k))
    return sum(g[i] * rows[..., :, i : w - k + 1 + i] for i in range(k))


def ssim(x, y, data_range: float = 1.0, win_size: int = 11, sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean SSIM with a Gaussian window, averaged over channels.

    Inputs are (h, w), (c, h, w) or (h, w, c) when the last axis has 3 entries.
    Statistics use 'valid' windows only.
    """
    x, y = _np64(x), _np64(y)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    if x.ndim == 3 and x.shape[-1] == 3 and x.shape[0] != 3:
        x, y = x.transpose(2, 0, 1), y.transpose(2, 0, 1)
    if min(x.shape[-2:]) < win_size:
        raise ValueError(f"image {x.shape[-2:]} smaller than the {win_size}x{win_size} window")
    g = gaussian_window(win_size, sigma)
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    mx, my = _filter_valid(x, g), _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mx * mx
    syy = _filter_valid(y * y, g) - my * my
    sxy = _filter_valid(x * y, g) - mx * my
    smap = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))
    if smap.ndim == 2:
        return float(smap.mean())
    return float(smap.reshape(smap.shape[0], -1).mean(axis=1).mean())


def linear_cka(X, Y) -> float:
    """Linear CKA between two feature matrices with one row per sample."""
    X, Y = _np64(X), _np64(Y)
    X = X.reshape(X.shape[0], -1)
    Y = Y.reshape(Y.shape[0], -1)
    if X.shape[0] != Y.shape[0]:
        raise ValueError("feature matrices need the same number of rows")
    if X.shape[0] < 2:
        raise ValueError("need at least two samples")
    X = X - X.mean(axis=0)
    Y = Y - Y.mean(axis=0)
    n = X.shape[0]
    if n < X.shape[1] or n < Y.shape[1]:
        # wide features: the n x n sample Grams carry the same norms
        K, L = X @ X.T, Y @ Y.T
        xx, yy, xy = np.linalg.norm(K), np.linalg.norm(L), float((K * L).sum())
    else:
        xx, yy = np.linalg.norm(X.T @ X), np.linalg.norm(Y.T @ Y)
        xy = np.linalg.norm(Y.T @ X) ** 2
    if xx == 0 or yy == 0:
        raise ValueError("zero-variance input")
    return float(xy / (xx * yy))


@dataclass
class MemoryRow:
    columns: int
    reversible: int
    non_reversible: int


@dataclass
class MemoryBenchmark:
    rows: list[MemoryRow]

    def slope(self, attr: str) -> float:
        js = np.array([r.columns for r in self.rows], dtype=np.float64)
        vals = np.array([getattr(r, attr) for r in self.rows], dtype=np.float64)
        return float(np.polyfit(js, vals, 1)[0])

    @property
    def slope_ratio(self) -> float:
        return self.slope("non_reversible") / self.slope("reversible")

    def to_tsv(self) -> str:
        lines = ["columns\treversible_bytes\tnon_reversible_bytes"]
        lines += [f"{r.columns}\t{r.reversible}\t{r.non_reversible}" for r in self.rows]
        lines.append(f"# slope_ratio\t{self.slope_ratio:.4f}")
        return "\n".join(lines) + "\n"


def retained_bytes(model, blur, sharp, columns: int, reversible: bool) -> int:
    """Bytes autograd keeps for one decoder training step using ``columns`` columns."""
    from .autodiff import backward, count_live_activations, forward
    from .training import loss_decoder

    params = list(model.parameters())
    (loss,), tape = forward(
        lambda b: loss_decoder(model.restore_all(b, upto=columns, reversible=reversible), sharp),
        [blur],
        exclude=params,
        check_finite=False,
    )
    report = count_live_activations(tape)
    backward(tape)
    model.zero_grad(set_to_none=True)
    return report.total_bytes


def bench_memory(model, blur, sharp, columns: Sequence[int] = (1, 2, 4, 8)) -> MemoryBenchmark:
    """Retained activation bytes in both modes for each column count."""
    rows = [
        MemoryRow(j, retained_bytes(model, blur, sharp, j, True), retained_bytes(model, blur, sharp, j, False))
        for j in columns
    ]
    return MemoryBenchmark(rows)
