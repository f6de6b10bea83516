"""Synthetic blur corpus: procedural sharp images, spatially-variant motion blur, patches, manifests."""
from __future__ import annotations

import math
from dataclasses import astuple, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from PIL import Image, ImageDraw
from scipy import ndimage

from .exit_policy import GOPRO_BINS, class_of_psnr
from .metrics import psnr


@dataclass
class BlurSpec:
    family: str = "linear"  # "linear" or "walk"
    length_range: tuple[float, float] = (1.0, 15.0)
    angle_range: tuple[float, float] = (0.0, 180.0)
    grid: tuple[int, int] = (2, 2)
    noise_sigma: float = 0.0

    def __post_init__(self):
        if self.family not in ("linear", "walk"):
            raise ValueError(f"unknown kernel family {self.family!r}")
        if self.length_range[0] < 1 or self.length_range[1] < self.length_range[0]:
            raise ValueError("length range must satisfy 1 <= lo <= hi")
        if min(self.grid) < 1:
            raise ValueError("grid needs at least one node per axis")


def _splat(points: np.ndarray, size: int) -> np.ndarray:
    """Bilinearly deposit unit mass at each (y, x) point into a size x size kernel centred at 0."""
    k = np.zeros((size, size))
    c = size // 2
    for y, x in points:
        y, x = y + c, x + c
        y0, x0 = int(math.floor(y)), int(math.floor(x))
        fy, fx = y - y0, x - x0
        for dy, wy in ((0, 1 - fy), (1, fy)):
            for dx, wx in ((0, 1 - fx), (1, fx)):
                yy, xx = y0 + dy, x0 + dx
                if 0 <= yy < size and 0 <= xx < size:
                    k[yy, xx] += wy * wx
    return k / k.sum()


def linear_kernel(length: float, angle: float) -> np.ndarray:
    """Uniform line of ``length`` pixels at ``angle`` degrees; length 1 is the identity."""
    if length < 1:
        raise ValueError("kernel length must be >= 1")
    if length == 1:
        return np.ones((1, 1))
    size = int(math.ceil(length)) | 1
    n = int(math.ceil(length)) * 4
    t = (np.arange(n) + 0.5) / n * (length - 1) - (length - 1) / 2
    a = math.radians(angle)
    pts = np.stack([-t * math.sin(a), t * math.cos(a)], axis=1)
    return _splat(pts, size)


def walk_kernel(length: float, rng: np.random.Generator) -> np.ndarray:
    """Random camera-shake trajectory of roughly ``length`` pixels of travel."""
    if length < 1:
        raise ValueError("kernel length must be >= 1")
    if length == 1:
        return np.ones((1, 1))
    steps = int(math.ceil(length)) * 4
    heading = rng.uniform(0, 2 * math.pi)
    pos = np.zeros(2)
    pts = [pos.copy()]
    for _ in range(steps - 1):
        heading += rng.normal(0, 0.3)
        pos = pos + (length - 1) / steps * np.array([math.sin(heading), math.cos(heading)])
        pts.append(pos.copy())
    pts = np.array(pts)
    pts -= pts.mean(axis=0)
    size = int(2 * math.ceil(np.abs(pts).max()) + 3) | 1
    return _splat(pts, size)


def convolve_image(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Convolve an (h, w, c) image with a 2-D kernel, reflecting at the borders."""
    out = np.empty_like(img)
    for ch in range(img.shape[-1]):
        out[..., ch] = ndimage.convolve(img[..., ch], kernel, mode="reflect")
    return out


def _node_weights(n: int, length: int) -> np.ndarray:
    if n == 1:
        return np.ones((1, length))
    u = np.linspace(0, n - 1, length)
    return np.clip(1 - np.abs(u[None, :] - np.arange(n)[:, None]), 0, None)


def sample_kernels(spec: BlurSpec, rng: np.random.Generator) -> list[np.ndarray]:
    kernels = []
    for _ in range(spec.grid[0] * spec.grid[1]):
        length = rng.uniform(*spec.length_range)
        if spec.family == "linear":
            kernels.append(linear_kernel(length, rng.uniform(*spec.angle_range)))
        else:
            kernels.append(walk_kernel(length, rng))
    return kernels


def blur_with_kernels(sharp: np.ndarray, kernels: Sequence[np.ndarray], grid: tuple[int, int]) -> np.ndarray:
    """Blend per-node blurred copies with bilinear weights over the image."""
    h, w = sharp.shape[:2]
    wy, wx = _node_weights(grid[0], h), _node_weights(grid[1], w)
    for k in kernels:
        if k.shape[0] > min(h, w) or k.shape[1] > min(h, w):
            raise ValueError(f"kernel {k.shape} larger than image {(h, w)}")
    # weights sum to one, so blend as base + weighted differences; identical kernels then reproduce exactly
    base = convolve_image(sharp, kernels[0])
    out = base.copy()
    for idx, k in enumerate(kernels[1:], 1):
        a, b = divmod(idx, grid[1])
        out += (wy[a][:, None] * wx[b][None, :])[..., None] * (convolve_image(sharp, k) - base)
    return out


def synthesize_pair(sharp: np.ndarray, spec: BlurSpec, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Blur ``sharp`` (h, w, 3 in [0, 1]) with a random spatially-variant kernel field."""
    if sharp.min() < 0 or sharp.max() > 1:
        raise ValueError("sharp image must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    sharp = np.asarray(sharp, dtype=np.float64)
    blur = blur_with_kernels(sharp, sample_kernels(spec, rng), spec.grid)
    if spec.noise_sigma > 0:
        blur = blur + rng.normal(0, spec.noise_sigma, blur.shape)
    return np.clip(blur, 0, 1), sharp


def procedural_image(size: tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    """Random gradient background with polygons, ellipses and pen strokes; (h, w, 3) in [0, 1]."""
    h, w = size
    c0, c1 = rng.uniform(0, 1, 3), rng.uniform(0, 1, 3)
    ang = rng.uniform(0, 2 * math.pi)
    yy, xx = np.mgrid[0:h, 0:w]
    t = ((xx * math.cos(ang) + yy * math.sin(ang)) - min(0, math.cos(ang)) * w - min(0, math.sin(ang)) * h)
    t = t / max(t.max(), 1)
    bg = (1 - t)[..., None] * c0 + t[..., None] * c1
    img = Image.fromarray((bg * 255).astype(np.uint8))
    draw = ImageDraw.Draw(img)

    def color():
        return tuple(int(v) for v in rng.integers(0, 256, 3))

    for _ in range(int(rng.integers(3, 9))):
        kind = rng.integers(0, 3)
        if kind == 0:
            n = int(rng.integers(3, 7))
            cx, cy, r = rng.uniform(0, w), rng.uniform(0, h), rng.uniform(4, max(h, w) / 3)
            angles = np.sort(rng.uniform(0, 2 * math.pi, n))
            draw.polygon([(cx + r * math.cos(a), cy + r * math.sin(a)) for a in angles], fill=color())
        elif kind == 1:
            x0, y0 = rng.uniform(-8, w), rng.uniform(-8, h)
            draw.ellipse([x0, y0, x0 + rng.uniform(4, w / 2), y0 + rng.uniform(4, h / 2)], fill=color())
        else:
            pts = [(rng.uniform(0, w), rng.uniform(0, h)) for _ in range(int(rng.integers(2, 6)))]
            draw.line(pts, fill=color(), width=int(rng.integers(1, 4)))
    return np.asarray(img, dtype=np.float64) / 255.0


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)


def from_uint8(img: np.ndarray) -> np.ndarray:
    return np.asarray(img, dtype=np.float32) / 255.0


def save_png(path: str | Path, img: np.ndarray) -> None:
    Image.fromarray(to_uint8(img)).save(path, format="PNG")


def load_png(path: str | Path) -> np.ndarray:
    """Load an 8-bit RGB PNG as (h, w, 3) float32 in [0, 1]."""
    return from_uint8(np.asarray(Image.open(path).convert("RGB")))


def tile_positions(length: int, size: int, stride: int) -> list[int]:
    """Window starts along one axis: multiples of ``stride``, last one snapped to the edge."""
    if size > length:
        raise ValueError(f"window {size} larger than extent {length}")
    if not 1 <= stride <= size:
        raise ValueError("stride must lie in 1..size")
    pos = [0]
    while pos[-1] + size < length:
        pos.append(min(pos[-1] + stride, length - size))
    return pos


@dataclass
class PatchRecord:
    blur: str
    sharp: str
    x: int
    y: int
    size: int
    psnr: float
    cls: int

    HEADER = ("blur", "sharp", "x", "y", "size", "psnr", "class")

    def to_line(self) -> str:
        return "\t".join([self.blur, self.sharp, str(self.x), str(self.y), str(self.size), repr(self.psnr), str(self.cls)])

    @classmethod
    def from_line(cls, line: str) -> "PatchRecord":
        b, s, x, y, size, p, c = line.rstrip("\n").split("\t")
        return cls(b, s, int(x), int(y), int(size), float(p), int(c))


def extract_patches(
    blur: np.ndarray,
    sharp: np.ndarray,
    size: int,
    stride: int,
    bins: Sequence[float] = GOPRO_BINS,
    blur_path: str = "",
    sharp_path: str = "",
) -> list[PatchRecord]:
    """Grid patches (row-major) with their PSNR and degradation class."""
    h, w = blur.shape[:2]
    recs = []
    for y in tile_positions(h, size, stride):
        for x in tile_positions(w, size, stride):
            p = psnr(blur[y : y + size, x : x + size], sharp[y : y + size, x : x + size])
            recs.append(PatchRecord(blur_path, sharp_path, x, y, size, p, class_of_psnr(p, bins)))
    return recs


def write_manifest(path: str | Path, records: Sequence[PatchRecord]) -> None:
    lines = ["\t".join(PatchRecord.HEADER)] + [r.to_line() for r in records]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path: str | Path) -> list[PatchRecord]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if tuple(lines[0].split("\t")) != PatchRecord.HEADER:
        raise ValueError(f"{path}: not a patch manifest")
    return [PatchRecord.from_line(ln) for ln in lines[1:] if ln]


@dataclass
class CorpusSpec:
    count: int = 32
    image_size: tuple[int, int] = (128, 128)
    patch: int = 64
    stride: int = 64
    blur: BlurSpec = field(default_factory=BlurSpec)
    bins: tuple[float, ...] = GOPRO_BINS
    seed: int = 0


def generate_corpus(out_dir: str | Path, spec: CorpusSpec, sources: Sequence[np.ndarray] | None = None) -> list[PatchRecord]:
    """Write ``{blur,sharp}/NNNN.png`` and ``manifest.tsv`` under ``out_dir``.

    ``sources`` replaces the procedural sharp images when given. Output is a
    pure function of (sources, spec).
    """
    out = Path(out_dir)
    (out / "blur").mkdir(parents=True, exist_ok=True)
    (out / "sharp").mkdir(parents=True, exist_ok=True)
    seeds = np.random.SeedSequence(spec.seed).spawn(spec.count if sources is None else len(sources))
    records: list[PatchRecord] = []
    for n, ss in enumerate(seeds):
        rng = np.random.default_rng(ss)
        sharp = procedural_image(spec.image_size, rng) if sources is None else np.asarray(sources[n], dtype=np.float64)
        blur, sharp = synthesize_pair(sharp, spec.blur, int(rng.integers(0, 2**31)))
        # the quantized pair on disk is the reference everywhere downstream
        blur8, sharp8 = from_uint8(to_uint8(blur)), from_uint8(to_uint8(sharp))
        bname, sname = f"blur/{n:04d}.png", f"sharp/{n:04d}.png"
        save_png(out / bname, blur8)
        save_png(out / sname, sharp8)
        records += extract_patches(blur8, sharp8, spec.patch, spec.stride, spec.bins, bname, sname)
    write_manifest(out / "manifest.tsv", records)
    return records


class Corpus:
    """Images and patch records of one corpus directory."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.records = read_manifest(self.root / "manifest.tsv")
        self._cache: dict[str, np.ndarray] = {}
        names = sorted({r.blur for r in self.records})
        self.pairs = [(self.image(b), self.image(b.replace("blur/", "sharp/", 1))) for b in names]

    def image(self, rel: str) -> np.ndarray:
        if rel not in self._cache:
            self._cache[rel] = np.ascontiguousarray(load_png(self.root / rel).transpose(2, 0, 1))
        return self._cache[rel]

    def patch(self, rec: PatchRecord) -> tuple[np.ndarray, np.ndarray]:
        sl = (slice(None), slice(rec.y, rec.y + rec.size), slice(rec.x, rec.x + rec.size))
        return np.ascontiguousarray(self.image(rec.blur)[sl]), np.ascontiguousarray(self.image(rec.sharp)[sl])

    def patches(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [self.patch(r) for r in self.records]

    def sample(self, rng: np.random.Generator, batch: int, patch: int, flips: bool = True):
        """Random (blur, sharp) crops as float32 tensors of shape (batch, 3, patch, patch)."""
        bs, ss = [], []
        for _ in range(batch):
            b, s = self.pairs[int(rng.integers(len(self.pairs)))]
            y = int(rng.integers(0, b.shape[1] - patch + 1))
            x = int(rng.integers(0, b.shape[2] - patch + 1))
            b, s = b[:, y : y + patch, x : x + patch], s[:, y : y + patch, x : x + patch]
            if flips and rng.random() < 0.5:
                b, s = b[:, :, ::-1], s[:, :, ::-1]
            if flips and rng.random() < 0.5:
                b, s = b[:, ::-1], s[:, ::-1]
            bs.append(np.ascontiguousarray(b))
            ss.append(np.ascontiguousarray(s))
        return torch.from_numpy(np.stack(bs)), torch.from_numpy(np.stack(ss))
