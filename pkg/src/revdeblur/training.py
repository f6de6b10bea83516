"""Losses, schedule, EMA and the two training phases."""
from __future__ import annotations

import contextlib
import logging
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .metrics import psnr

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    """Optimization settings; defaults are the full-scale values, desk runs override."""

    lr_init: float = 1e-3
    lr_final: float = 1e-7
    beta1: float = 0.9
    beta2: float = 0.9
    weight_decay: float = 1e-3
    patch: int = 256
    batch: int = 16
    iters: int = 200_000
    ema_decay: float = 0.999
    freq_weight: float = 0.01
    eval_every: int = 1000
    reversible: bool = True
    frozen_encoder: bool = True
    flips: bool = True
    seed: int = 0

    def __post_init__(self):
        if not self.lr_init > self.lr_final > 0:
            raise ValueError("need lr_init > lr_final > 0")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in asdict(self).items())

    @classmethod
    def from_text(cls, text: str) -> "TrainConfig":
        types = {f.name: f.type for f in fields(cls)}
        kw = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            k, v = (s.strip() for s in line.split("=", 1))
            if k not in types:
                raise ValueError(f"unknown config key {k!r}")
            kw[k] = _parse(types[k], v)
        return cls(**kw)

    @classmethod
    def load(cls, path: str | Path) -> "TrainConfig":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")


def _parse(kind, v: str):
    kind = kind if isinstance(kind, str) else kind.__name__
    if kind == "bool":
        if v.lower() not in ("true", "false", "1", "0"):
            raise ValueError(f"bad boolean {v!r}")
        return v.lower() in ("true", "1")
    return int(v) if kind == "int" else float(v)


def cosine_lr(it: int, total: int, lr_init: float, lr_final: float) -> float:
    if total <= 0:
        return lr_init
    return lr_final + 0.5 * (lr_init - lr_final) * (1 + math.cos(math.pi * it / total))


class EMA:
    """Exponential moving average of trainable parameters."""

    def __init__(self, params: Sequence[nn.Parameter], decay: float = 0.999):
        self.params = list(params)
        self.decay = decay
        self.shadow = [p.detach().clone() for p in self.params]

    @torch.no_grad()
    def update(self) -> None:
        for s, p in zip(self.shadow, self.params):
            s.mul_(self.decay).add_(p.detach(), alpha=1 - self.decay)

    @torch.no_grad()
    def copy_to(self) -> None:
        for s, p in zip(self.shadow, self.params):
            p.copy_(s)

    @contextlib.contextmanager
    def applied(self):
        """Temporarily swap the shadow weights in."""
        backup = [p.detach().clone() for p in self.params]
        self.copy_to()
        try:
            yield
        finally:
            with torch.no_grad():
                for b, p in zip(backup, self.params):
                    p.copy_(b)


def frequency_l1(x: Tensor, y: Tensor) -> Tensor:
    """Mean |.| over real and imaginary parts of the unnormalized 2-D real FFT difference."""
    d = torch.fft.rfft2(x - y, norm="backward")
    return torch.stack([d.real, d.imag]).abs().mean()


def loss_decoder(preds: Sequence[Tensor], sharp: Tensor, freq_weight: float = 0.01) -> Tensor:
    """Mean over columns of L1 plus ``freq_weight`` times the frequency L1."""
    if len(preds) == 0:
        raise ValueError("need at least one prediction")
    k = len(preds)
    spatial = sum((p - sharp).abs().mean() for p in preds) / k
    freq = sum(frequency_l1(p, sharp) for p in preds) / k
    return spatial + freq_weight * freq


def loss_classifier(logits: Tensor, classes: Tensor) -> Tensor:
    """Softmax cross-entropy with 1-based class labels."""
    c = logits.shape[-1]
    if bool(((classes < 1) | (classes > c)).any()):
        raise ValueError(f"class labels must lie in 1..{c}")
    return F.cross_entropy(logits, classes - 1)


class TrainingAborted(RuntimeError):
    pass


@dataclass
class LogRecord:
    iter: int
    lr: float
    loss: float
    psnrs: list[float]

    def to_line(self) -> str:
        return "\t".join([str(self.iter), repr(self.lr), repr(self.loss), *map(repr, self.psnrs)])


def write_log(path: str | Path, records: Sequence[LogRecord], columns: int) -> None:
    head = "\t".join(["iter", "lr", "loss", *[f"psnr_dec{j}" for j in range(1, columns + 1)]])
    Path(path).write_text("\n".join([head, *[r.to_line() for r in records]]) + "\n", encoding="utf-8")


@torch.no_grad()
def evaluate_columns(model, pairs, upto: int | None = None) -> list[float]:
    """Mean PSNR of every column's restoration over (blur, sharp) CHW pairs."""
    totals = None
    for blur, sharp in pairs:
        outs = model.restore_all(torch.from_numpy(blur)[None], upto)
        vals = [psnr(o[0], sharp) for o in outs]
        totals = vals if totals is None else [a + b for a, b in zip(totals, vals)]
    return [t / len(pairs) for t in totals]


def train_decoder(cfg: TrainConfig, data, model, val_pairs=(), columns: int | None = None, ckpt_path=None):
    """Decoder phase: composite loss over columns ``1..columns`` (default all).

    ``data`` must provide ``sample(rng, batch, patch, flips)`` returning
    (blur, sharp) float32 tensors. With ``cfg.frozen_encoder`` the head and
    encoder stay fixed. Ends with the EMA weights loaded into ``model``.
    """
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    columns = model.columns if columns is None else columns
    model.freeze_encoder(cfg.frozen_encoder)
    for p in model.cls.parameters():
        p.requires_grad_(False)
    trainable = [p for p in model.decoder_parameters() if p.requires_grad]
    if not cfg.frozen_encoder:
        trainable = model.encoder_parameters() + trainable
    opt = torch.optim.AdamW(trainable, lr=cfg.lr_init, betas=(cfg.beta1, cfg.beta2), weight_decay=cfg.weight_decay)
    ema = EMA(trainable, cfg.ema_decay)
    records: list[LogRecord] = []
    good = None
    window: list[float] = []
    model.train()
    for it in range(cfg.iters):
        lr = cosine_lr(it, cfg.iters, cfg.lr_init, cfg.lr_final)
        for g in opt.param_groups:
            g["lr"] = lr
        blur, sharp = data.sample(rng, cfg.batch, cfg.patch, cfg.flips)
        loss = loss_decoder(model.restore_all(blur, columns, reversible=cfg.reversible), sharp, cfg.freq_weight)
        if not bool(torch.isfinite(loss)):
            if ckpt_path is not None and good is not None:
                model.load_tensors(good)
                model.save(ckpt_path)
            raise TrainingAborted(f"non-finite loss at iteration {it}")
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        model.dec.clamp_alphas()
        ema.update()
        window.append(loss.item())
        done = it + 1
        if done % cfg.eval_every == 0 or done == cfg.iters:
            with ema.applied():
                good = model.export_tensors()
                psnrs = evaluate_columns(model, val_pairs, columns) if len(val_pairs) else []
            rec = LogRecord(done, lr, float(np.mean(window)), psnrs)
            records.append(rec)
            log.info("%s", rec.to_line())
            window = []
    ema.copy_to()
    model.eval()
    if ckpt_path is not None:
        model.save(ckpt_path)
    return records


def classifier_inputs(model, blurs: Sequence[np.ndarray]) -> Tensor:
    """Encoder level features the classifier reads, for a list of CHW blur patches."""
    with torch.no_grad():
        feats = [model.encode(torch.from_numpy(b)[None])[model.cfg.classifier_level - 1] for b in blurs]
    return torch.cat(feats)


def train_classifier(cfg: TrainConfig, model, blurs: Sequence[np.ndarray], classes: Sequence[int], ckpt_path=None) -> list[tuple[int, float, float]]:
    """Classifier phase: cross-entropy on frozen encoder features.

    Only ``model.cls`` is updated. Returns ``(iter, loss, train_accuracy)`` records.
    """
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    for p in model.parameters():
        p.requires_grad_(False)
    for p in model.cls.parameters():
        p.requires_grad_(True)
    feats = classifier_inputs(model, blurs)
    labels = torch.as_tensor(np.asarray(classes), dtype=torch.long)
    params = list(model.cls.parameters())
    opt = torch.optim.AdamW(params, lr=cfg.lr_init, betas=(cfg.beta1, cfg.beta2), weight_decay=cfg.weight_decay)
    records = []
    n = feats.shape[0]
    for it in range(cfg.iters):
        lr = cosine_lr(it, cfg.iters, cfg.lr_init, cfg.lr_final)
        for g in opt.param_groups:
            g["lr"] = lr
        idx = torch.from_numpy(rng.integers(0, n, size=min(cfg.batch, n)))
        loss = loss_classifier(model.cls(feats[idx]), labels[idx])
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        done = it + 1
        if done % cfg.eval_every == 0 or done == cfg.iters:
            with torch.no_grad():
                acc = float((model.cls(feats).argmax(-1) + 1 == labels).double().mean())
            records.append((done, loss.item(), acc))
    for p in model.parameters():
        p.requires_grad_(True)
    model.eval()
    if ckpt_path is not None:
        model.save(ckpt_path)
    return records
