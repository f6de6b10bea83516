"""Corpus-level evaluation and representation analysis on trained models."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .backbone import pad_to_multiple
from .exit_policy import IncrementTable, build_increment_table
from .inference import InferenceConfig, deblur_image
from .metrics import linear_cka, psnr, ssim


def corpus_increment_table(model, corpus, bins: Sequence[float]) -> IncrementTable:
    return build_increment_table(model, corpus.patches(), bins)


@dataclass
class EvalRow:
    name: str
    psnr: float
    ssim: float
    usage: float

    def to_line(self) -> str:
        return f"{self.name}\t{self.psnr!r}\t{self.ssim!r}\t{self.usage!r}"


def evaluate_corpus(corpus, model=None, cfg: InferenceConfig | None = None) -> list[EvalRow]:
    """PSNR/SSIM of every image in ``corpus``.

    Without a model the blur input itself is scored. ``usage`` is the
    fraction of decoder columns run, averaged over windows.
    """
    rows = []
    names = sorted({r.blur for r in corpus.records})
    for name, (blur, sharp) in zip(names, corpus.pairs):
        if model is None:
            out, usage = blur, 0.0
        else:
            out, exits = deblur_image(model, blur, cfg or InferenceConfig())
            usage = float(np.mean([e for _, _, e in exits])) / model.columns
        rows.append(EvalRow(name, psnr(out, sharp), ssim(out, sharp), usage))
    return rows


def eval_to_tsv(rows: Sequence[EvalRow]) -> str:
    lines = ["image\tpsnr\tssim\tusage"] + [r.to_line() for r in rows]
    if rows:
        lines.append("mean\t{!r}\t{!r}\t{!r}".format(*(float(np.mean([getattr(r, k) for r in rows])) for k in ("psnr", "ssim", "usage"))))
    return "\n".join(lines) + "\n"


@torch.no_grad()
def cka_study(model, patches: Sequence[tuple[np.ndarray, np.ndarray]]) -> list[tuple[int, int, float, float]]:
    """Linear CKA of each decoder feature ``d_i^j`` against two targets.

    Targets are the blur pattern (blur minus sharp) and the classifier's
    degradation-degree feature. Column 0 is the encoder. Returns
    ``(column, level, cka_pattern, cka_degree)`` rows.
    """
    feats_by_key: dict[tuple[int, int], list[np.ndarray]] = {}
    pattern, degree = [], []
    for blur, sharp in patches:
        b = torch.from_numpy(np.ascontiguousarray(blur))[None]
        padded, _ = pad_to_multiple(b, model.enc.cfg.multiple)
        enc = model.encode(padded)
        states = model.dec.all_states(enc)
        for j, state in enumerate(states):
            for i, d in enumerate(state, 1):
                feats_by_key.setdefault((j, i), []).append(d[0].numpy().ravel())
        pattern.append((blur - sharp).ravel())
        degree.append(model.cls.features(enc[model.cfg.classifier_level - 1])[0].numpy().ravel())
    P, D = np.array(pattern), np.array(degree)
    rows = []
    for (j, i), xs in sorted(feats_by_key.items()):
        X = np.array(xs)
        rows.append((j, i, linear_cka(X, P), linear_cka(X, D)))
    return rows


def cka_to_tsv(rows) -> str:
    lines = ["column\tlevel\tcka_blur_pattern\tcka_degradation"]
    lines += [f"{j}\t{i}\t{a!r}\t{b!r}" for j, i, a, b in rows]
    return "\n".join(lines) + "\n"


def write_text(path: str | Path, text: str) -> None:
    Path(path).write_text(text, encoding="utf-8")
