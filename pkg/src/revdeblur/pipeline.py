"""End-to-end desk run: corpus -> encoder warm-up -> decoder -> classifier -> policy -> inference."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .analysis import corpus_increment_table, eval_to_tsv, evaluate_corpus, write_text
from .data import BlurSpec, Corpus, CorpusSpec, generate_corpus
from .exit_policy import GOPRO_BINS, column_psnrs, compute_exit_signal
from .inference import InferenceConfig, TileConfig
from .model import DeblurNet, ModelConfig
from .training import TrainConfig, train_classifier, train_decoder, write_log

log = logging.getLogger(__name__)


@dataclass
class PipelineConfig:
    seed: int = 0
    train_images: int = 96
    val_images: int = 16
    test_images: int = 16
    image_size: tuple[int, int] = (128, 128)
    patch: int = 64
    blur: BlurSpec = field(default_factory=lambda: BlurSpec(length_range=(1.0, 15.0), grid=(2, 2), noise_sigma=0.002))
    model: ModelConfig = field(default_factory=ModelConfig)
    warmup: TrainConfig = field(
        default_factory=lambda: TrainConfig(iters=800, patch=64, batch=4, eval_every=200, lr_init=2e-3, ema_decay=0.995, frozen_encoder=False, reversible=False)
    )
    decoder: TrainConfig = field(
        default_factory=lambda: TrainConfig(iters=2000, patch=64, batch=4, eval_every=250, lr_init=5e-4, ema_decay=0.995)
    )
    classifier: TrainConfig = field(
        default_factory=lambda: TrainConfig(iters=1500, batch=32, eval_every=500, lr_init=1e-3, ema_decay=0.995)
    )
    tau: float = 0.05
    tiles: TileConfig = field(default_factory=lambda: TileConfig(window=64, stride=48))
    bins: tuple[float, ...] = GOPRO_BINS


def make_corpora(root: Path, cfg: PipelineConfig) -> dict[str, Corpus]:
    out = {}
    for k, (name, count) in enumerate((("train", cfg.train_images), ("val", cfg.val_images), ("test", cfg.test_images))):
        spec = CorpusSpec(count, cfg.image_size, cfg.patch, cfg.patch, cfg.blur, cfg.bins, seed=cfg.seed * 1000 + k + 1)
        generate_corpus(root / name, spec)
        out[name] = Corpus(root / name)
    return out


def run(workdir: str | Path, cfg: PipelineConfig) -> dict:
    """Run every stage, writing artifacts under ``workdir``; returns summary numbers."""
    torch.set_num_threads(1)
    root = Path(workdir)
    root.mkdir(parents=True, exist_ok=True)
    corpora = make_corpora(root / "corpus", cfg)
    val_pairs = corpora["val"].patches()

    torch.manual_seed(cfg.seed)
    model = DeblurNet(cfg.model)
    t0 = time.perf_counter()
    log.info("warm-up: encoder + column 1")
    warm = train_decoder(replace(cfg.warmup, seed=cfg.seed), corpora["train"], model, val_pairs, columns=1)
    write_log(root / "warmup_log.tsv", warm, 1)
    model.copy_tail(1)
    log.info("decoder phase: %d columns, frozen encoder", model.columns)
    dec = train_decoder(replace(cfg.decoder, seed=cfg.seed), corpora["train"], model, val_pairs)
    write_log(root / "decoder_log.tsv", dec, model.columns)
    train_seconds = time.perf_counter() - t0
    val_psnrs = column_psnrs(model, val_pairs)
    np.savetxt(root / "val_patch_psnrs.tsv", val_psnrs, delimiter="\t", header="blur\t" + "\t".join(f"dec{j}" for j in range(1, model.columns + 1)))

    train = corpora["train"]
    blurs = [train.patch(r)[0] for r in train.records]
    classes = [r.cls for r in train.records]
    cls_log = train_classifier(replace(cfg.classifier, seed=cfg.seed), model, blurs, classes)
    model.save(root / "model.ckpt")

    table = corpus_increment_table(model, train, cfg.bins)
    table.save(root / "table.tsv")
    policy = compute_exit_signal(table, cfg.tau)
    policy.save(root / "policy.tsv")

    test = corpora["test"]
    full = evaluate_corpus(test, model, InferenceConfig("fixed", tiles=cfg.tiles))
    ada = evaluate_corpus(test, model, InferenceConfig("adaptive", policy=policy, tiles=cfg.tiles))
    blur = evaluate_corpus(test)
    write_text(root / "eval_full.tsv", eval_to_tsv(full))
    write_text(root / "eval_adaptive.tsv", eval_to_tsv(ada))
    write_text(root / "eval_blur.tsv", eval_to_tsv(blur))
    return {
        "decoder_log": dec,
        "train_seconds": train_seconds,
        "val_psnrs": val_psnrs,
        "classifier_log": cls_log,
        "policy": policy,
        "table": table,
        "psnr_blur": float(np.mean([r.psnr for r in blur])),
        "psnr_full": float(np.mean([r.psnr for r in full])),
        "psnr_adaptive": float(np.mean([r.psnr for r in ada])),
        "usage_adaptive": float(np.mean([r.usage for r in ada])),
        "model": model,
        "corpora": corpora,
    }
