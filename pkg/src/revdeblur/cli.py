"""Command line entry points.

Subcommands: gen-data, train-decoder, train-classifier, build-table,
make-policy, infer, bench-memory, analyze-cka, eval. Run any of them with
``--help`` for the flags.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from .analysis import cka_study, cka_to_tsv, corpus_increment_table, eval_to_tsv, evaluate_corpus, write_text
from .data import BlurSpec, Corpus, CorpusSpec, generate_corpus, load_png, save_png
from .exit_policy import ExitPolicy, IncrementTable, compute_exit_signal, make_bins
from .inference import InferenceConfig, TileConfig, deblur_image, write_exit_map
from .metrics import bench_memory
from .model import DeblurNet, ModelConfig
from .training import TrainConfig, train_classifier, train_decoder, write_log


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",")]


def _bins(args) -> tuple[float, ...]:
    return make_bins(args.bin_start, args.bin_step, args.bin_count)


def _add_bins(p: argparse.ArgumentParser) -> None:
    p.add_argument("--bin-start", type=float, default=20.0, help="first PSNR class edge in dB (default 20)")
    p.add_argument("--bin-step", type=float, default=5.0, help="class edge spacing in dB (default 5)")
    p.add_argument("--bin-count", type=int, default=5, help="number of edges; classes = edges + 1 (default 5)")


def _train_config(args) -> TrainConfig:
    cfg = TrainConfig.load(args.config) if args.config else TrainConfig()
    overrides = {k: getattr(args, k) for k in ("iters", "batch", "patch", "seed") if getattr(args, k, None) is not None}
    return TrainConfig(**{**cfg.__dict__, **overrides})


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value training config file (keys of TrainConfig)")
    p.add_argument("--iters", type=int, help="override iteration count")
    p.add_argument("--batch", type=int, help="override batch size")
    p.add_argument("--patch", type=int, help="override training patch size")
    p.add_argument("--seed", type=int, help="override seed")


def _load_model(path: str) -> DeblurNet:
    if not Path(path).is_file():
        raise FileNotFoundError(f"model checkpoint not found: {path}")
    model = DeblurNet.load(path)
    model.eval()
    return model


def _infer_config(args, model) -> InferenceConfig:
    tiles = TileConfig(args.window, args.stride)
    if args.policy:
        if args.fixed_j is not None:
            raise ValueError("--policy and --fixed-j are exclusive")
        return InferenceConfig("adaptive", policy=ExitPolicy.load(args.policy, model.columns), tiles=tiles)
    return InferenceConfig("fixed", fixed_j=args.fixed_j, tiles=tiles)


def _add_infer_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--policy", help="exit policy TSV; enables adaptive exits")
    p.add_argument("--fixed-j", type=int, help="run exactly this many columns per window")
    p.add_argument("--window", type=int, default=384, help="tile size in px (default 384)")
    p.add_argument("--stride", type=int, default=352, help="tile step in px (default 352)")


def cmd_gen_data(args) -> None:
    spec = CorpusSpec(
        count=args.count,
        image_size=(args.size, args.size),
        patch=args.patch,
        stride=args.patch_stride or args.patch,
        blur=BlurSpec(args.family, (args.length_min, args.length_max), (0.0, 180.0), (args.grid, args.grid), args.noise),
        bins=_bins(args),
        seed=args.seed,
    )
    sources = None
    if args.sources:
        files = sorted(Path(args.sources).glob("*.png"))
        if not files:
            raise FileNotFoundError(f"no PNG files in {args.sources}")
        sources = [load_png(f).astype(np.float64) for f in files]
    recs = generate_corpus(args.out, spec, sources)
    print(f"wrote {len(recs)} patch records to {Path(args.out) / 'manifest.tsv'}")


def cmd_train_decoder(args) -> None:
    cfg = _train_config(args)
    train = Corpus(args.train)
    val = Corpus(args.val).patches() if args.val else []
    torch.manual_seed(cfg.seed)
    if args.init:
        model = _load_model(args.init)
    else:
        model = DeblurNet(ModelConfig(base_channels=args.base_channels, columns=args.columns))
        if args.warmup_iters:
            warm = TrainConfig(**{**cfg.__dict__, "iters": args.warmup_iters, "frozen_encoder": False, "reversible": False})
            train_decoder(warm, train, model, val, columns=1)
            model.copy_tail(1)
    records = train_decoder(cfg, train, model, val, ckpt_path=args.out)
    if args.log:
        write_log(args.log, records, model.columns)
    print(f"saved {args.out}")


def cmd_train_classifier(args) -> None:
    cfg = _train_config(args)
    model = _load_model(args.model)
    train = Corpus(args.train)
    blurs = [train.patch(r)[0] for r in train.records]
    recs = train_classifier(cfg, model, blurs, [r.cls for r in train.records], ckpt_path=args.out)
    if recs:
        print(f"final train accuracy {recs[-1][2]:.4f}")


def cmd_build_table(args) -> None:
    model = _load_model(args.model)
    table = corpus_increment_table(model, Corpus(args.corpus), _bins(args))
    table.save(args.out)
    sys.stdout.write(table.to_tsv())


def cmd_make_policy(args) -> None:
    if not Path(args.table).is_file():
        raise FileNotFoundError(f"increment table not found: {args.table}")
    policy = compute_exit_signal(IncrementTable.load(args.table), args.tau, inclusive=args.inclusive)
    if args.out:
        policy.save(args.out)
    sys.stdout.write(policy.to_tsv())


def cmd_infer(args) -> None:
    model = _load_model(args.model)
    cfg = _infer_config(args, model)
    src = Path(args.input)
    files = sorted(src.glob("*.png")) if src.is_dir() else [src]
    if not files or not files[0].is_file():
        raise FileNotFoundError(f"no input images at {src}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for f in files:
        img = load_png(f).transpose(2, 0, 1)
        restored, exits = deblur_image(model, img, cfg)
        save_png(out / f.name, restored.transpose(1, 2, 0))
        write_exit_map(out / f"{f.stem}_exits.tsv", exits)
        print(f"{f.name}\twindows={len(exits)}\tmean_exit={np.mean([e for _, _, e in exits]):.3f}")


def cmd_bench_memory(args) -> None:
    torch.manual_seed(args.seed)
    cols = _ints(args.columns)
    model = DeblurNet(ModelConfig(base_channels=args.base_channels, columns=max(cols)))
    model.freeze_encoder()
    g = torch.Generator().manual_seed(args.seed)
    blur = torch.rand(1, 3, args.size, args.size, generator=g)
    sharp = torch.rand(1, 3, args.size, args.size, generator=g)
    text = bench_memory(model, blur, sharp, cols).to_tsv()
    if args.out:
        write_text(args.out, text)
    sys.stdout.write(text)


def cmd_analyze_cka(args) -> None:
    model = _load_model(args.model)
    corpus = Corpus(args.corpus)
    patches = corpus.patches()[: args.limit] if args.limit else corpus.patches()
    text = cka_to_tsv(cka_study(model, patches))
    if args.out:
        write_text(args.out, text)
    sys.stdout.write(text)


def cmd_eval(args) -> None:
    corpus = Corpus(args.corpus)
    if args.model:
        model = _load_model(args.model)
        rows = evaluate_corpus(corpus, model, _infer_config(args, model))
    else:
        rows = evaluate_corpus(corpus)
    text = eval_to_tsv(rows)
    if args.out:
        write_text(args.out, text)
    sys.stdout.write(text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="revdeblur", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic blur corpus")
    p.add_argument("--out", required=True, help="corpus directory")
    p.add_argument("--count", type=int, default=32, help="number of images (default 32)")
    p.add_argument("--size", type=int, default=128, help="image side in px (default 128)")
    p.add_argument("--patch", type=int, default=64, help="manifest patch size (default 64)")
    p.add_argument("--patch-stride", type=int, help="manifest patch stride (default: patch size)")
    p.add_argument("--family", choices=("linear", "walk"), default="linear", help="kernel family")
    p.add_argument("--length-min", type=float, default=1.0, help="shortest kernel length in px")
    p.add_argument("--length-max", type=float, default=15.0, help="longest kernel length in px")
    p.add_argument("--grid", type=int, default=2, help="kernel nodes per axis (spatial variation)")
    p.add_argument("--noise", type=float, default=0.002, help="Gaussian noise sigma")
    p.add_argument("--sources", help="directory of sharp PNGs to use instead of procedural images")
    p.add_argument("--seed", type=int, default=0, help="corpus seed")
    _add_bins(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-decoder", help="train the reversible decoder")
    p.add_argument("--train", required=True, help="training corpus directory")
    p.add_argument("--val", help="validation corpus directory")
    p.add_argument("--out", required=True, help="output checkpoint")
    p.add_argument("--log", help="metrics log TSV")
    p.add_argument("--init", help="start from this checkpoint")
    p.add_argument("--columns", type=int, default=4, help="sub-decoder count J (default 4)")
    p.add_argument("--base-channels", type=int, default=8, help="level-1 channel width (default 8)")
    p.add_argument("--warmup-iters", type=int, default=0, help="joint encoder + column-1 iterations before freezing")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train_decoder)

    p = sub.add_parser("train-classifier", help="train the degradation classifier")
    p.add_argument("--train", required=True, help="training corpus directory")
    p.add_argument("--model", required=True, help="decoder checkpoint")
    p.add_argument("--out", required=True, help="output checkpoint")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train_classifier)

    p = sub.add_parser("build-table", help="collect the per-class increment table")
    p.add_argument("--model", required=True, help="model checkpoint")
    p.add_argument("--corpus", required=True, help="corpus directory (training split)")
    p.add_argument("--out", required=True, help="output table TSV")
    _add_bins(p)
    p.set_defaults(func=cmd_build_table)

    p = sub.add_parser("make-policy", help="derive exit columns from an increment table")
    p.add_argument("--table", required=True, help="increment table TSV")
    p.add_argument("--tau", type=float, default=0.05, help="gain threshold in dB (default 0.05)")
    p.add_argument("--inclusive", action="store_true", help="compare with <= instead of <")
    p.add_argument("--out", help="output policy TSV")
    p.set_defaults(func=cmd_make_policy)

    p = sub.add_parser("infer", help="deblur images with sliding windows")
    p.add_argument("--model", required=True, help="model checkpoint")
    p.add_argument("--input", required=True, help="PNG file or directory")
    p.add_argument("--out", required=True, help="output directory")
    _add_infer_flags(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("bench-memory", help="retained activation bytes, reversible vs not")
    p.add_argument("--columns", default="1,2,4,8", help="comma-separated column counts")
    p.add_argument("--base-channels", type=int, default=8, help="level-1 channel width")
    p.add_argument("--size", type=int, default=64, help="input side in px")
    p.add_argument("--seed", type=int, default=0, help="seed")
    p.add_argument("--out", help="output TSV")
    p.set_defaults(func=cmd_bench_memory)

    p = sub.add_parser("analyze-cka", help="CKA of decoder features vs blur pattern / degradation degree")
    p.add_argument("--model", required=True, help="model checkpoint")
    p.add_argument("--corpus", required=True, help="corpus directory")
    p.add_argument("--limit", type=int, default=0, help="use at most this many patches")
    p.add_argument("--out", help="output TSV")
    p.set_defaults(func=cmd_analyze_cka)

    p = sub.add_parser("eval", help="PSNR/SSIM of a corpus, optionally after restoration")
    p.add_argument("--corpus", required=True, help="corpus directory")
    p.add_argument("--model", help="model checkpoint; omit to score the blur input")
    p.add_argument("--out", help="output TSV")
    _add_infer_flags(p)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr)
    torch.set_num_threads(1)
    try:
        args.func(args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
