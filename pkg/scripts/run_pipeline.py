"""Run the desk pipeline end to end and print the summary numbers.

    python3 scripts/run_pipeline.py runs/desk --seed 0
"""
import argparse
import logging
from dataclasses import replace

import numpy as np

from revdeblur import pipeline


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("workdir", help="output directory for corpora, logs, checkpoint and tables")
    ap.add_argument("--seed", type=int, default=0, help="master seed")
    ap.add_argument("--decoder-iters", type=int, default=None, help="override decoder-phase iterations")
    ap.add_argument("--tau", type=float, default=None, help="override exit threshold in dB")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = pipeline.PipelineConfig(seed=args.seed)
    if args.decoder_iters is not None:
        cfg.decoder = replace(cfg.decoder, iters=args.decoder_iters)
    if args.tau is not None:
        cfg.tau = args.tau
    res = pipeline.run(args.workdir, cfg)

    p = res["val_psnrs"]
    steps = np.diff(p[:, 1:], axis=1)
    print(f"training time      {res['train_seconds'] / 60:.1f} min")
    print("val PSNR per col   " + " ".join(f"{v:.3f}" for v in p.mean(axis=0)) + "  (first is the blur input)")
    print(f"monotone patches   {(steps >= 0).all(axis=1).mean():.3f}")
    print(f"test blur / full   {res['psnr_blur']:.3f} / {res['psnr_full']:.3f} dB")
    print(f"test adaptive      {res['psnr_adaptive']:.3f} dB at usage {res['usage_adaptive']:.3f}")
    print(f"exit columns       {list(res['policy'].exits)}")


if __name__ == "__main__":
    main()
