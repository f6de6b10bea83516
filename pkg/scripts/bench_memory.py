"""Retained activation bytes of reversible vs full-storage training against column count.

    python3 scripts/bench_memory.py --size 64 --columns 1,2,4,8
"""
import argparse

import torch

from revdeblur.metrics import bench_memory
from revdeblur.model import DeblurNet, ModelConfig


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=64, help="square input side in pixels")
    ap.add_argument("--base-channels", type=int, default=8, help="channels at the finest level")
    ap.add_argument("--columns", default="1,2,4,8", help="comma-separated column counts")
    ap.add_argument("--seed", type=int, default=0, help="seed for weights and inputs")
    args = ap.parse_args()
    torch.set_num_threads(1)
    cols = [int(c) for c in args.columns.split(",")]

    torch.manual_seed(args.seed)
    model = DeblurNet(ModelConfig(base_channels=args.base_channels, columns=max(cols)))
    model.freeze_encoder()
    g = torch.Generator().manual_seed(args.seed)
    blur = torch.rand(1, 3, args.size, args.size, generator=g)
    sharp = torch.rand(1, 3, args.size, args.size, generator=g)
    bench = bench_memory(model, blur, sharp, cols)
    print(bench.to_tsv(), end="")


if __name__ == "__main__":
    main()
