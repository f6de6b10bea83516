"""Linear CKA of every decoder feature against the blur pattern and the degradation feature.

    python3 scripts/cka_analysis.py runs/desk/model.ckpt runs/desk/corpus/val --limit 32
"""
import argparse

import torch

from revdeblur.analysis import cka_study, cka_to_tsv
from revdeblur.data import Corpus
from revdeblur.model import DeblurNet


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("model", help="checkpoint written by the pipeline or train-decoder")
    ap.add_argument("corpus", help="corpus directory (e.g. the val split)")
    ap.add_argument("--limit", type=int, default=0, help="use only the first N patches (0 = all)")
    args = ap.parse_args()
    torch.set_num_threads(1)
    model = DeblurNet.load(args.model)
    patches = Corpus(args.corpus).patches()
    if args.limit:
        patches = patches[: args.limit]
    print(cka_to_tsv(cka_study(model, patches)), end="")


if __name__ == "__main__":
    main()
