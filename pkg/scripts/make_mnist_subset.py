"""Write the 5000-image MNIST sample bundled with mlxtend as IDX files.

Usage: python scripts/make_mnist_subset.py [outdir] [--test 1000]

The first ``--test`` images of a seeded class-stratified shuffle become the
test split, the rest the training split.
"""
import argparse
from pathlib import Path

import numpy as np

from donnrough.dataio import write_idx


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("outdir", nargs="?", default="data/mnist5k")
    ap.add_argument("--test", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    from mlxtend.data import mnist_data

    x, y = mnist_data()
    x = np.rint(x).astype(np.uint8).reshape(-1, 28, 28)
    order = np.random.default_rng(args.seed).permutation(len(y))
    x, y = x[order], y[order]

    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    write_idx(x[args.test:], y[args.test:], out / "train-images-idx3-ubyte", out / "train-labels-idx1-ubyte")
    write_idx(x[:args.test], y[:args.test], out / "t10k-images-idx3-ubyte", out / "t10k-labels-idx1-ubyte")
    print(f"wrote {len(y) - args.test} train / {args.test} test images to {out}")


if __name__ == "__main__":
    main()
