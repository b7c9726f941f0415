"""Run the baseline/A/B/C/D ladder at desk scale and print a results table.

Usage: python scripts/run_ablation.py [--out runs/ablation] [--p 1e-6] [KEY=VALUE ...]

Mode B starts from the baseline checkpoint and modes C and D from the mode A
checkpoint of the same run, so each rung adds one ingredient. Every model is
then passed through the 2pi smoother.
"""
import argparse
import logging

import yaml

from donnrough.config import load_config
from donnrough.train import ablation


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/ablation")
    ap.add_argument("--preset", default="desk")
    ap.add_argument("--config")
    ap.add_argument("--modes", default="baseline,A,B,C,D")
    ap.add_argument("--p", type=float, default=1e-6)
    ap.add_argument("--q", type=float, default=1e-5)
    ap.add_argument("set", nargs="*", help="dotted KEY=VALUE overrides")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    base = load_config(args.config, args.preset)
    base = base.replace(**{k: yaml.safe_load(v) for k, v in (s.split("=", 1) for s in args.set)})
    rows = ablation(base, args.out, args.modes.split(","), args.p, args.q)
    print(f"{'mode':9s} {'accuracy':>8s} {'R_before':>10s} {'R_after':>10s}")
    for r in rows:
        print(f"{r['mode']:9s} {r['accuracy']:8.4f} {r['r_before']:10.2f} {r['r_after']:10.2f}")


if __name__ == "__main__":
    main()
