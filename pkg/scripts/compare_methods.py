"""Run all six methods on one benchmark case and print the comparison table.

    python scripts/compare_methods.py --case cantilever --scale 0.12 --out out/cantilever
"""
import argparse
import sys

from topobench import config as cfgmod
from topobench.cli import execute
from topobench.problem import METHODS


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--case", default="cantilever")
    ap.add_argument("--scale", type=float, default=0.12)
    ap.add_argument("--ndim", type=int, choices=(2, 3), default=3)
    ap.add_argument("--out", default="out/compare")
    ap.add_argument("--parallel", type=int, default=1)
    args = ap.parse_args()
    cfg = cfgmod.RunConfig(case=args.case, methods=list(METHODS), scale=args.scale,
                           ndim=args.ndim, out_dir=args.out)
    return execute(cfg, args.parallel)


if __name__ == "__main__":
    sys.exit(main())
