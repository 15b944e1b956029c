"""Piecewise-constant recovery from exponential moments, then the planar transform checks."""

import argparse
import sys

from brokenray.cli import main


def parse_args():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--outdir", default="figures")
    return p.parse_args()


if __name__ == "__main__":
    out = parse_args().outdir
    codes = [
        main(["laplace", "--mode", "recover", "--chart", "disk", "--field", "2 + cos(x1)", "--bins", "4",
              "--out", f"{out}/laplace_bins.csv"]),
        main(["laplace", "--mode", "transform", "--planar-field", "two-squares", "--out", f"{out}/transform.csv"]),
        main(["laplace", "--mode", "identities", "--planar-field", "two-squares"]),
        main(["laplace", "--mode", "witness", "--planar-field", "annulus"]),
    ]
    sys.exit(max(codes))
