"""Glancing broken ray in the ellipse-like band, written as an SVG plus ray and event CSVs."""

import argparse
import sys
from pathlib import Path

from brokenray.cli import main


def parse_args():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--outdir", default="figures")
    p.add_argument("--eps", type=float, default=0.15, help="normal launch speed")
    return p.parse_args()


if __name__ == "__main__":
    args = parse_args()
    out = Path(args.outdir)
    sys.exit(main(["trace", "--chart", "band:kappa=ellipse-like", "--sigma", "start=0;dir=1;L=2*pi",
                   "--eps-max", repr(args.eps), "--out", str(out / "figure1.csv"), "--svg", str(out / "figure1.svg")]))
