"""Recovery error against launch speed for k = 0, 1, 2 on the disk and the default band."""

import argparse
import math

import numpy as np

from brokenray.billiards import launch_glancing
from brokenray.geometry import band_chart, disk_chart, integrate_boundary_geodesic, unit_tangent
from brokenray.numerics import fit_order
from brokenray.output import write_csv
from brokenray.reconstruction import recover_k
from brokenray.transforms import ScalarField, WeightSpec

FIELDS = {0: "1 + cos(x1)", 1: "x0*(2 + sin(x1))", 2: "x0^2*(2 + sin(x1))"}


def parse_args():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out", default="figures/convergence.csv")
    p.add_argument("--eps-count", type=int, default=8)
    return p.parse_args()


def sweep(chart, eps):
    xb = np.array([0.0])
    sigma = integrate_boundary_geodesic(chart, xb, unit_tangent(chart, xb, np.array([1.0])), math.pi)
    fam = launch_glancing(chart, sigma, eps)
    rows = []
    for k, text in FIELDS.items():
        rep = recover_k(chart, WeightSpec.trivial(), ScalarField.from_expression(text), sigma, fam, k)
        errs = [(r.eps, abs(r.estimate - rep.ground_truth) / abs(rep.ground_truth)) for r in rep.rows]
        order = fit_order(errs)[0] if len(errs) >= 3 and min(e for _, e in errs) > 0 else float("nan")
        print(f"{chart.name} k={k}: limit error {rep.rel_error:.3e}, fitted order {order:.3f}")
        rows += [(chart.name, k, e, err) for e, err in errs]
    return rows


if __name__ == "__main__":
    args = parse_args()
    eps = 0.1 * 0.5 ** np.arange(args.eps_count)
    rows = sweep(disk_chart(), eps) + sweep(band_chart(), eps)
    path = write_csv(args.out, [("chart", "name"), ("k", "1"), ("eps", "1"), ("rel_error", "1")], rows)
    print(f"wrote {path}")
