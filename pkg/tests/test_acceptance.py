"""Acceptance criteria, each checked at its stated tolerance.

Every check prints one ``[PASS]``/``[FAIL]`` line; the lines are repeated in
the pytest terminal summary.  Run with ``pytest tests/test_acceptance.py -v``.
"""

import math
import time

import numpy as np
import pytest

from brokenray.billiards import (PhaseState, TraceSettings, bounce_intervals, depth_integral_check,
                                 launch_glancing, launch_state, trace)
from brokenray.cli import main as cli_main
from brokenray.geometry import (band_chart, disk_chart, integrate_boundary_geodesic, sphere_band_chart,
                                unit_tangent)
from brokenray.laplace1d import (MomentSystem, annulus_witness, check_identities, default_complex_grid,
                                 default_lambda_grid, disk_indicator, laplace_recover, piecewise_moments,
                                 rect_indicator, rotsym_kernel_witness, transform_I, two_squares)
from brokenray.numerics import fit_order
from brokenray.reconstruction import convergence_diagnostics, recover_k, recover_k0
from brokenray.transforms import ScalarField, WeightSpec, boundary_ray_transform, broken_ray_transform

EPS_10 = 2.0 ** -np.arange(4, 11)   # 2^-4 .. 2^-10
EPS_12 = 2.0 ** -np.arange(4, 13)   # 2^-4 .. 2^-12
BAND_START = -math.pi / 2           # one band geodesic for every band criterion


def geodesic(chart, start, direction, L):
    xb = np.atleast_1d(np.asarray(start, dtype=float))
    return integrate_boundary_geodesic(chart, xb, unit_tangent(chart, xb, np.atleast_1d(direction)), L)


@pytest.fixture(scope="module")
def disk():
    chart = disk_chart()
    return chart, geodesic(chart, 0.0, 1.0, math.pi)


@pytest.fixture(scope="module")
def band():
    chart = band_chart()
    return chart, geodesic(chart, BAND_START, 1.0, math.pi)


@pytest.fixture(scope="module")
def disk_family_12(disk):
    chart, sigma = disk
    return launch_glancing(chart, sigma, EPS_12)


@pytest.fixture(scope="module")
def band_family_12(band):
    chart, sigma = band
    return launch_glancing(chart, sigma, EPS_12)


# 1 --------------------------------------------------------------------------

def test_1_disk_exactness(criterion):
    chart = disk_chart()
    theta = 0.1
    s = math.sin(theta)
    start = PhaseState(0.0, np.zeros(2), np.array([s, math.cos(theta)]))
    trace(chart, start, 4 * s)  # compile outside the timed run
    t0 = time.perf_counter()
    ray = trace(chart, start, 100 * s + 1e-9)
    elapsed = time.perf_counter() - t0
    j = np.arange(1, 51)
    ev = ray.event_index
    err_t = float(np.max(np.abs(ray.event_times[:50] - 2 * s * j)))
    err_x = float(np.max(np.abs(ray.x[ev[:50], 1] - 2 * theta * j)))
    ok = len(ev) == 50 and err_t <= 1e-8 and err_x <= 1e-8 and elapsed < 1.0
    assert criterion("1 disk exactness", ok, f"50 bounces, time err {err_t:.2e}, position err {err_x:.2e} "
                     f"(tol 1e-8), runtime {elapsed:.3f} s (< 1 s)")


# 2 --------------------------------------------------------------------------

def test_2_hoptime_rate_disk(criterion):
    chart = disk_chart()
    pairs = []
    for theta in 0.2 * 0.5 ** np.arange(6):
        s = math.sin(theta)
        ray = trace(chart, PhaseState(0.0, np.zeros(2), np.array([s, math.cos(theta)])), 10 * s + 1e-9)
        pairs.append((ray.energy()[0], float(np.mean(bounce_intervals(ray).deviation))))
    p, res = fit_order(pairs)
    exact = max(abs(d - 2 * e) / (2 * e) for e, d in pairs)
    ok = abs(p - 1.0) <= 0.05
    assert criterion("2 hoptime rate (disk)", ok, f"order {p:.4f} in E(0) (1 +- 0.05), fit residual {res:.1e}, "
                     f"max |dev/2E(0) - 1| = {exact:.1e}")


def test_2_hoptime_rate_band(band, criterion):
    chart, sigma = band
    pairs = []
    for eps in EPS_12:
        ray = trace(chart, launch_state(sigma, eps), sigma.L)
        pairs.append((ray.energy()[0], float(np.max(np.abs(bounce_intervals(ray).deviation)))))
    p, res = fit_order(pairs)
    devs = [d for _, d in pairs]
    decreasing = all(b < a for a, b in zip(devs, devs[1:]))
    ok = p >= 0.5 and decreasing and devs[-1] < devs[0]
    assert criterion("2 hoptime rate (band)", ok, f"max deviation {devs[0]:.2e} -> {devs[-1]:.2e}, order "
                     f"{p:.4f} in E(0) (>= 0.5), strictly decreasing {decreasing}")


# 3 --------------------------------------------------------------------------

@pytest.mark.parametrize("name", ["disk", "band"])
def test_3_heur_loc_bounded(name, disk, band, criterion):
    chart, sigma = disk if name == "disk" else band
    sups = []
    for eps in EPS_10:
        ray = trace(chart, launch_state(sigma, eps), sigma.L).truncate_at_last_zero()
        sups.append(float(np.max(depth_integral_check(ray).local_ratio)))
    growth = max(sups) / sups[0]
    ok = np.all(np.isfinite(sups)) and growth < 3.0
    assert criterion(f"3 heur-loc per-bounce ratio ({name})", ok,
                     f"sup |int x0 - v^2 tau/(3 II)| / tau^4 from {sups[0]:.3e} to {sups[-1]:.3e}, "
                     f"max/first = {growth:.3f} (< 3)")


# 4 --------------------------------------------------------------------------

def test_4_rho_identity(band, criterion):
    chart, sigma = band
    fam = launch_glancing(chart, sigma, EPS_10)
    diag = convergence_diagnostics(fam, sigma)
    col = diag.columns["sup_rho_error"]
    final = float(col[np.argmin(diag.eps)])
    ok = final <= 1e-2 and diag.monotone("sup_rho_error")
    assert criterion("4 rho identity (band)", ok, f"sup |E/E(0) - rho| = {final:.2e} at eps 2^-10 (tol 1e-2), "
                     f"monotone in eps {diag.monotone('sup_rho_error')}, order {diag.orders['sup_rho_error'][0]:.2f}")


# 5 --------------------------------------------------------------------------

@pytest.mark.parametrize("name", ["disk", "band"])
@pytest.mark.parametrize("weight", ["trivial", "exp(-t)"])
def test_5_theorem_k0(name, weight, disk, band, criterion):
    chart, sigma = disk if name == "disk" else band
    spec = WeightSpec.trivial() if weight == "trivial" else WeightSpec.attenuation(1.0)
    f = ScalarField.from_expression("1 + x0 + 1/2*cos(x1)")
    t0 = time.perf_counter()
    fam = launch_glancing(chart, sigma, EPS_10)
    rep = recover_k0(chart, spec, f, sigma, fam)
    elapsed = time.perf_counter() - t0
    ok = rep.rel_error <= 1e-3 and elapsed < 30.0
    assert criterion(f"5 k=0 recovery ({name}, {weight})", ok,
                     f"rel error {rep.rel_error:.2e} (tol 1e-3), runtime {elapsed:.1f} s (< 30 s)")


# 6 --------------------------------------------------------------------------

def test_6_k1_disk(disk, disk_family_12, criterion):
    chart, sigma = disk
    rep = recover_k(chart, WeightSpec.trivial(), ScalarField.from_expression("x0"), sigma, disk_family_12, 1)
    assert criterion("6 k=1 recovery (disk)", rep.rel_error <= 1e-2,
                     f"limit {rep.limit.value:.8f} vs {rep.ground_truth:.8f}, rel error {rep.rel_error:.2e} (tol 1e-2)")


def test_6_k1_band(band, band_family_12, criterion):
    chart, sigma = band
    f = ScalarField.from_expression("x0*(1 + 1/2*sin(x1))")
    rep = recover_k(chart, WeightSpec.attenuation(0.5), f, sigma, band_family_12, 1)
    assert criterion("6 k=1 recovery (band, exp(-t/2) weight)", rep.rel_error <= 1e-2,
                     f"rel error {rep.rel_error:.2e} (tol 1e-2)")


def test_6_k2_disk(disk, disk_family_12, criterion):
    chart, sigma = disk
    f = ScalarField.from_expression("x0^2*(1 + 1/2*cos(x1))")
    rep = recover_k(chart, WeightSpec.trivial(), f, sigma, disk_family_12, 2)
    assert criterion("6 k=2 recovery (disk)", rep.rel_error <= 3e-2, f"rel error {rep.rel_error:.2e} (tol 3e-2)")


def test_6_k2_band(band, band_family_12, criterion):
    chart, sigma = band
    f = ScalarField.from_expression("x0^2*(1 + 1/2*sin(x1))")
    rep = recover_k(chart, WeightSpec.trivial(), f, sigma, band_family_12, 2)
    assert criterion("6 k=2 recovery (band)", rep.rel_error <= 3e-2, f"rel error {rep.rel_error:.2e} (tol 3e-2)")


def test_6_wrong_weight_control(band, band_family_12, criterion):
    chart, sigma = band
    spec = WeightSpec.trivial()
    f = ScalarField.from_expression("x0")
    rep = recover_k(chart, spec, f, sigma, band_family_12, 1)
    wrong = boundary_ray_transform(chart, spec, sigma, f.normal_derivative(1), 0)
    err_wrong = abs(rep.limit.value - wrong) / abs(wrong)
    ok = rep.rel_error <= 1e-2 and err_wrong > 5 * 1e-2
    assert criterion("6 wrong-weight control (band, II^0 instead of II^-1/3)", ok,
                     f"error vs II^-1/3 truth {rep.rel_error:.2e}, vs II^0 truth {err_wrong:.2e} (> 5e-2)")


# 7 --------------------------------------------------------------------------

def test_7_sphere_band_conformal(criterion):
    chart = sphere_band_chart()
    sigma = geodesic(chart, [math.pi / 2, 0.0], [0.0, 1.0], math.pi)
    fam = launch_glancing(chart, sigma, EPS_10)
    spec = WeightSpec.from_expressions("2", "0")
    rep = recover_k(chart, spec, ScalarField.from_expression("x0*(1 + 1/2*sin(x2))", 3), sigma, fam, 1)
    ok = rep.rel_error <= 2e-2
    assert criterion("7 sphere-band k=1 (conformal)", ok, f"limit {rep.limit.value:.8f} vs constant-weight truth "
                     f"{rep.ground_truth:.8f} = 2(pi + 1), rel error {rep.rel_error:.2e} (tol 2e-2)")


# 8 --------------------------------------------------------------------------

def test_8_transform_identities(criterion):
    lam = default_complex_grid(16)
    rep = check_identities(two_squares(), 1.7, 1 + 1j, rect_indicator(0.0, 0.5, 0.0, 0.5), lam, tol=1e-6)
    assert criterion("8 transform identities (scaling, translation, convolution)", rep.passed,
                     f"defects {rep.scaling_error:.1e}, {rep.translation_error:.1e}, {rep.convolution_error:.1e} "
                     f"(tol 1e-6) on 16 lambdas")


def test_8_kernel_witness(criterion):
    lam = default_complex_grid(16)
    prof = lambda r: np.where(r < 1, 1.0, 0.0) - 4.0 * np.where(r < 0.5, 1.0, 0.0)
    rep = rotsym_kernel_witness(prof, [0.5, 1.0], 0.3 - 0.2j, lam, tol=1e-6)
    direct = float(np.max(np.abs(transform_I(annulus_witness(0.3 - 0.2j), lam))))
    ok = rep.passed and direct <= 1e-6
    assert criterion("8 rotationally symmetric zero-mean witness", ok,
                     f"max |If| = {rep.max_abs:.1e} (shifted), {direct:.1e} (direct), tol 1e-6")


def test_8_two_squares_and_disk(criterion):
    ts = abs(complex(transform_I(two_squares(), 1.0)))
    mean = abs(complex(transform_I(two_squares(), 0.0)))
    disk_err = float(np.max(np.abs(transform_I(disk_indicator(), default_complex_grid(16)) - math.pi)))
    ok = ts > 1e-3 and mean <= 1e-12 and disk_err <= 1e-6
    assert criterion("8 two-squares control and disk constancy", ok,
                     f"|If(1)| = {ts:.4f} (> 1e-3) with mean {mean:.1e}; max |I 1_disk - pi| = {disk_err:.1e} "
                     f"(tol 1e-6)")


# 9 --------------------------------------------------------------------------

def test_9_laplace_recovery(criterion):
    L = math.pi
    lam = default_lambda_grid(L, 32)
    worst = 0.0
    rng = np.random.default_rng(7)
    for values in (np.r_[np.ones(4), np.zeros(4)], rng.uniform(-1, 1, 8)):
        ms = MomentSystem(L, lam, piecewise_moments(L, lam, values), 8)
        rec = laplace_recover(ms)
        worst = max(worst, float(np.max(np.abs(rec.values - values))))
    assert criterion("9 piecewise-constant Laplace recovery", worst < 1e-3,
                     f"8 bins from 32 moments, max bin error {worst:.1e} (< 1e-3)")


# 10 -------------------------------------------------------------------------

def test_10_selftest_byte_identical(tmp_path, criterion):
    out = tmp_path / "selftest.csv"
    codes, blobs = [], []
    for _ in range(2):
        codes.append(cli_main(["selftest", "--out", str(out)]))
        blobs.append(out.read_bytes())
    ok = codes == [0, 0] and blobs[0] == blobs[1]
    assert criterion("10 selftest determinism", ok, f"exit codes {codes}, byte-identical {blobs[0] == blobs[1]}")


def test_10_step_halving(disk, band, criterion):
    fine = TraceSettings(steps_per_bounce=128, max_step=5e-3)
    eps = 2.0 ** -np.arange(4, 10)
    lines = []
    ok = True
    for name, (chart, sigma) in (("disk", disk), ("band", band)):
        coarse_fam = launch_glancing(chart, sigma, eps)
        fine_fam = launch_glancing(chart, sigma, eps, fine)
        for k, expr_text in ((0, "1 + 1/2*cos(x1)"), (1, "x0*(1 + 1/2*sin(x1))")):
            f = ScalarField.from_expression(expr_text)
            a = recover_k(chart, WeightSpec.trivial(), f, sigma, coarse_fam, k)
            b = recover_k(chart, WeightSpec.trivial(), f, sigma, fine_fam, k)
            change = abs(a.limit.value - b.limit.value) / abs(a.ground_truth)
            tol = a.tolerance
            ok &= change < tol
            lines.append(f"{name} k={k} {change:.1e} (tol {tol:.0e})")
        ray_a = coarse_fam.members[-1].ray.truncate_at_last_zero()
        ray_b = fine_fam.members[-1].ray.truncate_at_last_zero()
        f = ScalarField.from_expression("1 + x0")
        d = abs(broken_ray_transform(chart, WeightSpec.trivial(), f, ray_a)
                - broken_ray_transform(chart, WeightSpec.trivial(), f, ray_b)) / ray_a.duration
        ok &= d < 1e-3
        lines.append(f"{name} brt {d:.1e} (tol 1e-3)")
    for field in (two_squares(), disk_indicator()):
        lam = default_complex_grid(16)
        d = float(np.max(np.abs(transform_I(field, lam) - transform_I(field, lam, order=32, max_width=0.125,
                                                                      angular=128))))
        ok &= d < 1e-6
        lines.append(f"I[{field.name}] {d:.1e} (tol 1e-6)")
    assert criterion("10 step halving", ok, "; ".join(lines))
