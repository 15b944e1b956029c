import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from brokenray.geometry import (AdmissibilityError, ChartDomainError, KAPPA_PRESETS, TomographySet, a_cubic,
                                band_chart, christoffel, disk_chart, flat_chart, geodesic_residual,
                                integrate_boundary_geodesic, is_admissible, parse_chart, rho_weight,
                                second_fundamental_form, sphere_band_chart, unit_tangent)

CHARTS = {"disk": disk_chart(), "flat": flat_chart(), "band": band_chart(), "sphere-band": sphere_band_chart(),
          "ellipse": band_chart("ellipse-like")}

points2 = st.tuples(st.floats(0.0, 0.3), st.floats(-math.pi, math.pi))


def sigma_on(chart, start=0.0, L=math.pi):
    xb = np.atleast_1d(start)
    return integrate_boundary_geodesic(chart, xb, unit_tangent(chart, xb, np.ones(chart.n) if chart.n == 1
                                                               else np.array([0.0, 1.0])), L)


def test_flat_christoffel_vanishes():
    assert np.all(christoffel(flat_chart(), [0.2, 1.0]) == 0.0)


def test_disk_christoffel_at_boundary():
    gam = christoffel(disk_chart(), [0.0, 0.3])
    assert gam[0, 1, 1] == pytest.approx(1.0, abs=1e-15)
    assert gam[1, 1, 0] == pytest.approx(-1.0, abs=1e-15)
    assert gam[1, 0, 1] == gam[1, 1, 0]


@pytest.mark.parametrize("name", sorted(CHARTS))
def test_normal_block_structure(name):
    chart = CHARTS[name]
    x = np.r_[0.1, np.full(chart.n, 0.7)]
    gam = christoffel(chart, x)
    assert np.all(gam[1:, 0, 0] == 0.0)
    assert np.all(gam[0, 0, :] == 0.0) and np.all(gam[0, :, 0] == 0.0)
    assert np.allclose(gam, np.swapaxes(gam, -1, -2), atol=0, rtol=0)


@pytest.mark.parametrize("name", sorted(CHARTS))
def test_christoffel_matches_finite_differences(name):
    chart = CHARTS[name]
    m = chart.dim
    x = np.r_[0.12, np.linspace(0.6, 0.9, chart.n)]
    h = 1e-5

    def full_g(p):
        G = np.eye(m)
        G[1:, 1:] = chart.g(p[0], p[1:])
        return G

    dG = np.empty((m, m, m))
    for c in range(m):
        e = np.zeros(m)
        e[c] = h
        dG[c] = (full_g(x + e) - full_g(x - e)) / (2 * h)
    low = 0.5 * (np.einsum("cab->abc", dG) + np.einsum("bac->abc", dG) - np.einsum("abc->abc", dG))
    fd = np.einsum("da,abc->dbc", np.linalg.inv(full_g(x)), low)
    assert np.allclose(christoffel(chart, x), fd, atol=1e-7)


@pytest.mark.parametrize("name", sorted(CHARTS))
def test_derivative_callbacks_consistent(name):
    chart = CHARTS[name]
    x0, xb, h = 0.1, np.linspace(0.6, 0.9, chart.n), 1e-5
    d0 = (chart.g(x0 + h, xb) - chart.g(x0 - h, xb)) / (2 * h)
    d00 = (chart.g(x0 + h, xb) - 2 * chart.g(x0, xb) + chart.g(x0 - h, xb)) / h ** 2
    assert np.allclose(chart.dg_d0(x0, xb), d0, rtol=1e-6, atol=1e-9)
    assert np.allclose(chart.dg_d00(x0, xb), d00, rtol=1e-4, atol=1e-5)
    for k in range(chart.n):
        e = np.zeros(chart.n)
        e[k] = h
        dk = (chart.g(x0, xb + e) - chart.g(x0, xb - e)) / (2 * h)
        d0k = (chart.dg_d0(x0, xb + e) - chart.dg_d0(x0, xb - e)) / (2 * h)
        assert np.allclose(chart.dg_dk(x0, xb)[k], dk, rtol=1e-6, atol=1e-9)
        assert np.allclose(chart.dg_d0k(x0, xb)[k], d0k, rtol=1e-6, atol=1e-9)


def test_chart_domain_errors():
    chart = band_chart()
    with pytest.raises(ChartDomainError):
        christoffel(chart, [chart.h, 0.0])
    with pytest.raises(ChartDomainError):
        second_fundamental_form(chart, [-1e-3, 0.0], [1.0])


def test_band_depth_keeps_metric_positive():
    chart = band_chart()
    assert chart.h < 1 / (2 * 1.5)
    assert np.all(chart.g(chart.h * 0.999, np.linspace(0, 2 * np.pi, 50)) > 0.25)


@given(st.floats(-math.pi, math.pi))
def test_sff_values(x1):
    assert second_fundamental_form(flat_chart(), [0.0, x1], [1.0]) == 0.0
    assert second_fundamental_form(disk_chart(), [0.0, x1], [1.0]) == pytest.approx(1.0, abs=1e-15)
    kappa = 1 + 0.5 * math.cos(x1)
    assert second_fundamental_form(band_chart(), [0.0, x1], [1.0]) == pytest.approx(kappa, rel=1e-14)


@given(points2, st.floats(-2, 2), st.floats(-2, 2), st.floats(-3, 3))
def test_sff_bilinear_symmetric(p, a, b, c):
    chart = band_chart()
    x = list(p)
    ab = second_fundamental_form(chart, x, [a], [b])
    assert ab == pytest.approx(second_fundamental_form(chart, x, [b], [a]), rel=1e-14, abs=1e-300)
    assert second_fundamental_form(chart, x, [c * a], [b]) == pytest.approx(c * ab, rel=1e-12, abs=1e-12)


def test_sff_ignores_normal_components():
    chart = sphere_band_chart()
    x = [0.0, 1.0, 0.5]
    assert second_fundamental_form(chart, x, [5.0, 0.3, 0.2]) == second_fundamental_form(chart, x, [0.0, 0.3, 0.2])


def test_a_cubic_flat_and_disk():
    assert a_cubic(flat_chart(), [0.0, 1.0], [1.0]) == 0.0
    assert a_cubic(disk_chart(), [0.0, 2.0], [1.0]) == pytest.approx(0.0, abs=1e-15)


def test_a_cubic_is_derivative_of_sff_along_sigma():
    chart = band_chart()
    sigma = sigma_on(chart, 0.3, 2.0)
    d = np.gradient(sigma.sff(), sigma.t, edge_order=2)
    A = a_cubic(chart, sigma.points, sigma.v)
    assert np.max(np.abs(d[5:-5] - A[5:-5])) < 1e-6


def test_boundary_geodesic_examples():
    disk = disk_chart()
    sigma = sigma_on(disk, 0.0, math.pi)
    assert sigma.x[-1, 0] == pytest.approx(math.pi, abs=1e-12)
    flat = sigma_on(flat_chart(), 0.5, 2.0)
    assert np.allclose(flat.x[:, 0], 0.5 + flat.t, atol=1e-14)
    sph = sphere_band_chart()
    xb = np.array([1.0, 0.2])
    v = unit_tangent(sph, xb, np.array([0.4, 1.0]))
    loop = integrate_boundary_geodesic(sph, xb, v, 2 * math.pi)
    assert np.max(np.abs(sph.wrap_difference(loop.x[-1], xb))) <= 1e-6
    assert np.allclose(loop.v[-1], v, atol=1e-6)


@pytest.mark.parametrize("name", ["disk", "band", "ellipse", "sphere-band"])
def test_boundary_geodesic_invariants(name):
    chart = CHARTS[name]
    sigma = sigma_on(chart, 0.0 if chart.n == 1 else np.array([1.2, 0.0]), 3.0)
    speeds = np.sqrt(np.einsum("si,sij,sj->s", sigma.v, chart.g(np.zeros(len(sigma.t)), sigma.x), sigma.v))
    assert np.max(np.abs(speeds - 1)) <= 1e-8
    assert np.max(geodesic_residual(sigma)) <= 1e-8


def test_geodesic_rejects_non_unit_speed():
    with pytest.raises(ValueError):
        integrate_boundary_geodesic(disk_chart(), [0.0], [1.1], 1.0)


def test_admissibility():
    E = TomographySet.full()
    rep = is_admissible(disk_chart(), sigma_on(disk_chart()), E)
    assert rep.admissible and rep.min_sff == pytest.approx(1.0)
    assert not is_admissible(flat_chart(), sigma_on(flat_chart()), E)
    band = band_chart()
    rep = is_admissible(band, sigma_on(band, 0.0, 2 * math.pi), E)
    assert rep.admissible and rep.min_sff == pytest.approx(0.5, abs=1e-7)


def test_admissibility_endpoints():
    chart = disk_chart()
    E = TomographySet.from_expression("sin(x1)")  # upper half circle, closed
    assert is_admissible(chart, sigma_on(chart, 0.0, math.pi), E)
    assert not is_admissible(chart, sigma_on(chart, 0.0, 1.5 * math.pi), E)
    assert not is_admissible(chart, sigma_on(chart, -0.5, 1.0), E)


def test_admissibility_direction_flip():
    chart = band_chart()
    E = TomographySet.full()
    sigma = sigma_on(chart, 0.2, 2.5)
    assert bool(is_admissible(chart, sigma, E)) == bool(is_admissible(chart, sigma.reversed(), E))


@pytest.mark.parametrize("k", [1, 2, 3])
def test_rho_weight(k):
    disk = disk_chart()
    assert rho_weight(disk, sigma_on(disk), 1.3, k) == pytest.approx(1.0, abs=1e-12)
    band = band_chart()
    sigma = sigma_on(band, 0.0, 3.0)
    assert rho_weight(band, sigma, 0.0, k) == 1.0
    for t in (0.37, 1.5, 3.0):
        x1 = float(sigma.position(t)[0])
        kap = lambda s: 1 + 0.5 * math.cos(s)
        assert rho_weight(band, sigma, t, k) == pytest.approx((kap(x1) / kap(0.0)) ** (2 * k / 3), rel=1e-8)


def test_rho_weight_needs_convexity():
    with pytest.raises(AdmissibilityError):
        rho_weight(flat_chart(), sigma_on(flat_chart()), 0.5)


def test_parse_chart_catalog():
    assert parse_chart("disk").name == "disk"
    assert parse_chart("band:kappa=ellipse-like").name == band_chart(KAPPA_PRESETS["ellipse-like"]).name
    chart = parse_chart("band:kappa=2 + sin(x1);h=0.1")
    assert chart.h == pytest.approx(0.1)
    assert second_fundamental_form(chart, [0.0, 0.5], [1.0]) == pytest.approx(2 + math.sin(0.5))
    custom = parse_chart("metric:g11=(1 - x0)^2")
    assert np.allclose(custom.g(0.2, [0.4]), disk_chart().g(0.2, [0.4]))


def test_band_rejects_nonpositive_curvature():
    with pytest.raises(ValueError):
        band_chart("cos(x1)")
