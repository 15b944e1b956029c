import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from brokenray.billiards import (Escape, PhaseState, SpeedDrift, TraceSettings, bounce_intervals,
                                 depth_integral_check, deviation_from_sigma, energy, geometric_epsilons,
                                 launch_glancing, launch_state, trace)
from brokenray.geometry import (AdmissibilityError, band_chart, disk_chart, flat_chart,
                                integrate_boundary_geodesic, second_fundamental_form, unit_tangent)
from brokenray.numerics import fit_order

DISK = disk_chart()
BAND = band_chart()


def chord_start(theta):
    return PhaseState(0.0, np.zeros(2), np.array([math.sin(theta), math.cos(theta)]))


def sigma_on(chart, start=0.0, L=math.pi):
    xb = np.array([start])
    return integrate_boundary_geodesic(chart, xb, unit_tangent(chart, xb, np.array([1.0])), L)


@given(st.floats(0.02, 0.4))
@settings(max_examples=15)
def test_disk_chord_oracle(theta):
    s = math.sin(theta)
    ray = trace(DISK, chord_start(theta), 20 * s + 1e-7)
    j = np.arange(1, 11)
    assert len(ray.event_index) == 10
    assert np.max(np.abs(ray.event_times - 2 * s * j)) <= 1e-8
    assert np.max(np.abs(ray.x[ray.event_index, 1] - 2 * theta * j)) <= 1e-8


def test_energy_examples():
    assert energy(BAND, PhaseState(0.0, np.array([0.0, 1.0]), np.array([0.0, 1.0]))) == 0.0
    theta = 0.1
    assert energy(DISK, chord_start(theta)) == pytest.approx(0.5 * math.sin(theta) ** 2, rel=1e-15)


def test_disk_energy_along_chord_matches_closed_form():
    # E is conserved only to leading order: at the apex E = (1 - cos t) / cos t, not sin^2 t / 2
    theta = 0.1
    s = math.sin(theta)
    ray = trace(DISK, chord_start(theta), 2 * s - 1e-6)
    r = np.sqrt(1 - 2 * ray.t * s + ray.t ** 2)
    v0 = (s - ray.t) / r
    exact = 0.5 * v0 ** 2 + (1 - r) * (1 - v0 ** 2) / r
    assert np.max(np.abs(ray.energy() - exact)) <= 1e-10
    apex = (1 - math.cos(theta)) / math.cos(theta)
    assert apex - 0.5 * s * s == pytest.approx(0.375 * theta ** 4, rel=0.05)


def test_flat_band_stays_on_boundary():
    ray = trace(flat_chart(), PhaseState(0.0, np.array([0.0, 0.3]), np.array([0.0, 1.0])), 5.0)
    assert len(ray.event_index) == 0
    assert np.all(ray.x[:, 0] == 0.0)
    assert ray.t[-1] == pytest.approx(5.0)


def test_flat_band_escapes():
    start = PhaseState(0.0, np.array([0.0, 0.0]), np.array([0.6, 0.8]))
    with pytest.raises(Escape) as info:
        trace(flat_chart(), start, 5.0)
    assert info.value.ray is not None and info.value.ray.x[-1, 0] > 0


@given(st.floats(0.005, 0.1), st.floats(-math.pi, math.pi))
@settings(max_examples=15)
def test_band_energy_continuity_and_reflection_law(eps, start):
    ray = trace(BAND, launch_state(sigma_on(BAND, start, 0.1), eps), 2.0)
    e = ray.energy()
    ev = ray.event_index
    assert len(ev) > 0
    assert np.max(np.abs(e[ev + 1] - e[ev])) <= 1e-10
    for event in ray.events:
        assert event.v_out[0] == -event.v_in[0]
        assert np.array_equal(event.v_out[1:], event.v_in[1:])
    assert np.all(ray.x[ev, 0] == 0.0)
    speed = BAND.norm(ray.x[:, 0], ray.x[:, 1:], ray.v)
    assert np.max(np.abs(speed - 1)) <= 1e-7


def test_energy_derivative_identity():
    # dE/dt = x0 d/dt II(v) along segments; checked against second-order differences of the samples
    ray = trace(BAND, launch_state(sigma_on(BAND), 0.05), 1.0, TraceSettings(steps_per_bounce=256))
    a, b = ray.segment_bounds()
    seg = slice(a[2], b[2] + 1)
    t = ray.t[seg]
    dE = np.gradient(ray.energy()[seg], t, edge_order=2)
    rhs = ray.x[seg, 0] * np.gradient(ray.sff()[seg], t, edge_order=2)
    assert np.max(np.abs(dE - rhs)[3:-3]) <= 1e-3 * np.max(np.abs(rhs))


def test_speed_drift_is_an_error():
    with pytest.raises(SpeedDrift):
        trace(BAND, launch_state(sigma_on(BAND), 0.3), 3.0, TraceSettings(steps_per_bounce=4, max_step=0.5,
                                                                          speed_tol=1e-12))


def test_rejects_non_unit_start():
    with pytest.raises(ValueError):
        trace(DISK, PhaseState(0.0, np.zeros(2), np.array([0.1, 1.0])), 1.0)


def test_trace_is_deterministic():
    start = launch_state(sigma_on(BAND), 0.03)
    a, b = trace(BAND, start, 2.0), trace(BAND, start, 2.0)
    assert np.array_equal(a.t, b.t) and np.array_equal(a.x, b.x) and np.array_equal(a.v, b.v)


def test_python_fallback_agrees_with_kernel():
    chart = replace(DISK, program=None)
    theta = 0.2
    a = trace(chart, chord_start(theta), 6 * math.sin(theta) + 1e-6)
    b = trace(DISK, chord_start(theta), 6 * math.sin(theta) + 1e-6)
    assert len(a.event_index) == len(b.event_index) == 3
    assert np.max(np.abs(a.event_times - b.event_times)) <= 1e-9


@given(st.floats(0.02, 0.3))
@settings(max_examples=10)
def test_disk_bounce_intervals(theta):
    s, c = math.sin(theta), math.cos(theta)
    bt = bounce_intervals(trace(DISK, chord_start(theta), 8 * s + 1e-9))
    assert np.allclose(bt.tau, 2 * s, atol=1e-9)
    assert np.allclose(bt.tau_pred, 2 * s / c ** 2, rtol=1e-9)
    assert np.allclose(bt.deviation, s * s, atol=1e-9)


def test_bounce_intervals_need_events():
    with pytest.raises(ValueError):
        bounce_intervals(trace(flat_chart(), PhaseState(0.0, np.array([0.0, 0.0]), np.array([0.0, 1.0])), 1.0))


def test_band_deviation_self_convergence():
    sigma = sigma_on(BAND)
    pairs = [(e * e / 2, float(np.max(np.abs(bounce_intervals(trace(BAND, launch_state(sigma, e), 2.0)).deviation))))
             for e in 0.05 * 0.5 ** np.arange(5)]
    p, _ = fit_order(pairs)
    assert p >= 0.45
    assert all(b < a for (_, a), (_, b) in zip(pairs, pairs[1:]))


def test_bounce_gaps_do_not_accumulate():
    ray = trace(BAND, launch_state(sigma_on(BAND), 0.02), 6.0)
    bt = bounce_intervals(ray)
    assert np.min(bt.tau) >= 0.5 * math.sqrt(np.min(ray.energy()))


def test_disk_single_bounce_depth_integral():
    theta = 0.05
    s, c = math.sin(theta), math.cos(theta)
    ray = trace(DISK, chord_start(theta), 2 * s + 1e-9).truncate_at_last_zero()
    chk = depth_integral_check(ray)
    assert chk.depth_integral == pytest.approx(s - c * c * math.atanh(s), abs=1e-12)
    assert abs(chk.depth_integral - 2 / 3 * s ** 3) <= theta ** 4


def test_depth_check_k0_is_exact():
    ray = trace(BAND, launch_state(sigma_on(BAND), 0.05), 1.5).truncate_at_last_zero()
    chk = depth_integral_check(ray, F=np.cos, k=0)
    assert chk.depth_integral == chk.heuristic_integral


def test_depth_check_needs_a_zero():
    ray = trace(BAND, launch_state(sigma_on(BAND), 0.05), 0.123)
    if not ray.ends_at_zero():
        with pytest.raises(ValueError):
            depth_integral_check(ray)


def test_band_depth_pair_order():
    sigma = sigma_on(BAND)
    pairs = []
    for e in 0.1 * 0.5 ** np.arange(5):
        ray = trace(BAND, launch_state(sigma, e), 2.0).truncate_at_last_zero()
        chk = depth_integral_check(ray)
        pairs.append((e * e / 2, abs(chk.depth_integral - chk.heuristic_integral)))
    p, _ = fit_order(pairs)
    assert p > 1.0


def test_launch_invariants_and_landing():
    sigma = sigma_on(BAND)
    fam = launch_glancing(BAND, sigma, geometric_epsilons(0.1, 5))
    assert np.all(np.diff(fam.epsilons) < 0)
    for m in fam.members:
        assert m.ok and m.landed
        x0, v0 = m.ray.x[0], m.ray.v[0]
        assert np.array_equal(x0[1:], sigma.x[0]) and x0[0] == 0.0
        assert v0[0] == m.eps
        assert np.allclose(v0[1:], math.sqrt(1 - m.eps ** 2) * sigma.v[0], rtol=1e-15)
        assert abs(m.eps / m.nominal_eps - 1) < 0.2
        z = m.ray.zero_times
        assert sigma.L - 1e-8 * sigma.L <= z[-1] <= sigma.L


def test_family_uniform_convergence():
    sigma = sigma_on(BAND)
    fam = launch_glancing(BAND, sigma, geometric_epsilons(0.1, 5))
    sups = [float(np.max(deviation_from_sigma(m.ray, sigma))) for m in fam.members]
    assert all(b < a for a, b in zip(sups, sups[1:]))


def test_disk_depth_bound():
    sigma = sigma_on(DISK)
    ray = launch_glancing(DISK, sigma, [1e-3]).members[0].ray
    sff = second_fundamental_form(DISK, ray.x, ray.v)
    assert np.max(ray.x[:, 0]) <= np.max(ray.energy()) / np.min(sff) * (1 + 1e-9)


def test_failed_members_are_kept():
    sigma = sigma_on(BAND)
    fam = launch_glancing(BAND, sigma, [0.9, 0.05])
    assert [m.ok for m in fam.members] == [False, True]
    assert len(fam.ok_members()) == 1


def test_flat_family_rejected():
    with pytest.raises(AdmissibilityError):
        launch_glancing(flat_chart(), sigma_on(flat_chart()), [0.01])
