"""Broken rays near the boundary: geodesic flow with reflections at x0 = 0."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import _kernels
from .geometry import (AdmissibilityError, BoundaryGeodesic, MetricChart, TomographySet, _christoffel,
                       require_admissible, second_fundamental_form)


class TraceError(RuntimeError):
    """Base class; ``ray`` holds the trajectory up to the failure."""

    def __init__(self, message, ray=None):
        super().__init__(message)
        self.ray = ray


class Escape(TraceError):
    pass


class SpeedDrift(TraceError):
    pass


class StepUnderflow(TraceError):
    pass


@dataclass(frozen=True)
class TraceSettings:
    steps_per_bounce: int = 64
    max_step: float = 1e-2
    min_step: float = 1e-14
    event_tol: float = 1e-13
    speed_tol: float = 1e-6
    escape_margin: float = 1e-6
    max_events: int = 10_000_000


@dataclass(frozen=True)
class PhaseState:
    t: float
    x: np.ndarray
    v: np.ndarray


@dataclass(frozen=True)
class ReflectionEvent:
    t: float
    xbar: np.ndarray
    v_in: np.ndarray
    v_out: np.ndarray


@dataclass(eq=False)
class BrokenRay:
    """Sampled broken ray.

    ``event_index[e]`` is the sample holding the incoming state of reflection
    ``e``; the reflected state is the next sample, at the same time.
    """

    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    event_index: np.ndarray
    chart: MetricChart = field(repr=False)
    nsteps: int = 0

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0])

    @property
    def event_times(self) -> np.ndarray:
        return self.t[self.event_index]

    @property
    def events(self) -> list:
        return [ReflectionEvent(float(self.t[i]), self.x[i, 1:].copy(), self.v[i].copy(), self.v[i + 1].copy())
                for i in self.event_index]

    @property
    def starts_at_boundary(self) -> bool:
        return self.x[0, 0] == 0.0

    @property
    def zero_times(self) -> np.ndarray:
        """Zeros of the normal coordinate: the launch (when on the boundary) and every reflection."""
        z = self.event_times
        return np.concatenate([[self.t[0]], z]) if self.starts_at_boundary else z

    def segment_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Inclusive (start, stop) sample indices of the smooth pieces between reflections."""
        starts = np.concatenate([[0], self.event_index + 1]).astype(np.int64)
        stops = np.concatenate([self.event_index, [len(self.t) - 1]]).astype(np.int64)
        keep = stops > starts
        return starts[keep], stops[keep]

    @property
    def segments(self) -> list:
        return [(self.t[a:b + 1], self.x[a:b + 1], self.v[a:b + 1]) for a, b in zip(*self.segment_bounds())]

    def states(self, i) -> PhaseState:
        return PhaseState(float(self.t[i]), self.x[i].copy(), self.v[i].copy())

    def truncate(self, T: float) -> "BrokenRay":
        """Samples with t <= T (no interpolation)."""
        n = int(np.searchsorted(self.t, T + 1e-15 * max(1.0, abs(T)), side="right"))
        ev = self.event_index[self.event_index + 1 < n]
        return BrokenRay(self.t[:n].copy(), self.x[:n].copy(), self.v[:n].copy(), ev.copy(), self.chart, self.nsteps)

    def truncate_at_last_zero(self, T: Optional[float] = None) -> "BrokenRay":
        """Cut at the last reflection at or before T (keeps the incoming sample)."""
        T = self.t[-1] if T is None else T
        ev = self.event_index[self.event_times <= T + 1e-15 * max(1.0, abs(T))]
        if len(ev) == 0:
            return BrokenRay(self.t[:1].copy(), self.x[:1].copy(), self.v[:1].copy(), ev.copy(), self.chart)
        last = ev[-1]
        return BrokenRay(self.t[: last + 1].copy(), self.x[: last + 1].copy(), self.v[: last + 1].copy(),
                         ev[:-1].copy(), self.chart, self.nsteps)

    def ends_at_zero(self) -> bool:
        return self.x[-1, 0] == 0.0 and len(self.t) > 1

    def energy(self) -> np.ndarray:
        return energy_of(self.chart, self.x, self.v)

    def sff(self) -> np.ndarray:
        return second_fundamental_form(self.chart, self.x, self.v)


def energy_of(chart: MetricChart, x, v) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    return 0.5 * v[..., 0] ** 2 + x[..., 0] * second_fundamental_form(chart, x, v)


def energy(chart: MetricChart, s: PhaseState) -> float:
    """E = 1/2 (v0)^2 + x0 II(vbar, vbar)."""
    return float(energy_of(chart, s.x, s.v))


_STATUS_ERRORS = {
    _kernels.ESCAPE: (Escape, "ray left the boundary neighbourhood"),
    _kernels.SPEED_DRIFT: (SpeedDrift, "unit speed drifted beyond tolerance"),
    _kernels.STEP_UNDERFLOW: (StepUnderflow, "event location or step size collapsed"),
    _kernels.MAX_EVENTS: (StepUnderflow, "too many reflections"),
}


def trace(chart: MetricChart, start: PhaseState, duration: float,
          ctrl: TraceSettings = TraceSettings()) -> BrokenRay:
    """Integrate the broken ray from ``start`` for ``duration``."""
    x = np.asarray(start.x, dtype=float)
    v = np.asarray(start.v, dtype=float)
    chart.check_point(x[0])
    speed = float(chart.norm(x[0], x[1:], v))
    if abs(speed - 1.0) > 1e-9:
        raise ValueError(f"start velocity must have unit speed, got {speed!r}")
    escape_depth = chart.h * (1.0 - ctrl.escape_margin)
    if chart.program is None:
        t, y, ev, status, nsteps = _trace_python(chart, x, v, float(start.t), float(duration), ctrl, escape_depth)
    else:
        p = chart.program
        est = int(duration / max(_initial_step(chart, x, v, ctrl), 1e-7) * 1.3) + 64
        t, y, ev, status, nsteps = _kernels.trace_kernel(
            p.ops, p.args, p.offs, p.n, p.stack_size, np.concatenate([x, v]), float(start.t), float(duration),
            float(ctrl.steps_per_bounce), ctrl.max_step, ctrl.min_step, escape_depth, ctrl.event_tol,
            ctrl.speed_tol, ctrl.max_events, min(est, 50_000_000))
    m = chart.dim
    ray = BrokenRay(t, y[:, :m], y[:, m:], ev.astype(np.int64), chart, int(nsteps))
    if status != _kernels.OK:
        cls, msg = _STATUS_ERRORS[status]
        raise cls(f"{msg} at t = {ray.t[-1]:.6g} (chart {chart.name})", ray)
    return ray


def _initial_step(chart, x, v, ctrl):
    sff = float(second_fundamental_form(chart, x, v))
    e = 0.5 * v[0] ** 2 + x[0] * sff
    if sff > 0 and e > 0:
        return min(ctrl.max_step, 2 * math.sqrt(2 * e) / sff / ctrl.steps_per_bounce)
    return ctrl.max_step


def _trace_python(chart, x, v, t0, duration, ctrl, escape_depth):
    """Reference implementation of the compiled tracer for callback-only charts."""
    m = chart.dim

    def rhs(y):
        gam = _christoffel(chart, y[0], y[1:m])
        return np.concatenate([y[m:], -np.einsum("abc,b,c->a", gam, y[m:], y[m:])])

    def rk4(y, h):
        k1 = rhs(y)
        k2 = rhs(y + 0.5 * h * k1)
        k3 = rhs(y + 0.5 * h * k2)
        k4 = rhs(y + h * k3)
        return y + h * (k1 + 2 * k2 + 2 * k3 + k4) / 6

    def speed(y):
        return float(chart.norm(y[0], y[1:m], y[m:]))

    y = np.concatenate([x, v])
    s0 = speed(y)
    h = _initial_step(chart, x, v, ctrl)
    times, states, events = [t0], [y.copy()], []
    t, t_end, nsteps = t0, t0 + duration, 0
    status = _kernels.OK
    while t_end - t > 1e-15 * max(1.0, abs(t_end)):
        hs = min(h, t_end - t)
        y1 = rk4(y, hs)
        nsteps += 1
        if y1[0] < 0.0:
            lo, hi = 0.0, hs
            while hi - lo > ctrl.event_tol:
                mid = 0.5 * (lo + hi)
                if rk4(y, mid)[0] > 0.0:
                    lo = mid
                else:
                    hi = mid
            s = 0.5 * (lo + hi)
            if s < ctrl.min_step:
                status = _kernels.STEP_UNDERFLOW
                break
            ym = rk4(y, s)
            ym[0] = 0.0
            t += s
            times.append(t)
            states.append(ym.copy())
            events.append(len(times) - 1)
            ym[m] = -ym[m]
            times.append(t)
            states.append(ym.copy())
            y = ym
            if abs(speed(y) - s0) > ctrl.speed_tol:
                status = _kernels.SPEED_DRIFT
                break
            h = _initial_step(chart, y[:m], y[m:], ctrl)
        else:
            t = t_end if hs == t_end - t else t + hs
            y = y1
            times.append(t)
            states.append(y.copy())
            if y[0] >= escape_depth:
                status = _kernels.ESCAPE
                break
    return (np.asarray(times), np.asarray(states), np.asarray(events, dtype=np.int64), status, nsteps)


# ---------------------------------------------------------------------------
# bounce statistics


@dataclass(frozen=True)
class BounceTable:
    t: np.ndarray
    tau: np.ndarray
    tau_pred: np.ndarray

    @property
    def deviation(self) -> np.ndarray:
        return np.abs(self.tau / self.tau_pred - 1.0)


def _zero_indices(ray: BrokenRay) -> np.ndarray:
    """Sample indices of the outgoing state at each zero of the normal coordinate."""
    idx = ray.event_index + 1
    return np.concatenate([[0], idx]) if ray.starts_at_boundary else idx


def bounce_intervals(ray: BrokenRay) -> BounceTable:
    """Gaps between adjacent zeros with the predicted gap 2 sqrt(2E) / II at the first zero."""
    zi = _zero_indices(ray)
    if len(zi) < 2:
        raise ValueError("ray needs at least two zeros of the normal coordinate")
    zt = ray.t[zi]
    first = zi[:-1]
    e = energy_of(ray.chart, ray.x[first], ray.v[first])
    sff = second_fundamental_form(ray.chart, ray.x[first], ray.v[first])
    return BounceTable(zt[:-1], np.diff(zt), 2.0 * np.sqrt(2.0 * e) / sff)


def _integrate_segments(ray: BrokenRay, values) -> float:
    starts, stops = ray.segment_bounds()
    return float(_kernels.segment_simpson(ray.t, np.ascontiguousarray(values, dtype=float), starts, stops))


@dataclass(frozen=True)
class DepthCheck:
    depth_integral: float
    heuristic_integral: float
    bounce_t: np.ndarray
    bounce_tau: np.ndarray
    local_error: np.ndarray

    @property
    def local_ratio(self) -> np.ndarray:
        """|int x0 - v^2 tau / (3 II)| / tau^4 per bounce."""
        return self.local_error / self.bounce_tau ** 4


def depth_integral_check(ray: BrokenRay, F: Callable = None, k: int = 1) -> DepthCheck:
    """Compare int x0^k F with int (2E / 3 II)^k F along a ray ending at a zero of x0.

    Also reports, per bounce, the error of int x0 against (v0)^2 tau / (3 II).
    """
    if not ray.ends_at_zero():
        raise ValueError("ray must end at a zero of the normal coordinate")
    Fv = np.ones(len(ray.t)) if F is None else np.broadcast_to(np.asarray(F(ray.t), dtype=float), ray.t.shape)
    x0 = ray.x[:, 0]
    e = ray.energy()
    sff = ray.sff()
    lhs = _integrate_segments(ray, x0 ** k * Fv)
    rhs = _integrate_segments(ray, (2.0 * e / (3.0 * sff)) ** k * Fv)

    starts, stops = ray.segment_bounds()
    if not ray.starts_at_boundary:
        starts, stops = starts[1:], stops[1:]
    local = np.empty(len(starts))
    taus = np.empty(len(starts))
    for q, (a, b) in enumerate(zip(starts, stops)):
        depth = float(_kernels.segment_simpson(ray.t, x0, np.array([a]), np.array([b])))
        tau = ray.t[b] - ray.t[a]
        vn = ray.v[a, 0]
        local[q] = abs(depth - vn ** 2 * tau / (3.0 * sff[a]))
        taus[q] = tau
    return DepthCheck(lhs, rhs, ray.t[starts], taus, local)


# ---------------------------------------------------------------------------
# glancing families


@dataclass(eq=False)
class FamilyMember:
    nominal_eps: float
    eps: float
    ray: Optional[BrokenRay]
    landed: bool = False
    error: Optional[str] = None
    traces: int = 0

    @property
    def ok(self) -> bool:
        return self.ray is not None and self.error is None


@dataclass(eq=False)
class GlancingFamily:
    sigma: BoundaryGeodesic
    members: list
    settings: TraceSettings

    @property
    def epsilons(self) -> np.ndarray:
        return np.array([m.eps for m in self.members])

    @property
    def rays(self) -> list:
        return [m.ray for m in self.members]

    def ok_members(self) -> list:
        return [m for m in self.members if m.ok]


def geometric_epsilons(eps_max: float = 0.1, count: int = 8, ratio: float = 0.5) -> np.ndarray:
    return eps_max * ratio ** np.arange(count)


def launch_state(sigma: BoundaryGeodesic, eps: float) -> PhaseState:
    """Unit-speed launch from sigma(0): tangential part sqrt(1 - eps^2) sigma'(0), normal part eps."""
    x = np.concatenate([[0.0], sigma.x[0]])
    v = np.concatenate([[eps], math.sqrt(1.0 - eps * eps) * sigma.v[0]])
    return PhaseState(0.0, x, v)


def _bounce_scale(sigma: BoundaryGeodesic) -> float:
    sff = sigma.sff()
    return 2.0 * float(np.min(sff)) ** (-2.0 / 3.0) * float(sff[0]) ** (-1.0 / 3.0)


def _land(chart, sigma, eps0, ctrl, land_tol, max_iter=8):
    """Adjust eps so that a reflection lands in [L - land_tol, L]; returns (eps, ray, landed, traces)."""
    L = sigma.L
    margin = 2.0 * _bounce_scale(sigma) * eps0 + 8 * ctrl.max_step
    target = L - 0.5 * land_tol
    ray = trace(chart, launch_state(sigma, eps0), L + margin, ctrl)
    traces = 1
    z = ray.zero_times
    below = z[z <= L]
    above = z[z > L]
    if len(above) and len(below) and (above[0] - L) < (L - below[-1]):
        idx = len(below)
    else:
        idx = len(below) - 1
    if idx < 1:
        return eps0, ray.truncate(L), False, traces
    hist = [(eps0, z[idx])]
    eps = eps0
    best = (abs(z[idx] - target), eps0, ray)
    for _ in range(max_iter):
        tz = hist[-1][1]
        if L - land_tol <= tz <= L:
            return hist[-1][0], best[2].truncate(L), True, traces
        if len(hist) == 1:
            eps = hist[-1][0] * target / tz
        else:
            (e1, t1), (e2, t2) = hist[-2], hist[-1]
            eps = e2 - (t2 - target) * (e2 - e1) / (t2 - t1) if t2 != t1 else e2 * target / t2
        ray = trace(chart, launch_state(sigma, eps), L + margin, ctrl)
        traces += 1
        z = ray.zero_times
        if len(z) <= idx:
            break
        hist.append((eps, z[idx]))
        if abs(z[idx] - target) < best[0]:
            best = (abs(z[idx] - target), eps, ray)
        if L - land_tol <= z[idx] <= L:
            return eps, ray.truncate(L), True, traces
    return best[1], best[2].truncate(L), False, traces


def launch_glancing(chart: MetricChart, sigma: BoundaryGeodesic, epsilons: Sequence[float],
                    ctrl: TraceSettings = TraceSettings(), E: Optional[TomographySet] = None,
                    land: bool = True, land_tol: Optional[float] = None) -> GlancingFamily:
    """Trace broken rays from sigma(0) with normal launch speeds ``epsilons``.

    With ``land=True`` each launch speed is nudged (secant iteration) so that
    a reflection falls within ``land_tol`` below t = L; the truncation time
    then equals L up to that tolerance.  Failed members are kept and marked.
    """
    if E is not None:
        require_admissible(chart, sigma, E)
    elif np.min(sigma.sff()) <= 0.0:
        raise AdmissibilityError("boundary must be strictly convex along sigma (II > 0)")
    if land_tol is None:
        land_tol = 1e-8 * sigma.L
    min_sff = float(np.min(sigma.sff()))
    members = []
    for eps in sorted((float(e) for e in epsilons), reverse=True):
        if not 0.0 < eps < 1.0:
            raise ValueError(f"launch normal speeds must lie in (0, 1), got {eps}")
        if eps * eps / min_sff >= chart.h:
            members.append(FamilyMember(eps, eps, None, error="launch speed above escape threshold"))
            continue
        try:
            if land:
                e_act, ray, landed, ntr = _land(chart, sigma, eps, ctrl, land_tol)
            else:
                e_act, ray, landed, ntr = eps, trace(chart, launch_state(sigma, eps), sigma.L, ctrl), False, 1
            members.append(FamilyMember(eps, e_act, ray, landed, traces=ntr))
        except TraceError as err:
            members.append(FamilyMember(eps, eps, err.ray, error=str(err)))
    return GlancingFamily(sigma, members, ctrl)


def deviation_from_sigma(ray: BrokenRay, sigma: BoundaryGeodesic) -> np.ndarray:
    """Geodesic-normal-coordinate distance |gamma_bar(t) - sigma(t)|_g at the ray samples."""
    chart = ray.chart
    sig = sigma.position(ray.t)
    d = chart.wrap_difference(ray.x[:, 1:], sig)
    g = chart.g(np.zeros(len(ray.t)), sig)
    return np.sqrt(np.einsum("si,sij,sj->s", d, g, d))
