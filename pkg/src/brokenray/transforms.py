"""Weights, broken ray transforms, boundary ray transforms and normal Taylor subtraction."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import sympy as sp
from scipy.interpolate import CubicHermiteSpline

from . import _kernels
from . import expr as ex
from .billiards import BrokenRay
from .geometry import AdmissibilityError, BoundaryGeodesic, MetricChart, second_fundamental_form

PHASE_VARIABLES = ex.DEFAULT_VARIABLES


def _phase_args(x, v):
    """Split (N, m) point and velocity arrays into the six grammar variables (missing ones are 0)."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    zero = np.zeros(x.shape[:-1])
    xs = [x[..., i] if i < x.shape[-1] else zero for i in range(3)]
    vs = [v[..., i] if i < v.shape[-1] else zero for i in range(3)]
    return xs + vs


def _broadcast(value, shape):
    return np.broadcast_to(np.asarray(value, dtype=float), shape)


@dataclass(frozen=True)
class WeightSpec:
    """Weight w and attenuation a on the tangent bundle; both map (x, v) arrays to values."""

    w: Callable
    a: Callable
    w_text: str = "1"
    a_text: str = "0"

    @classmethod
    def trivial(cls) -> "WeightSpec":
        return cls.from_expressions("1", "0")

    @classmethod
    def attenuation(cls, lam: float, w: str = "1") -> "WeightSpec":
        """w, a = -lam."""
        return cls.from_expressions(w, repr(-float(lam)))

    @classmethod
    def from_expressions(cls, w: str = "1", a: str = "0") -> "WeightSpec":
        fw = ex.lambdify(ex.parse(w), PHASE_VARIABLES)
        fa = ex.lambdify(ex.parse(a), PHASE_VARIABLES)

        def wcb(x, v):
            return _broadcast(fw(*_phase_args(x, v)), np.shape(x)[:-1])

        def acb(x, v):
            return _broadcast(fa(*_phase_args(x, v)), np.shape(x)[:-1])

        return cls(wcb, acb, w.strip(), a.strip())

    def scaled(self, c: float) -> "WeightSpec":
        w = self.w
        return WeightSpec(lambda x, v: c * w(x, v), self.a, f"{c!r}*({self.w_text})", self.a_text)

    @property
    def is_trivial(self) -> bool:
        return self.w_text == "1" and self.a_text == "0"


@dataclass(frozen=True)
class CurveSamples:
    """A sampled piecewise-smooth curve in full chart coordinates."""

    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    starts: np.ndarray
    stops: np.ndarray


def curve_samples(curve) -> CurveSamples:
    if isinstance(curve, BrokenRay):
        # every sample belongs to a piece, including a lone reflected copy at the very end
        starts = np.concatenate([[0], curve.event_index + 1]).astype(np.int64)
        stops = np.concatenate([curve.event_index, [len(curve.t) - 1]]).astype(np.int64)
        keep = stops >= starts
        return CurveSamples(curve.t, curve.x, curve.v, starts[keep], stops[keep])
    if isinstance(curve, BoundaryGeodesic):
        v = np.concatenate([np.zeros((len(curve.t), 1)), curve.v], axis=1)
        return CurveSamples(curve.t, curve.points, v, np.array([0]), np.array([len(curve.t) - 1]))
    if isinstance(curve, CurveSamples):
        return curve
    raise TypeError(f"cannot sample curve of type {type(curve).__name__}")


def _cumulative_attenuation(spec: WeightSpec, c: CurveSamples) -> np.ndarray:
    a = np.ascontiguousarray(spec.a(c.x, c.v), dtype=float)
    out = np.zeros(len(c.t))
    if spec.a_text == "0":
        return out
    _kernels.segment_cumulative(np.ascontiguousarray(c.t), a, c.starts, c.stops, out)
    return out


def weight_samples(spec: WeightSpec, curve) -> np.ndarray:
    """W at the native samples of ``curve``."""
    c = curve_samples(curve)
    w = np.asarray(spec.w(c.x, c.v), dtype=float)
    return w * np.exp(_cumulative_attenuation(spec, c))


def weight_along(spec: WeightSpec, curve, t) -> np.ndarray:
    """W(t) = w(alpha(t), alpha'(t)) exp(int_0^t a), integrated piecewise across reflections.

    Between samples the curve is interpolated by cubic Hermite polynomials.
    At a reflection time the outgoing state is used.
    """
    c = curve_samples(curve)
    tq = np.atleast_1d(np.asarray(t, dtype=float))
    lo, hi = c.t[0], c.t[-1]
    tol = 1e-12 * max(1.0, abs(hi))
    if np.any(tq < lo - tol) or np.any(tq > hi + tol):
        raise ValueError(f"t outside curve duration [{lo}, {hi}]")
    tq = np.clip(tq, lo, hi)
    cum = _cumulative_attenuation(spec, c)
    a = np.asarray(spec.a(c.x, c.v), dtype=float)
    out = np.empty(len(tq))
    seg_t0 = c.t[c.starts]
    which = np.clip(np.searchsorted(seg_t0, tq, side="right") - 1, 0, len(c.starts) - 1)
    for s in np.unique(which):
        i0, i1 = c.starts[s], c.stops[s]
        sel = which == s
        ts = c.t[i0:i1 + 1]
        if len(ts) == 1:
            out[sel] = spec.w(c.x[i0:i0 + 1], c.v[i0:i0 + 1])[0] * math.exp(cum[i0])
            continue
        xs = CubicHermiteSpline(ts, c.x[i0:i1 + 1], c.v[i0:i1 + 1], axis=0)(tq[sel])
        vs = np.stack([np.interp(tq[sel], ts, c.v[i0:i1 + 1, j]) for j in range(c.v.shape[1])], axis=-1)
        A = CubicHermiteSpline(ts, cum[i0:i1 + 1], a[i0:i1 + 1])(tq[sel])
        out[sel] = np.asarray(spec.w(xs, vs), dtype=float) * np.exp(A)
    return out if np.ndim(t) else out[0]


# ---------------------------------------------------------------------------
# fields


def field_variables(dim: int) -> tuple:
    return tuple(f"x{i}" for i in range(dim))


@dataclass(frozen=True)
class BoundaryScalar:
    """Function on the boundary, evaluated on (..., n) arrays of tangential coordinates."""

    value: Callable
    text: str = "custom"

    @classmethod
    def from_expression(cls, text: str, dim: int = 2) -> "BoundaryScalar":
        variables = field_variables(dim)[1:]
        fn = ex.lambdify(ex.parse(text, variables), variables)
        return cls(lambda xb: _broadcast(fn(*np.moveaxis(np.asarray(xb, dtype=float), -1, 0)),
                                         np.shape(xb)[:-1]), text.strip())

    @classmethod
    def constant(cls, c: float) -> "BoundaryScalar":
        return cls(lambda xb: np.full(np.shape(xb)[:-1], float(c)), repr(float(c)))

    def __call__(self, xbar) -> np.ndarray:
        return self.value(xbar)


@dataclass(frozen=True)
class ScalarField:
    """f on the chart with its normal derivatives on the boundary up to order ``k_max``.

    ``value`` maps (..., m) points to values; ``normal_derivs[i]`` maps
    (..., n) boundary coordinates to d^i f / (dx0)^i at x0 = 0.
    """

    value: Callable
    normal_derivs: tuple
    k_max: int
    dim: int = 2
    text: str = "custom"

    @classmethod
    def from_expression(cls, text: str, dim: int = 2, k_max: int = 3) -> "ScalarField":
        variables = field_variables(dim)
        e = ex.parse(text, variables)
        fn = ex.lambdify(e, variables)
        x0 = ex.symbol("x0")
        derivs = []
        d = e
        for _ in range(k_max + 1):
            derivs.append(BoundaryScalar.from_expression(ex.to_text(sp.simplify(d.subs(x0, 0))), dim).value)
            d = sp.diff(d, x0)

        def value(x):
            x = np.asarray(x, dtype=float)
            return _broadcast(fn(*np.moveaxis(x, -1, 0)), x.shape[:-1])

        return cls(value, tuple(derivs), k_max, dim, text.strip())

    def __call__(self, x) -> np.ndarray:
        return self.value(x)

    def normal_derivative(self, i: int) -> BoundaryScalar:
        if i > self.k_max:
            raise ValueError(f"normal derivative of order {i} not available (k_max = {self.k_max})")
        return BoundaryScalar(self.normal_derivs[i], f"d^{i}/dx0^{i} [{self.text}]")

    def check(self, xbar, fd_step: float = 1e-4) -> tuple[float, float]:
        """(|f(0, xbar) - f_0(xbar)|, |central FD d/dx0 - f_1(xbar)|) maxima over the samples."""
        xbar = np.atleast_2d(np.asarray(xbar, dtype=float))
        pts = np.concatenate([np.zeros((len(xbar), 1)), xbar], axis=1)
        e0 = float(np.max(np.abs(self.value(pts) - self.normal_derivs[0](xbar))))
        if self.k_max < 1:
            return e0, 0.0
        # one-sided 4th-order difference at the boundary
        h = fd_step
        vals = [self.value(pts + np.eye(pts.shape[1])[0] * j * h) for j in range(5)]
        fd = (-25 * vals[0] + 48 * vals[1] - 36 * vals[2] + 16 * vals[3] - 3 * vals[4]) / (12 * h)
        return e0, float(np.max(np.abs(fd - self.normal_derivs[1](xbar))))


# ---------------------------------------------------------------------------
# transforms


def _segment_quadrature(c: CurveSamples, values) -> float:
    values = np.ascontiguousarray(values, dtype=float)
    if not np.all(np.isfinite(values)):
        raise FloatingPointError("non-finite integrand sample")
    return float(_kernels.segment_simpson(np.ascontiguousarray(c.t), values, c.starts, c.stops))


def broken_ray_transform(chart: MetricChart, spec: WeightSpec, f: ScalarField, ray: BrokenRay) -> float:
    """int W_gamma(t) f(gamma(t)) dt, Simpson on each smooth piece."""
    c = curve_samples(ray)
    return _segment_quadrature(c, weight_samples(spec, c) * f(c.x))


def boundary_ray_transform(chart: MetricChart, spec: WeightSpec, sigma: BoundaryGeodesic, F: BoundaryScalar,
                           k: int = 0) -> float:
    """int_0^L W_sigma(t) II(sigma'(t))^(-k/3) F(sigma(t)) dt."""
    c = curve_samples(sigma)
    sff = second_fundamental_form(chart, c.x, c.v)
    if k and np.min(sff) <= 0.0:
        raise AdmissibilityError("II(sigma', sigma') must be positive for a weight II^(-k/3)")
    vals = weight_samples(spec, c) * F(sigma.x)
    if k:
        vals = vals * sff ** (-k / 3.0)
    return _segment_quadrature(c, vals)


def taylor_polynomial(f: ScalarField, x0, xbar, k: int) -> np.ndarray:
    """T^k f(x0) = sum_{i<=k} (x0)^i / i! d^i f(0, xbar)."""
    if k > f.k_max:
        raise ValueError(f"Taylor order {k} exceeds available normal derivatives (k_max = {f.k_max})")
    x0 = np.asarray(x0, dtype=float)
    out = 0.0
    term = np.ones_like(x0)
    for i in range(k + 1):
        out = out + term * f.normal_derivs[i](xbar)
        term = term * x0 / (i + 1)
    return out


def _points(x0, xbar):
    x0 = np.asarray(x0, dtype=float)
    xbar = np.atleast_1d(np.asarray(xbar, dtype=float))
    shape = np.broadcast_shapes(x0.shape, xbar.shape[:-1])
    return np.concatenate([np.broadcast_to(x0, shape)[..., None], np.broadcast_to(xbar, shape + xbar.shape[-1:])],
                          axis=-1)


def taylor_subtract(f: ScalarField, x0, xbar, k: int) -> np.ndarray:
    """f(x0, xbar) - T^(k-1) f(x0); for k = 0 this is f itself."""
    if k > f.k_max:
        raise ValueError(f"order {k} exceeds available normal derivatives (k_max = {f.k_max})")
    xbar = np.atleast_1d(np.asarray(xbar, dtype=float))
    val = f(_points(x0, xbar))
    if k == 0:
        return val
    return val - taylor_polynomial(f, x0, xbar, k - 1)
