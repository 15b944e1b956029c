"""Boundary normal coordinate charts and the geometry of the boundary.

Points are written ``(x0, xbar)`` where ``x0`` is the distance to the
boundary and ``xbar`` holds the m - 1 tangential coordinates.  The full
metric is block diagonal, ``[[1, 0], [0, g_ij(x0, xbar)]]``; charts only ever
store the tangential block.

Chart callbacks broadcast: ``x0`` of shape ``S`` and ``xbar`` of shape
``S + (n,)`` give results of shape ``S + (n, n)`` (``S + (n, n, n)`` for the
tangential derivative arrays, indexed ``[..., k, i, j]`` = d_k g_ij).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
import sympy as sp
from scipy.interpolate import CubicHermiteSpline

from . import _kernels
from . import expr as ex


class ChartDomainError(ValueError):
    """Point outside the chart (normal depth outside [0, h) or off the atlas)."""


class SingularMetricError(ValueError):
    """Tangential metric block is not positive definite."""


class GeodesicStepError(RuntimeError):
    """Boundary geodesic failed its unit-speed or residual checks."""


class AdmissibilityError(ValueError):
    """A boundary geodesic is not admissible where admissibility is required."""


@dataclass(frozen=True)
class Axis:
    """Topology of a tangential coordinate: periodic with ``period`` or an open interval."""

    kind: str
    lo: float = 0.0
    hi: float = 2 * np.pi

    @property
    def period(self) -> float:
        return self.hi - self.lo

    def contains(self, x, margin: float = 0.0) -> np.ndarray:
        x = np.asarray(x)
        if self.kind == "periodic":
            return np.ones(x.shape, dtype=bool)
        return (x > self.lo + margin) & (x < self.hi - margin)


PERIODIC_2PI = Axis("periodic", 0.0, 2 * np.pi)


@dataclass(frozen=True)
class ChartProgram:
    """Flattened metric programs for the compiled kernels."""

    ops: np.ndarray
    args: np.ndarray
    offs: np.ndarray
    n: int
    stack_size: int


@dataclass(frozen=True, eq=False)
class MetricChart:
    dim: int
    h: float
    g: Callable
    dg_d0: Callable
    dg_d00: Callable
    dg_dk: Callable
    dg_d0k: Callable
    boundary_topology: tuple
    name: str = "custom"
    program: Optional[ChartProgram] = None
    components: Optional[dict] = None

    @property
    def n(self) -> int:
        return self.dim - 1

    def check_point(self, x0, xbar=None):
        x0 = np.asarray(x0, dtype=float)
        if np.any(x0 < 0.0) or np.any(x0 >= self.h):
            raise ChartDomainError(f"normal coordinate {x0} outside [0, {self.h}) for chart {self.name}")
        if xbar is not None:
            xbar = np.asarray(xbar, dtype=float)
            for i, axis in enumerate(self.boundary_topology):
                if not np.all(axis.contains(xbar[..., i])):
                    raise ChartDomainError(f"tangential coordinate x{i + 1} leaves chart {self.name}")

    def wrap_difference(self, a, b) -> np.ndarray:
        """Coordinate difference ``a - b`` with periodic axes wrapped to (-P/2, P/2]."""
        d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
        d = np.array(d, copy=True)
        for i, axis in enumerate(self.boundary_topology):
            if axis.kind == "periodic":
                p = axis.period
                d[..., i] = d[..., i] - p * np.round(d[..., i] / p)
        return d

    def norm(self, x0, xbar, v) -> np.ndarray:
        """|v|_g for full vectors v = (v0, vbar)."""
        v = np.asarray(v, dtype=float)
        g = self.g(x0, xbar)
        vb = v[..., 1:]
        return np.sqrt(v[..., 0] ** 2 + np.einsum("...i,...ij,...j->...", vb, g, vb))


# ---------------------------------------------------------------------------
# construction from expressions


def _pairs(n):
    return [(i, j) for i in range(n) for j in range(i, n)]


def _stack_depth(ops, args) -> int:
    depth = best = 0
    for op, arg in zip(ops, args):
        if op in (ex.OP_CONST, ex.OP_VAR):
            depth += 1
        elif op in (ex.OP_ADD, ex.OP_MUL):
            depth -= int(arg) - 1
        elif op == ex.OP_POW:
            depth -= 1
        best = max(best, depth)
    return best


def _matrix_callback(funcs, n, nblocks=None):
    """Build a broadcasting callback from {(block, i, j): fn(x0, x1, ...)}."""

    def callback(x0, xbar):
        x0 = np.asarray(x0, dtype=float)
        xbar = np.asarray(xbar, dtype=float)
        args = [x0] + [xbar[..., i] for i in range(n)]
        shape = np.broadcast(*args).shape
        lead = () if nblocks is None else (nblocks,)
        out = np.zeros(shape + lead + (n, n))
        for (blk, i, j), fn in funcs.items():
            val = np.broadcast_to(fn(*args), shape)
            if nblocks is None:
                out[..., i, j] = val
                out[..., j, i] = val
            else:
                out[..., blk, i, j] = val
                out[..., blk, j, i] = val
        return out

    return callback


def chart_from_components(components: dict, dim: int, h: float, topology, name: str = "custom") -> MetricChart:
    """Chart from sympy expressions {(i, j): g_ij(x0, x1, ...)} with i <= j (0-based tangential)."""
    n = dim - 1
    variables = tuple(f"x{a}" for a in range(dim))
    syms = [ex.symbol(v) for v in variables]
    comps = {pair: sp.sympify(components.get(pair, 0)) for pair in _pairs(n)}

    g_f, d0_f, d00_f, dk_f, d0k_f = {}, {}, {}, {}, {}
    ops_all, args_all, offs = [], [], [0]
    for (i, j), gij in comps.items():
        g_f[(0, i, j)] = ex.lambdify(gij, variables)
        d0 = sp.diff(gij, syms[0])
        d0_f[(0, i, j)] = ex.lambdify(d0, variables)
        d00_f[(0, i, j)] = ex.lambdify(sp.diff(d0, syms[0]), variables)
        for k in range(n):
            dk_f[(k, i, j)] = ex.lambdify(sp.diff(gij, syms[k + 1]), variables)
            d0k_f[(k, i, j)] = ex.lambdify(sp.diff(d0, syms[k + 1]), variables)
        for d in [gij] + [sp.diff(gij, s) for s in syms]:
            ops, args = ex.compile_program(d, variables)
            ops_all.append(ops)
            args_all.append(args)
            offs.append(offs[-1] + len(ops))
    ops = np.concatenate(ops_all)
    args = np.concatenate(args_all)
    stack = max(_stack_depth(o, a) for o, a in zip(ops_all, args_all)) + 2
    program = ChartProgram(ops, args, np.asarray(offs, dtype=np.int64), n, stack)
    return MetricChart(
        dim=dim,
        h=float(h),
        g=_matrix_callback(g_f, n),
        dg_d0=_matrix_callback(d0_f, n),
        dg_d00=_matrix_callback(d00_f, n),
        dg_dk=_matrix_callback(dk_f, n, nblocks=n),
        dg_d0k=_matrix_callback(d0k_f, n, nblocks=n),
        boundary_topology=tuple(topology),
        name=name,
        program=program,
        components=comps,
    )


KAPPA_PRESETS = {"ellipse-like": "1 + 1/2*cos(2*x1)", "default": "1 + 1/2*cos(x1)"}


def disk_chart() -> MetricChart:
    x0 = ex.symbol("x0")
    return chart_from_components({(0, 0): (1 - x0) ** 2}, 2, 0.5, [PERIODIC_2PI], name="disk")


def flat_chart() -> MetricChart:
    return chart_from_components({(0, 0): sp.Integer(1)}, 2, 1.0, [PERIODIC_2PI], name="flat")


def band_chart(kappa: str = KAPPA_PRESETS["default"], h: Optional[float] = None) -> MetricChart:
    """Planar domain whose boundary has curvature kappa(x1) at arclength x1 (period 2 pi)."""
    kappa = KAPPA_PRESETS.get(kappa, kappa)
    kexpr = ex.parse(kappa, variables=("x1",))
    kfun = ex.lambdify(kexpr, ("x1",))
    s = np.linspace(0.0, 2 * np.pi, 4097)
    kv = np.broadcast_to(kfun(s), s.shape)
    if np.min(kv) <= 0.0:
        raise ValueError(f"band curvature must be positive, min kappa = {np.min(kv):.3g}")
    if h is None:
        h = 0.49 / float(np.max(kv))
    x0 = ex.symbol("x0")
    chart = chart_from_components({(0, 0): (1 - kexpr * x0) ** 2}, 2, h, [PERIODIC_2PI],
                                  name=f"band:kappa={ex.to_text(kexpr)}")
    return replace(chart, components={**chart.components, "kappa": kexpr})


def sphere_band_chart() -> MetricChart:
    """Unit ball in R^3 near its boundary sphere; x1 polar angle, x2 azimuth."""
    x0, x1 = ex.symbol("x0"), ex.symbol("x1")
    comps = {(0, 0): (1 - x0) ** 2, (1, 1): (1 - x0) ** 2 * sp.sin(x1) ** 2}
    return chart_from_components(comps, 3, 0.5, [Axis("interval", 0.0, np.pi), PERIODIC_2PI],
                                 name="sphere-band")


def metric_chart(params: dict) -> MetricChart:
    """Generic chart from ``g11=..., g12=..., g22=...`` strings (1-based indices)."""
    dim = int(params.pop("dim", 0)) or None
    h = float(ex.evaluate_constant(params.pop("h", "1/2")))
    keys = [k for k in params if k.startswith("g")]
    n = dim - 1 if dim else max(int(k[1]) for k in keys)
    dim = n + 1
    variables = tuple(f"x{a}" for a in range(dim))
    comps = {}
    for key in keys:
        i, j = sorted((int(key[1]) - 1, int(key[2]) - 1))
        comps[(i, j)] = ex.parse(params[key], variables)
    for i in range(n):
        comps.setdefault((i, i), sp.Integer(1))
    topo = [PERIODIC_2PI] * n
    return chart_from_components(comps, dim, h, topo, name="metric")


def parse_chart(spec: str) -> MetricChart:
    """Catalog lookup: ``disk``, ``flat``, ``sphere-band``, ``band[:kappa=expr][;h=..]`` or ``metric:g11=..``."""
    name, _, rest = spec.partition(":")
    params = {}
    if rest.strip():
        for item in rest.split(";"):
            if not item.strip():
                continue
            key, eq, value = item.partition("=")
            if not eq:
                raise ex.ExpressionError("expected key=value in chart parameters", item.strip())
            params[key.strip()] = value.strip()
    name = name.strip()
    if name == "disk":
        return disk_chart()
    if name == "flat":
        return flat_chart()
    if name in ("sphere-band", "sphere"):
        return sphere_band_chart()
    if name == "band":
        h = params.get("h")
        return band_chart(params.get("kappa", "default"), None if h is None else ex.evaluate_constant(h))
    if name == "metric":
        return metric_chart(params)
    raise ex.ExpressionError("unknown chart name", name)


# ---------------------------------------------------------------------------
# pointwise geometry


def _split_point(x):
    x = np.asarray(x, dtype=float)
    return x[..., 0], x[..., 1:]


def _checked_inverse(g):
    try:
        np.linalg.cholesky(g)
    except np.linalg.LinAlgError as err:
        raise SingularMetricError("tangential metric is not positive definite") from err
    return np.linalg.inv(g)


def tangential_christoffel(chart: MetricChart, x0, xbar) -> np.ndarray:
    """Gamma^i_jk at (x0, xbar) from the tangential derivatives, shape (..., n, n, n)."""
    ginv = _checked_inverse(chart.g(x0, xbar))
    dk = chart.dg_dk(x0, xbar)  # [..., k, i, j]
    # lowered Gamma_{l j k} = 1/2 (d_k g_lj + d_j g_lk - d_l g_jk)
    low = 0.5 * (np.moveaxis(dk, -3, -1) + np.swapaxes(dk, -3, -2) - dk)
    return np.einsum("...il,...ljk->...ijk", ginv, low)


def christoffel(chart: MetricChart, x) -> np.ndarray:
    """Full array Gamma[alpha, beta, gamma] at x = (x0, x1, ...)."""
    x0, xbar = _split_point(x)
    chart.check_point(x0)
    return _christoffel(chart, x0, xbar)


def _christoffel(chart: MetricChart, x0, xbar) -> np.ndarray:
    """``christoffel`` without the domain check (RK stages may dip just below x0 = 0)."""
    m = chart.dim
    g = chart.g(x0, xbar)
    ginv = _checked_inverse(g)
    d0 = chart.dg_d0(x0, xbar)
    gam = np.zeros(np.shape(x0) + (m, m, m))
    gam[..., 0, 1:, 1:] = -0.5 * d0
    mixed = 0.5 * np.einsum("...ik,...kj->...ij", ginv, d0)
    gam[..., 1:, 1:, 0] = mixed
    gam[..., 1:, 0, 1:] = mixed
    gam[..., 1:, 1:, 1:] = tangential_christoffel(chart, x0, xbar)
    return gam


def _tangential(chart, a):
    a = np.asarray(a, dtype=float)
    return a[..., 1:] if a.shape[-1] == chart.dim else a


def second_fundamental_form(chart: MetricChart, x, a, b=None) -> np.ndarray:
    """II(a, b) = -1/2 g_ij,0 a^i b^j; normal components of a, b are ignored."""
    x0, xbar = _split_point(x)
    chart.check_point(x0)
    a = _tangential(chart, a)
    b = a if b is None else _tangential(chart, b)
    d0 = chart.dg_d0(x0, xbar)
    return -0.5 * np.einsum("...i,...ij,...j->...", a, d0, b)


def a_cubic(chart: MetricChart, x, v) -> np.ndarray:
    """A(v) = (g_il,0 Gamma^l_kj - 1/2 g_ij,0k) v^i v^j v^k."""
    x0, xbar = _split_point(x)
    chart.check_point(x0)
    v = _tangential(chart, v)
    gam = tangential_christoffel(chart, x0, xbar)  # [l, k, j]
    d0 = chart.dg_d0(x0, xbar)
    d0k = chart.dg_d0k(x0, xbar)  # [k, i, j]
    first = np.einsum("...il,...lkj,...i,...j,...k->...", d0, gam, v, v, v)
    second = np.einsum("...kij,...i,...j,...k->...", d0k, v, v, v)
    return first - 0.5 * second


# ---------------------------------------------------------------------------
# boundary geodesics


@dataclass(frozen=True, eq=False)
class BoundaryGeodesic:
    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    L: float
    step: float
    chart: MetricChart = field(repr=False)
    start_in_E: Optional[bool] = None
    end_in_intE: Optional[bool] = None

    def __post_init__(self):
        acc = -np.einsum("sijk,sj,sk->si", tangential_christoffel(self.chart, np.zeros(len(self.t)), self.x),
                         self.v, self.v)
        object.__setattr__(self, "a", acc)
        object.__setattr__(self, "_xs", CubicHermiteSpline(self.t, self.x, self.v, axis=0))
        object.__setattr__(self, "_vs", CubicHermiteSpline(self.t, self.v, acc, axis=0))

    def position(self, t) -> np.ndarray:
        return self._xs(np.clip(t, 0.0, self.L))

    def velocity(self, t) -> np.ndarray:
        return self._vs(np.clip(t, 0.0, self.L))

    @property
    def points(self) -> np.ndarray:
        """Samples as full points (0, xbar)."""
        return np.concatenate([np.zeros((len(self.t), 1)), self.x], axis=1)

    def sff(self, t=None) -> np.ndarray:
        if t is None:
            pts, vel = self.points, self.v
        else:
            xb = self.position(t)
            pts = np.concatenate([np.zeros(np.shape(t) + (1,)), xb], axis=-1)
            vel = self.velocity(t)
        return second_fundamental_form(self.chart, pts, vel)

    def reversed(self) -> "BoundaryGeodesic":
        return BoundaryGeodesic(self.L - self.t[::-1], self.x[::-1].copy(), -self.v[::-1], self.L, self.step,
                                self.chart)


def _python_boundary_rk4(chart, x, v, h, nsteps):
    def rhs(state):
        xb, vb = state[: chart.n], state[chart.n:]
        gam = tangential_christoffel(chart, 0.0, xb)
        return np.concatenate([vb, -np.einsum("ijk,j,k->i", gam, vb, vb)])

    y = np.concatenate([x, v])
    out = np.empty((nsteps + 1, 2 * chart.n))
    out[0] = y
    for k in range(nsteps):
        k1 = rhs(y)
        k2 = rhs(y + 0.5 * h * k1)
        k3 = rhs(y + 0.5 * h * k2)
        k4 = rhs(y + h * k3)
        y = y + h * (k1 + 2 * k2 + 2 * k3 + k4) / 6
        out[k + 1] = y
    return out


def _fd_derivative(values, h):
    """Fourth-order finite difference along axis 0 (one-sided five-point stencils at the ends)."""
    d = np.empty_like(values)
    d[2:-2] = (values[:-4] - 8 * values[1:-3] + 8 * values[3:-1] - values[4:]) / (12 * h)
    c0 = np.array([-25, 48, -36, 16, -3]) / (12 * h)
    c1 = np.array([-3, -10, 18, -6, 1]) / (12 * h)
    d[0] = np.tensordot(c0, values[:5], axes=1)
    d[1] = np.tensordot(c1, values[:5], axes=1)
    d[-1] = -np.tensordot(c0, values[-1:-6:-1], axes=1)
    d[-2] = -np.tensordot(c1, values[-1:-6:-1], axes=1)
    return d


def geodesic_residual(sigma: BoundaryGeodesic) -> np.ndarray:
    """|nabla_sigma' sigma'|_g at every sample, from finite differences of the velocity samples."""
    acc_fd = _fd_derivative(sigma.v, sigma.step)
    res = acc_fd - sigma.a
    g = sigma.chart.g(np.zeros(len(sigma.t)), sigma.x)
    return np.sqrt(np.einsum("si,sij,sj->s", res, g, res))


def integrate_boundary_geodesic(chart: MetricChart, xbar0, vbar0, L: float, step: Optional[float] = None,
                                speed_tol: float = 1e-8, residual_tol: float = 1e-8) -> BoundaryGeodesic:
    """Unit-speed geodesic of the boundary metric g(0, .) from (xbar0, vbar0) for length L."""
    xbar0 = np.atleast_1d(np.asarray(xbar0, dtype=float))
    vbar0 = np.atleast_1d(np.asarray(vbar0, dtype=float))
    speed = float(np.sqrt(vbar0 @ chart.g(0.0, xbar0) @ vbar0))
    if abs(speed - 1.0) > 1e-9:
        raise ValueError(f"initial boundary velocity must be unit speed, got |v| = {speed!r}")
    if step is None:
        step = min(1e-3, L / 1e4)
    nsteps = max(int(np.ceil(L / step - 1e-9)), 4)
    h = L / nsteps
    if chart.program is not None:
        p = chart.program
        _, out = _kernels.boundary_geodesic_kernel(p.ops, p.args, p.offs, p.n, p.stack_size, xbar0, vbar0,
                                                   float(L), h)
        x, v = out[:, 1: chart.dim], out[:, chart.dim + 1:]
    else:
        out = _python_boundary_rk4(chart, xbar0, vbar0, h, nsteps)
        x, v = out[:, : chart.n], out[:, chart.n:]
    t = np.linspace(0.0, L, nsteps + 1)
    for i, axis in enumerate(chart.boundary_topology):
        if not np.all(axis.contains(x[:, i])):
            raise ChartDomainError(f"boundary geodesic leaves chart {chart.name} along x{i + 1}")
    sigma = BoundaryGeodesic(t, x.copy(), v.copy(), float(L), h, chart)
    speeds = np.sqrt(np.einsum("si,sij,sj->s", v, chart.g(np.zeros(len(t)), x), v))
    if np.max(np.abs(speeds - 1.0)) > speed_tol:
        raise GeodesicStepError(f"unit speed violated by {np.max(np.abs(speeds - 1.0)):.2e}; reduce step")
    res = geodesic_residual(sigma)
    if np.max(res) > residual_tol:
        raise GeodesicStepError(f"geodesic residual {np.max(res):.2e} exceeds {residual_tol:g}; reduce step")
    return sigma


def unit_tangent(chart: MetricChart, xbar, direction) -> np.ndarray:
    """Normalise a tangential direction to unit length in g(0, xbar)."""
    xbar = np.atleast_1d(np.asarray(xbar, dtype=float))
    d = np.atleast_1d(np.asarray(direction, dtype=float))
    if d.shape == (1,) and chart.n > 1:
        raise ValueError("a direction vector with one entry per tangential coordinate is required")
    return d / np.sqrt(d @ chart.g(0.0, xbar) @ d)


# ---------------------------------------------------------------------------
# tomography sets and admissibility


@dataclass(frozen=True)
class TomographySet:
    """E as a predicate over boundary points; ``interior`` defaults to ``contains``."""

    contains: Callable
    interior: Optional[Callable] = None
    tol: float = 1e-9
    description: str = "custom"

    @classmethod
    def full(cls) -> "TomographySet":
        return cls(lambda xb: True, lambda xb: True, description="all")

    @classmethod
    def from_expression(cls, text: str, tol: float = 1e-9) -> "TomographySet":
        """E = {phi >= 0}, int E = {phi > 0} for an expression phi(x1, x2)."""
        if text.strip() in ("all", "full", ""):
            return cls.full()
        phi = ex.lambdify(ex.parse(text, ("x1", "x2")), ("x1", "x2"))

        def value(xb):
            xb = np.atleast_1d(np.asarray(xb, dtype=float))
            x2 = xb[1] if xb.shape[0] > 1 else 0.0
            return float(phi(xb[0], x2))

        return cls(lambda xb: value(xb) >= 0.0, lambda xb: value(xb) > 0.0, tol, description=text.strip())

    def _stencil(self, xbar):
        xbar = np.atleast_1d(np.asarray(xbar, dtype=float))
        pts = [xbar]
        for i in range(xbar.shape[0]):
            for s in (-1.0, 1.0):
                p = xbar.copy()
                p[i] += s * self.tol
                pts.append(p)
        return pts

    def in_closure(self, xbar) -> bool:
        return any(bool(self.contains(p)) for p in self._stencil(xbar))

    def in_closure_of_interior(self, xbar) -> bool:
        inner = self.interior or self.contains
        return any(bool(inner(p)) for p in self._stencil(xbar))

    def in_interior(self, xbar) -> bool:
        inner = self.interior or self.contains
        return all(bool(inner(p)) for p in self._stencil(xbar))


@dataclass(frozen=True)
class AdmissibilityReport:
    admissible: bool
    start_in_closure_E: bool
    end_in_closure_int_E: bool
    min_sff: float

    def __bool__(self):
        return self.admissible


def is_admissible(chart: MetricChart, sigma: BoundaryGeodesic, E: TomographySet) -> AdmissibilityReport:
    start = E.in_closure(sigma.x[0])
    end = E.in_closure_of_interior(sigma.x[-1])
    min_sff = float(np.min(sigma.sff()))
    return AdmissibilityReport(bool(start and end and min_sff > 0.0), start, end, min_sff)


def require_admissible(chart, sigma, E) -> AdmissibilityReport:
    rep = is_admissible(chart, sigma, E)
    if not rep.admissible:
        raise AdmissibilityError(
            f"boundary geodesic not admissible: start in closure(E)={rep.start_in_closure_E}, "
            f"end in closure(int E)={rep.end_in_closure_int_E}, min II={rep.min_sff:.3g}")
    return rep


def _cumulative(t, vals) -> np.ndarray:
    out = np.empty(len(t))
    _kernels.segment_cumulative(np.ascontiguousarray(t), np.ascontiguousarray(vals, dtype=float),
                                np.array([0]), np.array([len(t) - 1]), out)
    return out


def rho_weight(chart: MetricChart, sigma: BoundaryGeodesic, t, k: int = 1, tol: float = 1e-8) -> float:
    """(II(sigma'(t)) / II(sigma'(0)))^(2k/3), cross-checked against the integral of 2A/(3 II)."""
    t = float(t)
    if not 0.0 <= t <= sigma.L + 1e-12:
        raise ValueError(f"t = {t} outside [0, {sigma.L}]")
    sff = sigma.sff()
    if np.min(sff) <= 0.0:
        raise AdmissibilityError("II(sigma', sigma') must be positive along sigma")
    integrand = 2.0 * a_cubic(chart, sigma.points, sigma.v) / (3.0 * sff)
    cum = _cumulative(sigma.t, integrand)
    j = min(int(np.searchsorted(sigma.t, t, side="right")) - 1, len(sigma.t) - 2)
    j = max(j, 0)
    # partial interval by 4-point Gauss-Legendre on the interpolated geodesic
    a, b = sigma.t[j], t
    nodes, weights = np.polynomial.legendre.leggauss(4)
    tt = 0.5 * (b - a) * nodes + 0.5 * (b + a)
    xb = sigma.position(tt)
    vb = sigma.velocity(tt)
    pts = np.concatenate([np.zeros((len(tt), 1)), xb], axis=1)
    part = 2.0 * a_cubic(chart, pts, vb) / (3.0 * second_fundamental_form(chart, pts, vb))
    integral = cum[j] + 0.5 * (b - a) * float(weights @ part)
    quad_form = float(np.exp(k * integral))
    closed = float((sigma.sff(t) / sff[0]) ** (2.0 * k / 3.0))
    if abs(quad_form - closed) > tol * max(1.0, abs(closed)):
        raise ArithmeticError(f"rho quadrature {quad_form!r} disagrees with closed form {closed!r}")
    return closed
