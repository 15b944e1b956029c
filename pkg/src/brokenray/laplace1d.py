"""One-dimensional boundaries: exponential moments, their inversion, and the planar transform I."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .billiards import GlancingFamily
from .geometry import BoundaryGeodesic, MetricChart, TomographySet
from .reconstruction import recover_k0
from .transforms import ScalarField, WeightSpec


# ---------------------------------------------------------------------------
# exponential moments (constant attenuation)


class InconsistentMoments(ValueError):
    pass


@dataclass(frozen=True)
class MomentSystem:
    L: float
    lambdas: np.ndarray
    moments: np.ndarray
    bins: int

    def __post_init__(self):
        lam = np.asarray(self.lambdas, dtype=float)
        mom = np.asarray(self.moments, dtype=float)
        if lam.ndim != 1 or mom.shape != lam.shape:
            raise ValueError("lambdas and moments must be matching 1-D arrays")
        if np.any(np.diff(lam) <= 0):
            raise ValueError("lambdas must be strictly increasing")
        if not np.all(np.isfinite(mom)):
            raise ValueError("moments must be finite")
        if not 1 <= self.bins <= len(lam) // 2 and not (self.bins == 1 and len(lam) == 1):
            raise ValueError(f"bins must satisfy 1 <= n <= len(lambdas)/2, got n={self.bins}")
        object.__setattr__(self, "lambdas", lam)
        object.__setattr__(self, "moments", mom)

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(0.0, self.L, self.bins + 1)


def default_lambda_grid(L: float, count: int = 32, lam0: Optional[float] = None) -> np.ndarray:
    """lambda_j = lam0 + 4 j / L for j = 1..count.

    The default lam0 = -(count/2)(4/L) centres the grid on zero, which keeps
    the piecewise-constant moment matrix well conditioned.
    """
    if lam0 is None:
        lam0 = -(count // 2) * 4.0 / L
    return lam0 + 4.0 * np.arange(1, count + 1) / L


def _exp_integral(lam, a, b):
    """int_a^b e^(-lam s) ds, stable for lam -> 0."""
    lam = np.asarray(lam, dtype=float)
    d = b - a
    safe = np.where(lam == 0.0, 1.0, lam)
    val = np.exp(-lam * a) * -np.expm1(-lam * d) / safe
    return np.where(lam == 0.0, d, val)


def moment_matrix(L: float, lambdas, bins: int) -> np.ndarray:
    """M[j, i] = int over bin i of e^(-lambda_j s) ds."""
    e = np.linspace(0.0, L, bins + 1)
    lam = np.asarray(lambdas, dtype=float)[:, None]
    return _exp_integral(lam, e[None, :-1], e[None, 1:])


def piecewise_moments(L: float, lambdas, values) -> np.ndarray:
    """Noise-free moments of the piecewise-constant function with the given bin values."""
    values = np.asarray(values, dtype=float)
    return moment_matrix(L, lambdas, len(values)) @ values


def attenuated(base: WeightSpec, lam: float) -> WeightSpec:
    """Same weight, attenuation a - lam."""
    a = base.a
    text = f"-({lam!r})" if base.a_text == "0" else f"({base.a_text}) - ({lam!r})"
    return WeightSpec(base.w, lambda x, v: a(x, v) - lam, base.w_text, text)


def exponential_moments(chart: MetricChart, spec_base: WeightSpec, f: ScalarField, sigma: BoundaryGeodesic,
                        lambdas: Sequence[float], family: GlancingFamily, bins: int = 8,
                        E: Optional[TomographySet] = None) -> MomentSystem:
    """Moments int_0^L e^(-lambda s) f(sigma(s)) ds recovered from broken rays with a = -lambda.

    The family is traced once; every lambda reuses the same rays.
    """
    if chart.dim != 2:
        raise ValueError("exponential moments need a surface (one-dimensional boundary)")
    lambdas = np.asarray(lambdas, dtype=float)
    moments = []
    for lam in lambdas:
        rep = recover_k0(chart, attenuated(spec_base, float(lam)), f, sigma, family, E=E)
        moments.append(rep.limit.value)
    return MomentSystem(sigma.L, lambdas, np.array(moments), bins)


@dataclass(frozen=True)
class LaplaceRecovery:
    edges: np.ndarray
    values: np.ndarray
    residual: float
    condition: float


def laplace_recover(ms: MomentSystem, alpha: float = 1e-10, residual_tol: Optional[float] = 1e-6) -> LaplaceRecovery:
    """Bin values c from M c = moments by Tikhonov-regularised least squares.

    Rows and columns of M are equilibrated before regularising, so ``alpha``
    is relative to a unit-scaled system.  ``residual`` is |M c - m| / |m|
    measured with the same row scaling (absolute when the moments vanish).
    """
    M = moment_matrix(ms.L, ms.lambdas, ms.bins)
    r = np.linalg.norm(M, axis=1)
    A = M / r[:, None]
    b = ms.moments / r
    D = 1.0 / np.linalg.norm(A, axis=0)
    A = A * D
    n = ms.bins
    aug = np.vstack([A, math.sqrt(alpha) * np.eye(n)])
    rhs = np.concatenate([b, np.zeros(n)])
    y, *_ = np.linalg.lstsq(aug, rhs, rcond=None)
    c = D * y
    scale = np.linalg.norm(b)
    res = float(np.linalg.norm((M @ c - ms.moments) / r) / (scale if scale > 0 else 1.0))
    sv = np.linalg.svd(A, compute_uv=False)
    out = LaplaceRecovery(ms.edges, c, res, float(sv[0] / sv[-1]))
    if residual_tol is not None and res > residual_tol:
        raise InconsistentMoments(f"relative moment residual {res:.3g} exceeds {residual_tol:.3g}")
    return out


# ---------------------------------------------------------------------------
# the planar transform I f(lambda) = int e^(lambda z) f(z) dH^2(z)


@dataclass(frozen=True)
class Radial:
    center: complex
    rbreaks: tuple  # increasing radii, first 0, last = support radius


@dataclass(frozen=True)
class PlanarField:
    """Compactly supported f: C -> C with its discontinuity structure.

    ``xbreaks`` / ``ybreaks`` are the lines where f may jump (they include the
    box edges).  Rotationally symmetric fields carry a ``radial`` structure and
    are integrated in polar coordinates about its centre.
    """

    value: Callable
    box: tuple
    xbreaks: tuple = ()
    ybreaks: tuple = ()
    radial: Optional[Radial] = None
    name: str = "custom"

    def __post_init__(self):
        x0, x1, y0, y1 = map(float, self.box)
        object.__setattr__(self, "box", (x0, x1, y0, y1))
        object.__setattr__(self, "xbreaks", tuple(sorted(set([x0, x1, *map(float, self.xbreaks)]))))
        object.__setattr__(self, "ybreaks", tuple(sorted(set([y0, y1, *map(float, self.ybreaks)]))))

    def __call__(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=complex)
        x0, x1, y0, y1 = self.box
        inside = (z.real >= x0) & (z.real <= x1) & (z.imag >= y0) & (z.imag <= y1)
        return np.where(inside, np.asarray(self.value(z), dtype=complex), 0.0)

    def check_support(self, samples: int = 256, pad: float = 0.01) -> float:
        """Max |f| on a ring just outside the support box (should be 0)."""
        x0, x1, y0, y1 = self.box
        px, py = pad * max(x1 - x0, 1e-3), pad * max(y1 - y0, 1e-3)
        s = np.linspace(0.0, 1.0, samples)
        xs = x0 - px + s * (x1 - x0 + 2 * px)
        ys = y0 - py + s * (y1 - y0 + 2 * py)
        ring = np.concatenate([xs + 1j * (y0 - py), xs + 1j * (y1 + py), (x0 - px) + 1j * ys, (x1 + px) + 1j * ys])
        return float(np.max(np.abs(self.value(ring))))

    def __add__(self, other: "PlanarField") -> "PlanarField":
        box = (min(self.box[0], other.box[0]), max(self.box[1], other.box[1]),
               min(self.box[2], other.box[2]), max(self.box[3], other.box[3]))
        return PlanarField(lambda z: self(z) + other(z), box, self.xbreaks + other.xbreaks,
                           self.ybreaks + other.ybreaks, None, f"({self.name})+({other.name})")

    def __mul__(self, c) -> "PlanarField":
        return PlanarField(lambda z: c * self(z), self.box, self.xbreaks, self.ybreaks, self.radial,
                           f"{c!r}*({self.name})")

    __rmul__ = __mul__

    def __neg__(self) -> "PlanarField":
        return self * -1.0


def scale(f: PlanarField, mu: float) -> PlanarField:
    """S_mu f(z) = f(mu z)."""
    if mu <= 0:
        raise ValueError("scale factor must be positive")
    x0, x1, y0, y1 = f.box
    rad = None if f.radial is None else Radial(f.radial.center / mu, tuple(r / mu for r in f.radial.rbreaks))
    return PlanarField(lambda z: f(mu * np.asarray(z)), (x0 / mu, x1 / mu, y0 / mu, y1 / mu),
                       tuple(b / mu for b in f.xbreaks), tuple(b / mu for b in f.ybreaks), rad, f"S_{mu!r}({f.name})")


def translate(f: PlanarField, w: complex) -> PlanarField:
    """T_w f(z) = f(z - w)."""
    w = complex(w)
    x0, x1, y0, y1 = f.box
    rad = None if f.radial is None else Radial(f.radial.center + w, f.radial.rbreaks)
    return PlanarField(lambda z: f(np.asarray(z) - w), (x0 + w.real, x1 + w.real, y0 + w.imag, y1 + w.imag),
                       tuple(b + w.real for b in f.xbreaks), tuple(b + w.imag for b in f.ybreaks), rad,
                       f"T_{w!r}({f.name})")


def rect_indicator(x0: float, x1: float, y0: float, y1: float, c: complex = 1.0) -> PlanarField:
    def value(z):
        z = np.asarray(z, dtype=complex)
        inside = (z.real >= x0) & (z.real <= x1) & (z.imag >= y0) & (z.imag <= y1)
        return np.where(inside, c, 0.0)

    return PlanarField(value, (x0, x1, y0, y1), name=f"{c!r}*1[{x0},{x1}]x[{y0},{y1}]")


def two_squares() -> PlanarField:
    """1 on [0,1]^2 minus 1 on [-1,0]^2."""
    f = rect_indicator(0.0, 1.0, 0.0, 1.0) + rect_indicator(-1.0, 0.0, -1.0, 0.0, -1.0)
    return replace(f, name="two-squares")


def radial_field(profile: Callable, rbreaks: Sequence[float], center: complex = 0.0,
                 name: str = "radial") -> PlanarField:
    """f(z) = profile(|z - center|), supported in |z - center| <= rbreaks[-1]."""
    rb = tuple(sorted(set([0.0, *map(float, rbreaks)])))
    R = rb[-1]
    c = complex(center)

    def value(z):
        r = np.abs(np.asarray(z, dtype=complex) - c)
        return np.where(r <= R, np.asarray(profile(r), dtype=complex), 0.0)

    return PlanarField(value, (c.real - R, c.real + R, c.imag - R, c.imag + R), radial=Radial(c, rb), name=name)


def disk_indicator(radius: float = 1.0, center: complex = 0.0) -> PlanarField:
    return radial_field(lambda r: np.where(r < radius, 1.0, 0.0), [radius], center, name="disk")


def annulus_witness(center: complex = 0.0) -> PlanarField:
    """1[r < 1] - 4 1[r < 1/2]: rotationally symmetric with zero mean."""
    return radial_field(lambda r: np.where(r < 1.0, 1.0, 0.0) - 4.0 * np.where(r < 0.5, 1.0, 0.0), [0.5, 1.0],
                        center, name="annulus")


def bump(center: complex = 0.0, radius: float = 1.0) -> PlanarField:
    """Smooth polynomial bump (1 - |z-c|^2/r^2)^3 on the disk of radius r."""
    return radial_field(lambda r: np.clip(1.0 - (r / radius) ** 2, 0.0, None) ** 3, [radius], center, name="bump")


BUILTIN_FIELDS = {
    "two-squares": two_squares,
    "disk": disk_indicator,
    "annulus": annulus_witness,
    "bump": bump,
    "square": lambda: rect_indicator(0.0, 0.5, 0.0, 0.5),
}


def builtin_field(name: str) -> PlanarField:
    try:
        return BUILTIN_FIELDS[name]()
    except KeyError:
        raise ValueError(f"unknown planar field {name!r}; choose from {sorted(BUILTIN_FIELDS)}") from None


def _panel_rule(breaks, order, max_width):
    nodes, weights = np.polynomial.legendre.leggauss(order)
    xs, ws = [], []
    for a, b in zip(breaks[:-1], breaks[1:]):
        if b <= a:
            continue
        m = max(1, int(math.ceil((b - a) / max_width - 1e-12)))
        edges = np.linspace(a, b, m + 1)
        for lo, hi in zip(edges[:-1], edges[1:]):
            xs.append(0.5 * (hi - lo) * nodes + 0.5 * (hi + lo))
            ws.append(0.5 * (hi - lo) * weights)
    return np.concatenate(xs), np.concatenate(ws)


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes z and weights for integrating against dH^2 over a field's support."""

    z: np.ndarray
    w: np.ndarray

    def integrate(self, values) -> complex:
        return complex(np.sum(self.w * values))


def quadrature_rule(f: PlanarField, order: int = 16, max_width: float = 0.25, angular: int = 64) -> QuadratureRule:
    """Gauss-Legendre panels aligned with the breaks, or a polar rule for radial fields."""
    if f.radial is not None:
        r, wr = _panel_rule(f.radial.rbreaks, order, max_width)
        phi = 2 * np.pi * np.arange(angular) / angular
        z = f.radial.center + (r[:, None] * np.exp(1j * phi[None, :]))
        w = (wr * r)[:, None] * np.full(angular, 2 * np.pi / angular)[None, :]
        return QuadratureRule(z.ravel(), w.ravel())
    x, wx = _panel_rule(f.xbreaks, order, max_width)
    y, wy = _panel_rule(f.ybreaks, order, max_width)
    z = x[:, None] + 1j * y[None, :]
    return QuadratureRule(z.ravel(), (wx[:, None] * wy[None, :]).ravel())


class QuadratureNonConvergence(ArithmeticError):
    pass


def _transform(f, lam, rule):
    lam = np.atleast_1d(np.asarray(lam, dtype=complex))
    fv = f(rule.z) * rule.w
    return np.exp(np.outer(lam, rule.z)) @ fv


def transform_I(f: PlanarField, lam, order: int = 16, max_width: float = 0.25, angular: int = 64,
                tol: Optional[float] = 1e-9):
    """I f(lambda) = int e^(lambda z) f(z) dH^2(z) for scalar or array ``lam``.

    With ``tol`` set, the value is recomputed on a refined rule (half panel
    width, doubled angular count) and a disagreement above ``tol`` raises.
    """
    vals = _transform(f, lam, quadrature_rule(f, order, max_width, angular))
    if tol is not None:
        fine = _transform(f, lam, quadrature_rule(f, order, max_width / 2, 2 * angular))
        gap = float(np.max(np.abs(fine - vals) / np.maximum(1.0, np.abs(fine))))
        if gap > tol:
            raise QuadratureNonConvergence(f"refinement changed I f by {gap:.3g} (> {tol:.3g})")
        vals = fine
    return vals if np.ndim(lam) else complex(vals[0])


def two_squares_exact(lam) -> np.ndarray:
    """Closed form of I for the two-squares field."""
    lam = np.asarray(lam, dtype=complex)

    def seg(c, a, b):  # int_a^b e^(c s) ds, series near c = 0
        d = b - a
        small = np.abs(c) < 1e-6
        safe = np.where(small, 1.0, c)
        series = d * (1 + c * d / 2 + (c * d) ** 2 / 6)
        return np.exp(c * a) * np.where(small, series, np.expm1(c * d) / safe)

    return seg(lam, 0, 1) * seg(1j * lam, 0, 1) - seg(lam, -1, 0) * seg(1j * lam, -1, 0)


def convolve(f: PlanarField, g: PlanarField, points: int = 64) -> PlanarField:
    """(f * g)(z) = int f(w) g(z - w) dH^2(w) by direct quadrature (at most ``points`` nodes per axis).

    The inner rule is rebuilt per evaluation point with breaks at f's jumps
    and at the jumps of w -> g(z - w).  Radial structure is not used here, so
    the result is only accurate when both fields jump along axis-aligned lines.
    """
    if points > 64:
        raise ValueError("direct convolution is capped at 64 points per axis")
    gx = np.array(g.xbreaks)
    gy = np.array(g.ybreaks)
    fx0, fx1, fy0, fy1 = f.box
    per = 4

    def axis_rule(lo, hi, fixed, moving, npts):
        br = [b for b in np.concatenate([fixed, moving]) if lo <= b <= hi]
        br = sorted(set([lo, hi, *br]))
        panels = max(1, npts // per)
        width = (hi - lo) / panels if hi > lo else 1.0
        return _panel_rule(br, per, width)

    def value(z):
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        out = np.zeros(z.shape, dtype=complex)
        for idx, zz in np.ndenumerate(z):
            lo_x, hi_x = max(fx0, zz.real - gx[-1]), min(fx1, zz.real - gx[0])
            lo_y, hi_y = max(fy0, zz.imag - gy[-1]), min(fy1, zz.imag - gy[0])
            if hi_x <= lo_x or hi_y <= lo_y:
                continue
            x, wx = axis_rule(lo_x, hi_x, np.array(f.xbreaks), zz.real - gx, points)
            y, wy = axis_rule(lo_y, hi_y, np.array(f.ybreaks), zz.imag - gy, points)
            w = x[:, None] + 1j * y[None, :]
            out[idx] = np.sum(wx[:, None] * wy[None, :] * f(w) * g(zz - w))
        return out

    box = (f.box[0] + g.box[0], f.box[1] + g.box[1], f.box[2] + g.box[2], f.box[3] + g.box[3])
    xb = sorted(set(a + b for a in f.xbreaks for b in g.xbreaks))
    yb = sorted(set(a + b for a in f.ybreaks for b in g.ybreaks))
    return PlanarField(value, box, tuple(xb), tuple(yb), None, f"({f.name})*({g.name})")


@dataclass(frozen=True)
class IdentityReport:
    lambdas: np.ndarray
    scaling_error: float
    translation_error: float
    convolution_error: float
    tol: float

    @property
    def passed(self) -> bool:
        return max(self.scaling_error, self.translation_error, self.convolution_error) <= self.tol


def _rel(a, b):
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b))))


def check_identities(f: PlanarField, mu: float, w: complex, g: PlanarField, lambdas, tol: float = 1e-6,
                     conv_points: int = 32, conv_order: int = 4) -> IdentityReport:
    """I(S_mu f)(l) = mu^-2 I f(l/mu), I(T_w f)(l) = e^(l w) I f(l), I(f*g) = I f I g on ``lambdas``.

    The convolution is evaluated by direct double quadrature; the outer rule
    uses ``conv_order``-point panels aligned with the kinks of f * g.
    """
    lam = np.asarray(lambdas, dtype=complex)
    If = transform_I(f, lam)
    e_sc = _rel(transform_I(scale(f, mu), lam), mu ** -2 * transform_I(f, lam / mu))
    e_tr = _rel(transform_I(translate(f, w), lam), np.exp(lam * complex(w)) * If)
    fg = convolve(f, g, conv_points)
    outer = quadrature_rule(fg, order=conv_order, max_width=(fg.box[1] - fg.box[0]) / max(1, conv_points // conv_order))
    conv = np.exp(np.outer(lam, outer.z)) @ (fg(outer.z) * outer.w)
    e_cv = _rel(conv, If * transform_I(g, lam))
    return IdentityReport(lam, e_sc, e_tr, e_cv, tol)


@dataclass(frozen=True)
class WitnessReport:
    lambdas: np.ndarray
    values: np.ndarray
    tol: float

    @property
    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))

    @property
    def passed(self) -> bool:
        return self.max_abs <= self.tol


def rotsym_kernel_witness(profile: Callable, rbreaks: Sequence[float], center: complex, lambdas,
                          tol: float = 1e-6) -> WitnessReport:
    """|I f| on the grid for f(z) = profile(|z - center|); computed about 0 and shifted by e^(lambda center)."""
    lam = np.asarray(lambdas, dtype=complex)
    f0 = radial_field(profile, rbreaks, 0.0)
    total = transform_I(f0, 0.0)
    if abs(total) > tol:
        raise ValueError(f"profile must integrate to zero, got {total:.3g}")
    vals = np.exp(lam * complex(center)) * transform_I(f0, lam)
    return WitnessReport(lam, vals, tol)


def kernel_witness(f: PlanarField, lambdas, tol: float = 1e-6) -> WitnessReport:
    """|I f| on the grid for an arbitrary field (used as a negative control)."""
    lam = np.asarray(lambdas, dtype=complex)
    return WitnessReport(lam, np.atleast_1d(transform_I(f, lam)), tol)


def cauchy_riemann_defect(f: PlanarField, lambdas, h: float = 1e-3) -> float:
    """Max |dI/dx + i dI/dy| over the grid by central differences (zero for analytic I)."""
    lam = np.asarray(lambdas, dtype=complex)
    rule = quadrature_rule(f)
    dx = (_transform(f, lam + h, rule) - _transform(f, lam - h, rule)) / (2 * h)
    dy = (_transform(f, lam + 1j * h, rule) - _transform(f, lam - 1j * h, rule)) / (2 * h)
    return float(np.max(np.abs(dx + 1j * dy)))


def default_complex_grid(count: int = 16, radius: float = 1.0) -> np.ndarray:
    """A square grid of complex lambdas in [-radius, radius]^2 (count must be a square)."""
    side = int(round(math.sqrt(count)))
    if side * side != count:
        raise ValueError("count must be a perfect square")
    s = np.linspace(-radius, radius, side)
    return (s[:, None] + 1j * s[None, :]).ravel()
