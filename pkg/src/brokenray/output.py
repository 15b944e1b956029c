"""CSV reports, ray dumps and a minimal SVG writer."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.integrate import cumulative_simpson
from scipy.interpolate import CubicSpline

from . import expr as ex
from .billiards import BrokenRay
from .geometry import MetricChart


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    if isinstance(v, complex):
        return f"{v.real:.17g}{v.imag:+.17g}j"
    text = str(v)
    return f'"{text}"' if ("," in text or '"' in text) else text


def write_csv(path, columns: Sequence[tuple], rows: Iterable[Sequence], provenance: Optional[str] = None) -> Path:
    """Write ``rows`` under a header of ``name [unit]`` cells.

    ``provenance`` (the serialised configuration) is embedded as ``#`` lines.
    Floats use 17 significant digits.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    if provenance:
        lines += [f"# {line}" if line else "#" for line in provenance.rstrip("\n").split("\n")]
    lines.append(",".join(f"{name} [{unit}]" for name, unit in columns))
    for row in rows:
        if len(row) != len(columns):
            raise ValueError(f"row has {len(row)} cells, header has {len(columns)}")
        lines.append(",".join(format_value(v) for v in row))
    path.write_text("\n".join(lines) + "\n")
    return path


def write_ray_csv(path, ray: BrokenRay, provenance: Optional[str] = None) -> Path:
    m = ray.chart.dim
    cols = [("t", "length")] + [(f"x{i}", "coord") for i in range(m)] + [(f"v{i}", "coord/length") for i in range(m)]
    cols.append(("energy", "1"))
    e = ray.energy()
    rows = ([ray.t[i], *ray.x[i], *ray.v[i], e[i]] for i in range(len(ray.t)))
    return write_csv(path, cols, rows, provenance)


def write_events_csv(path, ray: BrokenRay, provenance: Optional[str] = None) -> Path:
    m = ray.chart.dim
    cols = [("t", "length")] + [(f"x{i}", "coord") for i in range(1, m)] + [("v_in0", "coord/length")]
    rows = ([ray.t[i], *ray.x[i, 1:], ray.v[i, 0]] for i in ray.event_index)
    return write_csv(path, cols, rows, provenance)


# ---------------------------------------------------------------------------
# planar pictures of 2-D charts


class PlanarCurveEmbedding:
    """(x0, x1) -> c(x1) + x0 N(x1) for the planar curve of curvature kappa parametrised by arclength x1."""

    def __init__(self, kappa, lo: float, hi: float, samples: int = 4097):
        s = np.linspace(lo, hi, samples)
        k = np.broadcast_to(np.asarray(kappa(s), dtype=float), s.shape)
        theta = lo + math.pi / 2 + cumulative_simpson(k, x=s, initial=0.0)
        cx = cumulative_simpson(np.cos(theta), x=s, initial=0.0)
        cy = cumulative_simpson(np.sin(theta), x=s, initial=0.0)
        # start on the unit circle at angle lo so the disk is drawn centred
        self._theta = CubicSpline(s, theta)
        self._cx = CubicSpline(s, cx + math.cos(lo))
        self._cy = CubicSpline(s, cy + math.sin(lo))
        self.lo, self.hi = lo, hi

    def __call__(self, x0, x1) -> np.ndarray:
        x1 = np.asarray(x1, dtype=float)
        th = self._theta(x1)
        nx, ny = -np.sin(th), np.cos(th)
        return np.stack([self._cx(x1) + x0 * nx, self._cy(x1) + x0 * ny], axis=-1)


def planar_embedding(chart: MetricChart, lo: float = 0.0, hi: float = 2 * math.pi) -> PlanarCurveEmbedding:
    if chart.dim != 2:
        raise ValueError("planar pictures need a 2-D chart")
    if chart.name == "disk":
        kappa = lambda s: np.ones_like(s)
    elif chart.name == "flat":
        kappa = lambda s: np.zeros_like(s)
    elif "kappa" in chart.components:
        kappa = ex.lambdify(chart.components["kappa"], ("x1",))
    else:
        raise ValueError(f"chart {chart.name!r} has no planar picture")
    return PlanarCurveEmbedding(kappa, lo, hi)


class Svg:
    """Polylines and circles in data coordinates, y axis pointing up."""

    def __init__(self, width: int = 640, height: int = 640, margin: float = 0.05):
        self.width, self.height, self.margin = width, height, margin
        self.items = []

    def polyline(self, pts, stroke: str = "black", width: float = 1.0, opacity: float = 1.0):
        self.items.append(("polyline", np.asarray(pts, dtype=float), stroke, width, opacity))

    def circle(self, center, r: float, fill: str = "black"):
        self.items.append(("circle", np.asarray(center, dtype=float)[None, :], fill, r, 1.0))

    def render(self) -> str:
        allpts = np.concatenate([it[1] for it in self.items]) if self.items else np.zeros((1, 2))
        lo, hi = allpts.min(axis=0), allpts.max(axis=0)
        span = float(max(hi[0] - lo[0], hi[1] - lo[1], 1e-9))
        pad = self.margin * span
        sc = min(self.width, self.height) / (span + 2 * pad)

        def tr(p):
            return (p[:, 0] - lo[0] + pad) * sc, self.height - (p[:, 1] - lo[1] + pad) * sc

        out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" height="{self.height}" '
               f'viewBox="0 0 {self.width} {self.height}">',
               f'<rect width="{self.width}" height="{self.height}" fill="white"/>']
        for kind, pts, color, size, opacity in self.items:
            X, Y = tr(pts)
            if kind == "polyline":
                coords = " ".join(f"{x:.3f},{y:.3f}" for x, y in zip(X, Y))
                out.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="{size}" '
                           f'stroke-opacity="{opacity}" stroke-linejoin="round"/>')
            else:
                out.append(f'<circle cx="{X[0]:.3f}" cy="{Y[0]:.3f}" r="{size}" fill="{color}"/>')
        out.append("</svg>")
        return "\n".join(out) + "\n"

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.render())
        return path


def ray_figure(ray: BrokenRay, path, boundary_range: Optional[tuple] = None, max_points: int = 4000) -> Path:
    """Boundary curve plus one polyline per smooth piece of the ray."""
    chart = ray.chart
    x1 = ray.x[:, 1]
    lo, hi = boundary_range or (min(0.0, float(x1.min())), max(2 * math.pi, float(x1.max())))
    emb = planar_embedding(chart, lo, hi)
    svg = Svg()
    s = np.linspace(lo, hi, 1024)
    svg.polyline(emb(np.zeros_like(s), s), stroke="black", width=2.0)
    starts, stops = ray.segment_bounds()
    stride = max(1, len(ray.t) // max_points)
    for a, b in zip(starts, stops):
        idx = np.unique(np.concatenate([np.arange(a, b + 1, stride), [b]]))
        svg.polyline(emb(ray.x[idx, 0], ray.x[idx, 1]), stroke="#c0392b", width=1.2)
    for i in ray.event_index:
        svg.circle(emb(0.0, ray.x[i, 1])[None, :][0], 1.6, fill="#2c3e50")
    return svg.write(path)
