"""Experiment configuration: a key = value file with sections, overridable by CLI flags."""

from __future__ import annotations

import configparser
import io
import math
from dataclasses import dataclass, fields, replace
from typing import Optional

import numpy as np

from . import expr as ex
from .geometry import (BoundaryGeodesic, MetricChart, TomographySet, integrate_boundary_geodesic, parse_chart,
                       unit_tangent)

SECTIONS = {
    "experiment": ("command", "chart", "sigma", "E", "field", "weight", "atten", "k", "mode", "planar_field",
                   "lambda_grid", "bins"),
    "family": ("eps_max", "eps_count", "eps_ratio", "land"),
    "integrator": ("steps_per_bounce", "max_step", "event_tol", "speed_tol"),
    "output": ("out", "svg", "tolerance"),
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    command: str = "reconstruct"
    chart: str = "disk"
    sigma: str = "start=0;dir=1;L=pi"
    E: str = "all"
    field: str = "x0"
    weight: str = "1"
    atten: str = "0"
    k: int = 1
    mode: str = "transform"
    planar_field: str = "two-squares"
    lambda_grid: str = ""
    bins: int = 8
    eps_max: float = 0.1
    eps_count: int = 8
    eps_ratio: float = 0.5
    land: bool = True
    steps_per_bounce: int = 64
    max_step: float = 1e-2
    event_tol: float = 1e-13
    speed_tol: float = 1e-6
    out: str = ""
    svg: str = ""
    tolerance: Optional[float] = None

    def serialize(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        for section, keys in SECTIONS.items():
            cp[section] = {k: _to_text(getattr(self, k)) for k in keys}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue().rstrip("\n") + "\n"

    @classmethod
    def parse(cls, text: str) -> "ExperimentConfig":
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        try:
            cp.read_string(text)
        except configparser.Error as err:
            raise ConfigError(f"malformed config: {err}") from None
        values = {}
        known = {f.name: f for f in fields(cls)}
        for section in cp.sections():
            if section not in SECTIONS:
                raise ConfigError(f"unknown config section [{section}]")
            for key, raw in cp[section].items():
                if key not in SECTIONS[section]:
                    raise ConfigError(f"unknown key {key!r} in section [{section}]")
                values[key] = _from_text(known[key], raw)
        return cls(**values)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.parse(fh.read())

    def override(self, **kwargs) -> "ExperimentConfig":
        return replace(self, **{k: v for k, v in kwargs.items() if v is not None})

    def epsilons(self) -> np.ndarray:
        if not 0 < self.eps_max < 1 or self.eps_count < 1 or not 0 < self.eps_ratio < 1:
            raise ConfigError("eps grid needs 0 < eps_max < 1, eps_count >= 1, 0 < eps_ratio < 1")
        return self.eps_max * self.eps_ratio ** np.arange(self.eps_count)


def _to_text(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _from_text(f, raw: str):
    raw = raw.strip()
    kind = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
    try:
        if kind == "bool":
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "Optional[float]":
            return None if raw.lower() == "none" else float(raw)
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for {f.name}") from None
    return raw


# ---------------------------------------------------------------------------
# sigma specs: "start=<x1>[,<x2>];dir=<sign or vector>;L=<length>"


@dataclass(frozen=True)
class SigmaSpec:
    start: tuple
    direction: tuple
    L: float

    @classmethod
    def parse(cls, text: str, n: int) -> "SigmaSpec":
        parts = {}
        for item in text.split(";"):
            if not item.strip():
                continue
            key, eq, value = item.partition("=")
            if not eq:
                raise ex.ExpressionError("expected key=value in sigma spec", item.strip())
            parts[key.strip()] = value.strip()
        unknown = set(parts) - {"start", "dir", "L"}
        if unknown:
            raise ex.ExpressionError("unknown sigma key", sorted(unknown)[0])
        start = tuple(ex.evaluate_constant(s) for s in parts.get("start", ",".join(["0"] * n)).split(","))
        direction = tuple(ex.evaluate_constant(s) for s in parts.get("dir", "1").split(","))
        if "L" not in parts:
            raise ex.ExpressionError("sigma spec needs a length L", text)
        L = ex.evaluate_constant(parts["L"])
        if len(start) != n:
            raise ex.ExpressionError(f"sigma start needs {n} coordinate(s)", parts.get("start", ""))
        if len(direction) == 1 and n > 1:
            direction = (0.0,) * (n - 1) + (direction[0],)
        if len(direction) != n:
            raise ex.ExpressionError(f"sigma direction needs {n} component(s)", parts.get("dir", ""))
        if not L > 0:
            raise ex.ExpressionError("sigma length must be positive", parts["L"])
        return cls(start, direction, L)

    def build(self, chart: MetricChart) -> BoundaryGeodesic:
        xb = np.array(self.start, dtype=float)
        return integrate_boundary_geodesic(chart, xb, unit_tangent(chart, xb, np.array(self.direction)), self.L)


def build_chart(cfg: ExperimentConfig) -> MetricChart:
    return parse_chart(cfg.chart)


def build_sigma(cfg: ExperimentConfig, chart: MetricChart) -> BoundaryGeodesic:
    return SigmaSpec.parse(cfg.sigma, chart.n).build(chart)


def build_E(cfg: ExperimentConfig) -> TomographySet:
    return TomographySet.from_expression(cfg.E)


def parse_lambda_grid(text: str, L: float = math.pi, complex_default: bool = False) -> np.ndarray:
    """``a:b:n`` (linspace), a comma list of constants (``1+2j`` for complex), or empty for the default."""
    from .laplace1d import default_complex_grid, default_lambda_grid

    text = text.strip()
    if not text:
        return default_complex_grid(16) if complex_default else default_lambda_grid(L)
    if ":" in text:
        a, b, n = text.split(":")
        return np.linspace(ex.evaluate_constant(a), ex.evaluate_constant(b), int(n))
    vals = []
    for item in text.split(","):
        item = item.strip()
        if item.endswith("j"):
            try:
                vals.append(complex(item.replace(" ", "")))
            except ValueError:
                raise ex.ExpressionError("bad complex literal", item) from None
        else:
            vals.append(ex.evaluate_constant(item))
    return np.array(vals)
