"""Rate fits and limit extrapolation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


def fit_order(pairs: Sequence) -> tuple[float, float]:
    """Least-squares slope of log(error) against log(eps); returns (order, rms residual)."""
    arr = np.asarray(pairs, dtype=float)
    if arr.ndim != 2 or arr.shape[0] < 3 or arr.shape[1] != 2:
        raise ValueError("fit_order needs at least three (eps, error) pairs")
    eps, err = arr[:, 0], arr[:, 1]
    if np.any(eps <= 0) or np.any(err <= 0):
        raise ValueError("eps and errors must be positive")
    if np.ptp(np.log(eps)) == 0.0:
        raise ValueError("degenerate input: all eps identical")
    X = np.stack([np.log(eps), np.ones(len(eps))], axis=1)
    coef, *_ = np.linalg.lstsq(X, np.log(err), rcond=None)
    resid = np.log(err) - X @ coef
    return float(coef[0]), float(np.sqrt(np.mean(resid ** 2)))


@dataclass(frozen=True)
class Extrapolation:
    value: float
    error_band: float
    order: float
    order_residual: float
    method: str  # "richardson" or "smallest-eps"


def extrapolate(eps: Sequence[float], values: Sequence[float], expected_order: float = 1.0,
                order_window: float = 0.3, tail: int = 4) -> Extrapolation:
    """Limit of ``values`` as eps -> 0.

    The convergence order is fitted from successive differences over the
    ``tail`` smallest eps.  Within ``order_window`` of ``expected_order`` the
    last pair is Richardson-extrapolated with the fitted order; otherwise the
    smallest-eps value is returned with the last gap as its error band.
    """
    eps = np.asarray(eps, dtype=float)
    values = np.asarray(values, dtype=float)
    order = np.argsort(-eps)
    eps, values = eps[order], values[order]
    if len(values) == 0:
        raise ValueError("nothing to extrapolate")
    if len(values) == 1:
        return Extrapolation(float(values[0]), float("inf"), float("nan"), float("nan"), "smallest-eps")
    gap = abs(values[-1] - values[-2])
    p, res = float("nan"), float("nan")
    if len(values) >= 4:
        e = eps[-tail:]
        d = np.abs(np.diff(values[-tail:]))
        if np.all(d > 0):
            p, res = fit_order(np.stack([e[1:], d], axis=1))
    if np.isfinite(p) and abs(p - expected_order) <= order_window:
        r = (eps[-1] / eps[-2]) ** p
        value = values[-1] + (values[-1] - values[-2]) * r / (1.0 - r)
        return Extrapolation(float(value), float(abs(value - values[-1])), p, res, "richardson")
    return Extrapolation(float(values[-1]), float(gap), p, res, "smallest-eps")


def richardson(h: Sequence[float], values: Sequence[float], orders: Sequence[float]) -> float:
    """Eliminate error terms h^orders[0], h^orders[1], ... by repeated Richardson steps."""
    h = np.asarray(h, dtype=float)
    table = [np.asarray(values, dtype=float)]
    if len(orders) >= len(h):
        raise ValueError("need more samples than eliminated orders")
    for q, p in enumerate(orders):
        prev = table[-1]
        r = (h[1:len(prev)] / h[:len(prev) - 1]) ** p
        table.append((prev[1:] - r * prev[:-1]) / (1.0 - r))
    return float(table[-1][-1])
