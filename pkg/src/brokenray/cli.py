"""Command-line experiment runner: ``brokenray {trace,brt,reconstruct,laplace,selftest}``.

Exit codes: 0 all tolerances met, 1 tolerance failure, 2 parse error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import expr as ex
from .billiards import (PhaseState, TraceError, TraceSettings, bounce_intervals, launch_glancing, launch_state,
                        trace)
from .config import (ConfigError, ExperimentConfig, build_chart, build_E, build_sigma, parse_lambda_grid)
from .geometry import AdmissibilityError, disk_chart, integrate_boundary_geodesic, unit_tangent
from .laplace1d import (builtin_field, check_identities, exponential_moments, kernel_witness,
                        laplace_recover, rect_indicator, rotsym_kernel_witness, transform_I, attenuated)
from .numerics import fit_order
from .output import ray_figure, write_csv, write_events_csv, write_ray_csv
from .reconstruction import recover_k, stage_tolerance
from .transforms import ScalarField, WeightSpec, boundary_ray_transform, broken_ray_transform

EXIT_OK, EXIT_TOLERANCE, EXIT_PARSE, EXIT_RUNTIME = 0, 1, 2, 3

__all__ = ["main", "run", "fit_order", "RunResult", "selftest_checks"]


@dataclass
class RunResult:
    code: int
    lines: list = field(default_factory=list)
    artifacts: list = field(default_factory=list)


def _settings(cfg: ExperimentConfig) -> TraceSettings:
    return TraceSettings(steps_per_bounce=cfg.steps_per_bounce, max_step=cfg.max_step, event_tol=cfg.event_tol,
                         speed_tol=cfg.speed_tol)


def _field(cfg, chart) -> ScalarField:
    return ScalarField.from_expression(cfg.field, chart.dim, k_max=max(cfg.k, 0) + 1)


def _weight(cfg) -> WeightSpec:
    return WeightSpec.from_expressions(cfg.weight, cfg.atten)


def _verdict(ok: bool) -> str:
    return "PASS" if ok else "FAIL"


def run_trace(cfg: ExperimentConfig) -> RunResult:
    chart = build_chart(cfg)
    sigma = build_sigma(cfg, chart)
    ray = trace(chart, launch_state(sigma, cfg.eps_max), sigma.L, _settings(cfg))
    e = ray.energy()
    ev = ray.event_index
    jump = float(np.max(np.abs(e[ev + 1] - e[ev]))) if len(ev) else 0.0
    speed = chart.norm(ray.x[:, 0], ray.x[:, 1:], ray.v)
    drift = float(np.max(np.abs(speed - speed[0])))
    tol_jump = 1e-10 if cfg.tolerance is None else cfg.tolerance
    ok = jump <= tol_jump and drift <= cfg.speed_tol
    res = RunResult(EXIT_OK if ok else EXIT_TOLERANCE)
    res.lines += [f"chart {chart.name}: {len(ev)} reflections over t in [0, {sigma.L:.6g}]",
                  f"max energy jump at events {jump:.3e} (tol {tol_jump:.1e}) {_verdict(jump <= tol_jump)}",
                  f"max speed drift {drift:.3e} (tol {cfg.speed_tol:.1e}) {_verdict(drift <= cfg.speed_tol)}"]
    prov = cfg.serialize()
    if cfg.out:
        out = Path(cfg.out)
        res.artifacts.append(write_ray_csv(out, ray, prov))
        res.artifacts.append(write_events_csv(out.with_name(out.stem + ".events.csv"), ray, prov))
    if cfg.svg:
        res.artifacts.append(ray_figure(ray, cfg.svg))
    return res


def run_brt(cfg: ExperimentConfig) -> RunResult:
    chart = build_chart(cfg)
    sigma = build_sigma(cfg, chart)
    f, spec = _field(cfg, chart), _weight(cfg)
    fam = launch_glancing(chart, sigma, cfg.epsilons(), _settings(cfg), build_E(cfg), land=cfg.land)
    rows = []
    for j, m in enumerate(fam.members):
        if not m.ok:
            rows.append((j, m.eps, float("nan"), 0, float("nan")))
            continue
        ray = m.ray.truncate_at_last_zero(sigma.L)
        rows.append((j, m.eps, ray.duration, len(ray.event_index), broken_ray_transform(chart, spec, f, ray)))
    res = RunResult(EXIT_OK if all(m.ok for m in fam.members) else EXIT_RUNTIME)
    res.lines += [f"ray {r[0]}: eps={r[1]:.6g} duration={r[2]:.12g} events={r[3]} brt={r[4]:.12g}" for r in rows]
    if cfg.out:
        cols = [("ray", "id"), ("eps", "1"), ("duration", "length"), ("events", "count"), ("brt_value", "f*length")]
        res.artifacts.append(write_csv(cfg.out, cols, rows, cfg.serialize()))
    return res


def run_reconstruct(cfg: ExperimentConfig) -> RunResult:
    chart = build_chart(cfg)
    sigma = build_sigma(cfg, chart)
    E = build_E(cfg)
    f, spec = _field(cfg, chart), _weight(cfg)
    fam = launch_glancing(chart, sigma, cfg.epsilons(), _settings(cfg), E, land=cfg.land)
    rep = recover_k(chart, spec, f, sigma, fam, cfg.k, E, tolerance=cfg.tolerance, diagnostics=True)
    res = RunResult(EXIT_OK if rep.passed else EXIT_TOLERANCE)
    res.lines += [f"k={rep.k} sigma {rep.sigma_id}",
                  f"limit {rep.limit.value:.12g} ({rep.limit.method}, fitted order {rep.limit.order:.3f}, "
                  f"band {rep.limit.error_band:.3e})",
                  f"ground truth {rep.ground_truth:.12g}; relative error {rep.rel_error:.3e} "
                  f"(tol {rep.tolerance:.1e}) {_verdict(rep.passed)}"]
    if cfg.out:
        summary = [f"result: limit = {rep.limit.value!r}", f"result: ground_truth = {rep.ground_truth!r}",
                   f"result: rel_error = {rep.rel_error!r}", f"result: method = {rep.limit.method}",
                   f"result: fitted_order = {rep.limit.order!r} (residual {rep.limit.order_residual!r})",
                   f"result: normalization = {rep.normalization}", f"note: {rep.note}"]
        d = rep.diagnostics
        for name, (p, r) in d.orders.items():
            summary.append(f"diagnostic: {name} fitted order {p!r} (residual {r!r})")
        cols = [("eps", "1"), ("E0", "1"), ("L_n", "length"), ("raw_brt", "f*length"),
                ("taylor_corrected", "f*length"), ("estimate", "f*length"), ("flagged", "bool"),
                ("sup_depth", "length"), ("sup_rho_error", "1")]
        dmap = {e: j for j, e in enumerate(d.eps)}
        rows = [(r.eps, r.E0, r.L_n, r.raw_brt, r.corrected, r.estimate, r.flagged,
                 d.columns["sup_depth"][dmap[r.eps]], d.columns["sup_rho_error"][dmap[r.eps]]) for r in rep.rows]
        res.artifacts.append(write_csv(cfg.out, cols, rows, cfg.serialize() + "\n".join(summary)))
    if cfg.svg:
        res.artifacts.append(ray_figure(fam.ok_members()[0].ray, cfg.svg))
    return res


def run_laplace(cfg: ExperimentConfig) -> RunResult:
    mode = cfg.mode
    if mode == "recover":
        return _laplace_recover(cfg)
    lam = parse_lambda_grid(cfg.lambda_grid, complex_default=True)
    f = builtin_field(cfg.planar_field)
    res = RunResult(EXIT_OK)
    if mode == "transform":
        vals = np.atleast_1d(transform_I(f, lam))
        res.lines += [f"I[{f.name}]({complex(l):.4g}) = {complex(v):.12g}" for l, v in zip(lam, vals)]
        rows = [(complex(l).real, complex(l).imag, v.real, v.imag) for l, v in zip(lam, vals)]
        cols = [("lambda_re", "1/length"), ("lambda_im", "1/length"), ("I_re", "area"), ("I_im", "area")]
    elif mode == "identities":
        tol = 1e-6 if cfg.tolerance is None else cfg.tolerance
        rep = check_identities(f, 1.7, 1 + 1j, rect_indicator(0.0, 0.5, 0.0, 0.5), lam, tol)
        rows = [("scaling", rep.scaling_error, tol), ("translation", rep.translation_error, tol),
                ("convolution", rep.convolution_error, tol)]
        res.lines += [f"{n}: max relative defect {e:.3e} (tol {t:.1e}) {_verdict(e <= t)}" for n, e, t in rows]
        cols = [("identity", "name"), ("max_defect", "1"), ("tolerance", "1")]
        res.code = EXIT_OK if rep.passed else EXIT_TOLERANCE
    elif mode == "witness":
        tol = 1e-6 if cfg.tolerance is None else cfg.tolerance
        if cfg.planar_field == "annulus":
            rep = rotsym_kernel_witness(lambda r: np.where(r < 1, 1.0, 0.0) - 4.0 * np.where(r < 0.5, 1.0, 0.0),
                                        [0.5, 1.0], 0.0, lam, tol)
        else:
            rep = kernel_witness(f, lam, tol)
        res.lines.append(f"max |I f| over {len(lam)} lambdas = {rep.max_abs:.3e} (tol {tol:.1e}) "
                         f"{_verdict(rep.passed)}")
        rows = [(complex(l).real, complex(l).imag, abs(v)) for l, v in zip(rep.lambdas, rep.values)]
        cols = [("lambda_re", "1/length"), ("lambda_im", "1/length"), ("abs_I", "area")]
        res.code = EXIT_OK if rep.passed else EXIT_TOLERANCE
    else:
        raise ConfigError(f"unknown laplace mode {mode!r}; choose recover, transform, identities or witness")
    if cfg.out:
        res.artifacts.append(write_csv(cfg.out, cols, rows, cfg.serialize()))
    return res


def _laplace_recover(cfg: ExperimentConfig) -> RunResult:
    chart = build_chart(cfg)
    sigma = build_sigma(cfg, chart)
    f, base = _field(cfg, chart), _weight(cfg)
    lam = parse_lambda_grid(cfg.lambda_grid, L=sigma.L)
    fam = launch_glancing(chart, sigma, cfg.epsilons(), _settings(cfg), build_E(cfg), land=cfg.land)
    ms = exponential_moments(chart, base, f, sigma, lam, fam, bins=cfg.bins, E=build_E(cfg))
    truth = np.array([boundary_ray_transform(chart, attenuated(base, float(l)), sigma, f.normal_derivative(0), 0)
                      for l in lam])
    err = float(np.max(np.abs(ms.moments - truth) / np.maximum(np.abs(truth), 1e-300)))
    tol = stage_tolerance(0) if cfg.tolerance is None else cfg.tolerance
    rec = laplace_recover(ms, residual_tol=None)
    res = RunResult(EXIT_OK if err <= tol else EXIT_TOLERANCE)
    res.lines += [f"max relative moment error {err:.3e} (tol {tol:.1e}) {_verdict(err <= tol)}",
                  f"bin fit residual {rec.residual:.3e}, condition {rec.condition:.3g}"]
    res.lines += [f"bin [{a:.6g}, {b:.6g}]: {v:.10g}" for a, b, v in zip(rec.edges[:-1], rec.edges[1:], rec.values)]
    if cfg.out:
        cols = [("s_lo", "length"), ("s_hi", "length"), ("value", "f")]
        rows = list(zip(rec.edges[:-1], rec.edges[1:], rec.values))
        res.artifacts.append(write_csv(cfg.out, cols, rows, cfg.serialize()))
    return res


# ---------------------------------------------------------------------------
# selftest: exact chord oracles in the unit disk


def selftest_checks(theta: float = 0.1, bounces: int = 50) -> list:
    """(name, value, tolerance) triples; a check passes when value <= tolerance."""
    chart = disk_chart()
    s, c = math.sin(theta), math.cos(theta)
    start = PhaseState(0.0, np.array([0.0, 0.0]), np.array([s, c]))
    ray = trace(chart, start, bounces * 2 * s + 1e-9)
    j = np.arange(1, len(ray.event_index) + 1)
    checks = [("event count", float(abs(len(j) - bounces)), 0.0),
              ("reflection times", float(np.max(np.abs(ray.event_times - 2 * s * j))), 1e-8),
              ("reflection positions", float(np.max(np.abs(ray.x[ray.event_index, 1] - 2 * theta * j))), 1e-8)]
    e = ray.energy()
    checks.append(("launch energy", abs(e[0] - 0.5 * s * s), 1e-15))
    # along the first chord r = |position| = sqrt(1 - 2 t s + t^2), v0 = (s - t) / r, II = (1 - v0^2) / r
    first = slice(0, ray.event_index[0] + 1)
    tt = ray.t[first]
    r = np.sqrt(1.0 - 2.0 * tt * s + tt * tt)
    v0 = (s - tt) / r
    exact = 0.5 * v0 ** 2 + (1.0 - r) * (1.0 - v0 ** 2) / r
    checks.append(("energy along chord", float(np.max(np.abs(e[first] - exact))), 1e-10))
    ev = ray.event_index
    checks.append(("energy jump at events", float(np.max(np.abs(e[ev + 1] - e[ev]))), 1e-10))
    bt = bounce_intervals(ray)
    checks.append(("bounce time", float(np.max(np.abs(bt.tau - 2 * s))), 1e-8))
    checks.append(("bounce deviation", float(np.max(np.abs(bt.deviation - s * s))), 1e-8))
    one = trace(chart, start, 2 * s + 1e-9).truncate_at_last_zero()
    spec = WeightSpec.trivial()
    checks.append(("chord length", abs(broken_ray_transform(chart, spec, ScalarField.from_expression("1"), one)
                                       - 2 * s), 1e-10))
    depth = broken_ray_transform(chart, spec, ScalarField.from_expression("x0"), one)
    checks.append(("chord depth integral", abs(depth - (s - c * c * math.atanh(s))), 1e-10))
    pairs = []
    for th in 0.2 * 0.5 ** np.arange(5):
        r = trace(chart, PhaseState(0.0, np.array([0.0, 0.0]), np.array([math.sin(th), math.cos(th)])),
                  6 * math.sin(th) + 1e-9)
        pairs.append((0.5 * math.sin(th) ** 2, float(np.mean(bounce_intervals(r).deviation))))
    p, _ = fit_order(pairs)
    checks.append(("bounce deviation order in E(0)", abs(p - 1.0), 0.05))
    sigma = integrate_boundary_geodesic(chart, np.array([0.0]), unit_tangent(chart, np.array([0.0]), np.array([1.0])),
                                        math.pi)
    fam = launch_glancing(chart, sigma, [2.0 ** -3, 2.0 ** -4, 2.0 ** -5, 2.0 ** -6])
    rep = recover_k(chart, spec, ScalarField.from_expression("1"), sigma, fam, 0)
    checks.append(("k=0 recovery of pi", rep.rel_error, 1e-3))
    return checks


def run_selftest(cfg: ExperimentConfig) -> RunResult:
    checks = selftest_checks()
    ok = all(v <= t for _, v, t in checks)
    res = RunResult(EXIT_OK if ok else EXIT_TOLERANCE)
    res.lines += [f"{_verdict(v <= t)} {name}: {v:.3e} (tol {t:.1e})" for name, v, t in checks]
    if cfg.out:
        cols = [("check", "name"), ("value", "1"), ("tolerance", "1"), ("passed", "bool")]
        res.artifacts.append(write_csv(cfg.out, cols, [(n, v, t, v <= t) for n, v, t in checks], cfg.serialize()))
    return res


COMMANDS = {"trace": run_trace, "brt": run_brt, "reconstruct": run_reconstruct, "laplace": run_laplace,
            "selftest": run_selftest}


def run(cfg: ExperimentConfig) -> RunResult:
    try:
        command = COMMANDS[cfg.command]
    except KeyError:
        raise ConfigError(f"unknown command {cfg.command!r}") from None
    return command(cfg)


# ---------------------------------------------------------------------------
# argument parsing


FLAG_MAP = {"chart": "chart", "sigma": "sigma", "E": "E", "field": "field", "weight": "weight", "atten": "atten",
            "k": "k", "eps_max": "eps_max", "eps_count": "eps_count", "out": "out", "svg": "svg", "mode": "mode",
            "planar_field": "planar_field", "lambda_grid": "lambda_grid", "bins": "bins", "tolerance": "tolerance",
            "steps_per_bounce": "steps_per_bounce", "max_step": "max_step"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="brokenray", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="experiment config file (flags override it)")
        p.add_argument("--chart", help="disk | flat | sphere-band | band[:kappa=EXPR;h=H] | metric:g11=..")
        p.add_argument("--sigma", help="boundary geodesic, e.g. 'start=0;dir=1;L=pi'")
        p.add_argument("--E", help="tomography set predicate phi(x1, x2) >= 0, or 'all'")
        p.add_argument("--field", help="scalar field expression in x0, x1[, x2]")
        p.add_argument("--weight", help="weight w(x, v) expression")
        p.add_argument("--atten", help="attenuation a(x, v) expression")
        p.add_argument("--k", type=int, help="normal derivative order")
        p.add_argument("--eps-max", dest="eps_max", type=float)
        p.add_argument("--eps-count", dest="eps_count", type=int)
        p.add_argument("--steps-per-bounce", dest="steps_per_bounce", type=int)
        p.add_argument("--max-step", dest="max_step", type=float)
        p.add_argument("--tolerance", type=float)
        p.add_argument("--out", help="CSV output path")
        p.add_argument("--svg", help="SVG figure path (2-D charts)")
        if name == "laplace":
            p.add_argument("--mode", choices=["recover", "transform", "identities", "witness"])
            p.add_argument("--planar-field", "--field-name", dest="planar_field",
                           help="built-in planar field: two-squares, annulus, disk, bump, square")
            p.add_argument("--lambda-grid", dest="lambda_grid", help="'a:b:n' or a comma list (1+2j for complex)")
            p.add_argument("--bins", type=int)
    return parser


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    overrides = {key: getattr(args, attr, None) for attr, key in FLAG_MAP.items()}
    return cfg.override(command=args.command, **overrides)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
        ex.parse(cfg.field, ("x0", "x1", "x2"))
        ex.parse(cfg.weight)
        ex.parse(cfg.atten)
        result = run(cfg)
    except (ex.ExpressionError, ConfigError, OSError) as err:
        print(f"brokenray: error: {err}", file=sys.stderr)
        return EXIT_PARSE
    except (TraceError, AdmissibilityError, ArithmeticError, RuntimeError, ValueError) as err:
        print(f"brokenray: runtime error: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    for line in result.lines:
        print(line)
    for path in result.artifacts:
        print(f"wrote {path}")
    return result.code


if __name__ == "__main__":
    sys.exit(main())
