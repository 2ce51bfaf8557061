"""Command-line runner: ``solve | obstacle | verify | sweep``.

Configuration is a flat ``key = value`` file with ``#`` comments.  Exit codes:
0 success, 1 verification failure (or a failed sweep cell), 2 solver error,
3 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Sequence

from .errors import ConfigError, ConflictError, SingularEllipticError
from .expr import Expression
from .grid import (
    build_grid,
    h1_seminorm_sq,
    parse_domain,
    power_field,
    read_field_csv,
    reflect,
    write_field_csv,
)
from .solver import ContinuationSchedule, Problem, solve_singular
from .variational import ObstacleProblem, TruncationParams, minimize_obstacle
from .verify import (
    VerificationCase,
    comparison_family,
    q_exponent,
    run_suite,
    write_reports,
)

log = logging.getLogger("singular_elliptic")

SUBCOMMANDS = ("solve", "obstacle", "verify", "sweep")
CASE_KINDS = ("uniqueness", "comparison", "symmetry", "scaling", "boundary_exponent", "energy_class")
EXIT_OK, EXIT_FAIL, EXIT_SOLVER, EXIT_CONFIG = 0, 1, 2, 3


def _float_list(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.split(",") if t.strip())


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.split(",") if t.strip())


def _str_list(text: str) -> tuple[str, ...]:
    return tuple(t.strip() for t in text.split(",") if t.strip())


def _optional_float(text: str) -> float | None:
    return None if text.strip().lower() == "auto" else float(text)


def _optional_str(text: str) -> str | None:
    return text.strip() or None


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved run configuration (defaults applied, values validated)."""

    subcommand: str
    domain: str
    beta: float
    f: str | None = None
    f_csv: str | None = None
    m: int = 129
    n0: float = 1.0
    rho: float = 2.0
    n_max: float = 2.0**40
    interior_tol: float = 1e-8
    margin: float | None = None
    newton_tol: float = 1e-11
    max_newton_iters: int = 100
    damping: float = 0.5
    out: str = "out"
    seed: int = 0
    # obstacle
    k: float = 1e4
    obstacle_tol: float = 1e-10
    # verify
    cases: tuple[str, ...] = ()
    uniqueness_tol: float = 1e-6
    comparison_tol: float = 1e-9
    comparison_eps: float = 0.05
    comparison_pairs: int = 0
    symmetry_tol: float = 1e-10
    scaling_lambdas: tuple[float, ...] = (3.0,)
    scaling_tol: float = 1e-7
    exponent_m: int = 1025
    exponent_window: tuple[int, ...] = (2, 32)
    exponent_tol: float = 0.05
    energy_ladder: tuple[int, ...] = (65, 129, 257, 513)
    # sweep
    sweep_beta: tuple[float, ...] = ()
    sweep_m: tuple[int, ...] = ()
    sweep_rho: tuple[float, ...] = ()
    workers: int = 1

    def schedule(self, rho: float | None = None) -> ContinuationSchedule:
        return ContinuationSchedule(
            n0=self.n0,
            rho=self.rho if rho is None else rho,
            n_max=self.n_max,
            interior_tol=self.interior_tol,
            margin=self.margin,
            newton_tol=self.newton_tol,
            max_newton_iters=self.max_newton_iters,
            damping=self.damping,
        )

    def problem(self, m: int | None = None, beta: float | None = None) -> Problem:
        domain = parse_domain(self.domain)
        m = self.m if m is None else m
        beta = self.beta if beta is None else beta
        if self.f_csv is not None:
            return Problem.build(domain, m, beta, read_field_csv(self.f_csv, build_grid(domain, m)))
        return Problem.build(domain, m, beta, Expression(self.f))

    def to_text(self) -> str:
        lines = []
        for fd in fields(self):
            val = getattr(self, fd.name)
            if val is None and fd.name in ("f", "f_csv"):
                continue
            lines.append(f"{fd.name} = {_format(val)}")
        return "\n".join(lines) + "\n"


def _format(val) -> str:
    if val is None:
        return "auto"
    if isinstance(val, tuple):
        return ", ".join(_format(v) for v in val)
    if isinstance(val, float):
        return repr(val)
    return str(val)


_PARSERS = {
    "subcommand": str.strip,
    "domain": str.strip,
    "beta": float,
    "f": _optional_str,
    "f_csv": _optional_str,
    "m": int,
    "n0": float,
    "rho": float,
    "n_max": float,
    "interior_tol": float,
    "margin": _optional_float,
    "newton_tol": float,
    "max_newton_iters": int,
    "damping": float,
    "out": str.strip,
    "seed": int,
    "k": float,
    "obstacle_tol": float,
    "cases": _str_list,
    "uniqueness_tol": float,
    "comparison_tol": float,
    "comparison_eps": float,
    "comparison_pairs": int,
    "symmetry_tol": float,
    "scaling_lambdas": _float_list,
    "scaling_tol": float,
    "exponent_m": int,
    "exponent_window": _int_list,
    "exponent_tol": float,
    "energy_ladder": _int_list,
    "sweep_beta": _float_list,
    "sweep_m": _int_list,
    "sweep_rho": _float_list,
    "workers": int,
}
assert set(_PARSERS) == {fd.name for fd in fields(RunConfig)}


def parse_text(text: str) -> dict[str, tuple[str, int]]:
    """``key -> (raw value, line number)``; syntax errors carry the line number."""
    out: dict[str, tuple[str, int]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        if key not in _PARSERS:
            raise ConfigError(f"unknown key {key!r}", lineno)
        if key in out:
            raise ConfigError(f"duplicate key {key!r}", lineno)
        out[key] = (value.strip(), lineno)
    return out


def resolve(entries: dict[str, tuple[str, int | None]]) -> RunConfig:
    values = {}
    for key, (raw, lineno) in entries.items():
        try:
            values[key] = _PARSERS[key](raw)
        except ValueError:
            raise ConfigError(f"bad value {raw!r} for {key!r}", lineno) from None
    for key in ("subcommand", "domain", "beta"):
        if key not in values:
            raise ConfigError(f"missing required key {key!r}")
    cfg = RunConfig(**values)
    _validate(cfg, {k: ln for k, (_, ln) in entries.items()})
    return cfg


def _validate(cfg: RunConfig, lines: dict[str, int | None]) -> None:
    def bad(key, msg):
        raise ConfigError(f"{key}: {msg}", lines.get(key))

    if cfg.subcommand not in SUBCOMMANDS:
        bad("subcommand", f"must be one of {', '.join(SUBCOMMANDS)}")
    try:
        parse_domain(cfg.domain)
    except SingularEllipticError as exc:
        bad("domain", str(exc))
    if not (math.isfinite(cfg.beta) and cfg.beta > 0):
        bad("beta", f"must be positive, got {cfg.beta}")
    if cfg.m < 3:
        bad("m", f"must be >= 3, got {cfg.m}")
    if (cfg.f is None) == (cfg.f_csv is None):
        raise ConflictError("exactly one of 'f' and 'f_csv' must be given", lines.get("f_csv") or lines.get("f"))
    if cfg.f is not None:
        try:
            Expression(cfg.f)
        except SingularEllipticError as exc:
            bad("f", str(exc))
    if cfg.f_csv is not None and not Path(cfg.f_csv).is_file():
        bad("f_csv", f"file not found: {cfg.f_csv}")
    try:
        cfg.schedule()
    except SingularEllipticError as exc:
        raise ConfigError(f"schedule: {exc}") from None
    unknown = set(cfg.cases) - set(CASE_KINDS) - {"auto"}
    if unknown:
        bad("cases", f"unknown case kinds {sorted(unknown)}")
    if len(cfg.exponent_window) != 2:
        bad("exponent_window", "needs two node offsets")
    if cfg.workers < 1:
        bad("workers", "must be >= 1")


def parse_config(
    path: str | Path | None = None,
    subcommand: str | None = None,
    out: str | None = None,
    overrides: Sequence[str] = (),
) -> RunConfig:
    """Merge a config file with command-line values.

    ``--override key=value`` replaces file values; ``subcommand`` and ``out``
    given on the command line must agree with the file if it sets them.
    """
    entries: dict[str, tuple[str, int | None]] = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        entries.update(parse_text(text))
    for key, value in (("subcommand", subcommand), ("out", out)):
        if value is None:
            continue
        if key in entries and entries[key][0] != value:
            raw, lineno = entries[key]
            raise ConflictError(f"command line {key}={value!r} contradicts file value {raw!r}", lineno)
        entries[key] = (value, None)
    for item in overrides:
        key, sep, value = item.partition("=")
        key = key.strip()
        if not sep or key not in _PARSERS:
            raise ConfigError(f"bad override {item!r}")
        entries[key] = (value.strip(), None)
    return resolve(entries)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def run_solve(cfg: RunConfig, out: Path) -> int:
    rep = solve_singular(cfg.problem(), cfg.schedule())
    write_field_csv(rep.u, out / "u.csv")
    _write_json(out / "report.json", rep.to_dict())
    log.info(
        "solve: final n=%g, interior min=%.6g, %d Newton iterations",
        rep.final_n or 0,
        rep.interior_min,
        rep.newton_iterations,
    )
    return EXIT_OK


def run_obstacle(cfg: RunConfig, out: Path) -> int:
    """Obstacle minimization with the singular solution as the obstacle."""
    problem = cfg.problem()
    v = solve_singular(problem, cfg.schedule()).u
    res = minimize_obstacle(ObstacleProblem(problem.f, v, TruncationParams(cfg.k, cfg.beta)), tol=cfg.obstacle_tol)
    write_field_csv(v, out / "obstacle.csv")
    write_field_csv(res.w, out / "w.csv")
    _write_json(out / "obstacle_report.json", res.to_dict())
    log.info("obstacle: %d iterations, KKT residual %.3e", res.iterations, res.kkt)
    return EXIT_OK


def _symmetric_axes(problem: Problem) -> list[int]:
    if problem.domain.radial:
        return [0]
    return [ax for ax in range(problem.domain.dim) if problem.f.sup_distance(reflect(problem.f, ax)) <= 1e-13]


def build_cases(cfg: RunConfig) -> list[VerificationCase]:
    problem = cfg.problem()
    schedule = cfg.schedule()
    kinds = list(cfg.cases) or ["auto"]
    if "auto" in kinds:
        auto = ["uniqueness", "scaling"]
        if cfg.beta > 1:
            auto.insert(1, "comparison")
        if _symmetric_axes(problem):
            auto.append("symmetry")
        kinds = [k for k in kinds if k != "auto"] + [k for k in auto if k not in kinds]
    cases = []
    for kind in kinds:
        if kind == "uniqueness":
            cases.append(VerificationCase("uniqueness", kind, problem, {"tol": cfg.uniqueness_tol}))
        elif kind == "comparison":
            opts = {"sub": problem.with_source_scale(0.5), "tol": cfg.comparison_tol, "eps": cfg.comparison_eps,
                    "k": cfg.k, "schedule": schedule}
            cases.append(VerificationCase("comparison_half_f", kind, problem, opts))
        elif kind == "symmetry":
            axes = list(range(problem.domain.dim))
            cases.append(VerificationCase("symmetry", kind, problem,
                                          {"axes": axes, "tol": cfg.symmetry_tol, "schedule": schedule}))
        elif kind == "scaling":
            for lam in cfg.scaling_lambdas:
                cases.append(VerificationCase(f"scaling_lambda{lam:g}", kind, problem,
                                              {"lam": lam, "tol": cfg.scaling_tol, "schedule": schedule}))
        elif kind == "boundary_exponent":
            fine = problem.at_resolution(cfg.exponent_m)
            cases.append(VerificationCase("boundary_exponent", kind, fine,
                                          {"window": tuple(cfg.exponent_window), "tol": cfg.exponent_tol,
                                           "schedule": schedule}))
        elif kind == "energy_class":
            cases.append(VerificationCase("energy_class", kind, problem,
                                          {"ladder": cfg.energy_ladder, "schedule": schedule}))
    if cfg.comparison_pairs:
        cases.extend(comparison_family(cfg.comparison_pairs, cfg.seed, cfg.beta, cfg.m, cfg.comparison_eps, cfg.k))
    return cases


def run_verify(cfg: RunConfig, out: Path) -> int:
    reports = run_suite(build_cases(cfg), workers=cfg.workers)
    write_reports(reports, out)
    failed = [r.case_id for r in reports if not r.passed]
    for r in reports:
        log.info("%s: %s%s", r.case_id, "pass" if r.passed else "FAIL", f" ({r.note})" if r.note else "")
    return EXIT_FAIL if failed else EXIT_OK


SWEEP_COLUMNS = ("beta", "m", "rho", "status", "interior_min", "energy", "power_energy", "final_n",
                 "newton_iterations", "error")


def sweep_cell(cfg: RunConfig, beta: float, m: int, rho: float) -> tuple[dict, float]:
    """One sweep row and its wall time; errors are recorded, not raised."""
    start = time.perf_counter()
    row = {"beta": repr(beta), "m": m, "rho": repr(rho)}
    try:
        rep = solve_singular(cfg.problem(m=m, beta=beta), cfg.schedule(rho=rho))
        row.update(
            status="ok",
            interior_min=f"{rep.interior_min:.17g}",
            energy=f"{h1_seminorm_sq(rep.u):.17g}",
            power_energy=f"{h1_seminorm_sq(power_field(rep.u, q_exponent(beta))):.17g}",
            final_n=f"{rep.final_n or 0:.17g}",
            newton_iterations=rep.newton_iterations,
            error="",
        )
    except SingularEllipticError as exc:
        row.update(status="error", interior_min="", energy="", power_energy="", final_n="",
                   newton_iterations="", error=f"{type(exc).__name__}: {exc}")
    return row, time.perf_counter() - start


def _sweep_cell_args(args):
    return sweep_cell(*args)


def sweep(cfg: RunConfig) -> tuple[list[dict], list[float]]:
    """Rows for the cartesian product of the sweep lists, in key order."""
    keys = list(itertools.product(cfg.sweep_beta or (cfg.beta,), cfg.sweep_m or (cfg.m,), cfg.sweep_rho or (cfg.rho,)))
    jobs = [(cfg, b, m, r) for b, m, r in keys]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_sweep_cell_args, jobs))
    else:
        results = [sweep_cell(*j) for j in jobs]
    return [r for r, _ in results], [t for _, t in results]


def _table(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def run_sweep(cfg: RunConfig, out: Path) -> int:
    rows, times = sweep(cfg)
    (out / "sweep.csv").write_text(_table(SWEEP_COLUMNS, rows))
    # wall times vary between runs, so they live apart from the summary
    timing = [{"beta": r["beta"], "m": r["m"], "rho": r["rho"], "seconds": f"{t:.3f}"} for r, t in zip(rows, times)]
    (out / "sweep_timing.csv").write_text(_table(("beta", "m", "rho", "seconds"), timing))
    errors = sum(r["status"] != "ok" for r in rows)
    log.info("sweep: %d rows, %d errors", len(rows), errors)
    return EXIT_FAIL if errors else EXIT_OK


_RUNNERS = {"solve": run_solve, "obstacle": run_obstacle, "verify": run_verify, "sweep": run_sweep}


def run(cfg: RunConfig) -> int:
    """Execute ``cfg.subcommand``; returns the process exit code."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.to_text())
    handler = logging.FileHandler(out / "run.log", mode="w")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    log.addHandler(handler)
    try:
        return _RUNNERS[cfg.subcommand](cfg, out)
    except SingularEllipticError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_SOLVER
    finally:
        log.removeHandler(handler)
        handler.close()


def _setup_logging() -> None:
    level = os.environ.get("SE_LOG", "info").strip().lower()
    levels = {"debug": logging.DEBUG, "info": logging.INFO, "quiet": logging.ERROR}
    if level not in levels:
        raise ConfigError(f"SE_LOG must be one of {', '.join(levels)}, got {level!r}")
    log.setLevel(logging.DEBUG if level == "debug" else logging.INFO)
    if not any(getattr(h, "_se_console", False) for h in log.handlers):
        console = logging.StreamHandler(sys.stderr)
        console._se_console = True
        log.addHandler(console)
    for h in log.handlers:
        if getattr(h, "_se_console", False):
            h.setLevel(levels[level])


def main(argv: Sequence[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="singular-elliptic", description=__doc__.splitlines()[0])
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", required=True, metavar="PATH")
    ap.add_argument("--out", metavar="DIR")
    ap.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    args = ap.parse_args(argv)
    try:
        _setup_logging()
        cfg = parse_config(args.config, args.subcommand, args.out, args.override)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return run(cfg)


__all__ = ["RunConfig", "parse_config", "parse_text", "resolve", "run", "sweep", "main", "build_cases"]
