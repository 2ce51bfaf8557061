"""Property checks for the discrete singular problem.

Each check returns a :class:`VerificationReport`: a set of named
discrepancies, each with a tolerance, plus free-form artifacts.  A report
passes exactly when every discrepancy is at most its tolerance.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ContractError, PreconditionError, SingularEllipticError, WindowError
from .grid import Interval, ScalarField, h1_seminorm_sq, power_field, reflect
from .solver import (
    ContinuationSchedule,
    Problem,
    SolveReport,
    default_init,
    relative_residual,
    solve_at_n,
    solve_singular,
)
from .variational import TruncationParams, comparison_certificate

log = logging.getLogger(__name__)


@dataclass
class VerificationReport:
    case_id: str
    kind: str
    discrepancies: dict[str, float] = field(default_factory=dict)
    tolerances: dict[str, float] = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict)
    note: str = ""

    def add(self, name: str, value: float, tol: float) -> None:
        self.discrepancies[name] = float(value)
        self.tolerances[name] = float(tol)

    @property
    def passed(self) -> bool:
        return bool(self.discrepancies) and all(
            self.discrepancies[k] <= self.tolerances[k] for k in self.discrepancies
        )

    def to_dict(self) -> dict:
        return _jsonable(
            {
                "case_id": self.case_id,
                "kind": self.kind,
                "passed": self.passed,
                "discrepancies": self.discrepancies,
                "tolerances": self.tolerances,
                "artifacts": self.artifacts,
                "note": self.note,
            }
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


@dataclass(frozen=True, eq=False)
class VerificationCase:
    """A check to run: ``kind`` names the function, ``options`` its arguments."""

    case_id: str
    kind: str
    problem: Problem
    options: dict = field(default_factory=dict)


def half_max_init(problem: Problem) -> ScalarField:
    """Constant ``max(default_init) / 2`` at interior nodes, zero on the boundary."""
    base = default_init(problem)
    vals = np.where(problem.grid.boundary, 0.0, 0.5 * base.max())
    return base.with_values(vals)


def uniqueness_check(
    problem: Problem,
    inits: Sequence[ScalarField | None] | None = None,
    schedules: Sequence[ContinuationSchedule] | None = None,
    tol: float = 1e-6,
    case_id: str = "uniqueness",
) -> VerificationReport:
    """Solve from every (init, schedule) pair and compare the results pairwise."""
    if inits is None:
        inits = [default_init(problem), half_max_init(problem)]
    if schedules is None:
        schedules = [ContinuationSchedule(rho=2.0), ContinuationSchedule(rho=4.0)]
    combos = list(itertools.product(range(len(inits)), range(len(schedules))))
    if len(combos) < 2:
        raise ContractError("uniqueness needs at least two (init, schedule) combinations")
    runs = [solve_singular(problem, schedules[s], inits[i]) for i, s in combos]
    mask = problem.grid.margin_mask(schedules[0].margin_for(problem.grid))
    worst, bitwise = 0.0, []
    for a, b in itertools.combinations(range(len(runs)), 2):
        worst = max(worst, runs[a].u.sup_distance(runs[b].u, mask))
        bitwise.append(bool(np.array_equal(runs[a].u.values, runs[b].u.values)))
    rep = VerificationReport(case_id, "uniqueness")
    rep.add("max_pairwise_interior_diff", worst, tol)
    rep.artifacts = {
        "combinations": [{"init": i, "rho": schedules[s].rho} for i, s in combos],
        "final_n": [r.final_n for r in runs],
        "newton_iterations": [r.newton_iterations for r in runs],
        "bitwise_equal_pairs": bitwise,
    }
    return rep


def _same_final_n(problem: Problem, rep: SolveReport, n: float, schedule) -> ScalarField:
    if rep.final_n is None or rep.final_n == n:
        return rep.u
    return solve_at_n(problem, n, rep.u, schedule)


def comparison_check(
    sub: Problem | ScalarField,
    sup: Problem,
    tol: float = 1e-9,
    eps: float = 0.05,
    k: float = 1e4,
    tau: float = 1.0,
    certificate_tol: float = 1e-8,
    subsolution_tol: float = 1e-6,
    schedule: ContinuationSchedule | None = None,
    case_id: str = "comparison",
) -> VerificationReport:
    """Check ``u_sub <= u_sup`` and evaluate the comparison certificate.

    ``sub`` is either a problem with a smaller source (its solution is then a
    subsolution of ``sup``) or an explicit field, which is first verified to be
    a discrete subsolution.  Two solved problems are compared at the same final
    regularization index.
    """
    beta = sup.beta
    if not beta > 1:
        raise PreconditionError(f"comparison needs beta > 1, got {beta}")
    schedule = schedule or ContinuationSchedule()
    rep_sup = solve_singular(sup, schedule)
    if isinstance(sub, Problem):
        if not sub.grid.same_as(sup.grid) or sub.beta != beta:
            raise PreconditionError("sub and super problems must share grid and beta")
        if np.any(sub.f.values > sup.f.values):
            raise PreconditionError("comparison needs f_sub <= f_sup pointwise")
        rep_sub = solve_singular(sub, schedule)
        n = max(rep_sub.final_n or 0, rep_sup.final_n or 0)
        u_sub = _same_final_n(sub, rep_sub, n, schedule)
        u_sup = _same_final_n(sup, rep_sup, n, schedule)
    else:
        u_sub, u_sup = sub, rep_sup.u
    sub_res = relative_residual(u_sub, sup)
    over = u_sub.values - u_sup.values
    cert = comparison_certificate(u_sub, u_sup, sup.f, TruncationParams(k, beta), eps, tau)
    rep = VerificationReport(case_id, "comparison")
    rep.add("subsolution_residual", max(float(sub_res.max(initial=0.0)), 0.0), subsolution_tol)
    rep.add("max_sub_minus_super", float(over.max()), tol)
    rep.add("certificate_gradient_term", cert.gradient_term, certificate_tol)
    rep.add("certificate_f_term", cert.f_term, certificate_tol)
    rep.artifacts = {
        "violating_nodes": int(np.count_nonzero(over > tol)),
        "certificate": cert.to_dict(),
        "final_n": rep_sup.final_n,
    }
    return rep


def symmetry_check(
    problem: Problem,
    axes: int | Sequence[int] = 0,
    tol: float = 1e-10,
    schedule: ContinuationSchedule | None = None,
    case_id: str = "symmetry",
) -> VerificationReport:
    """``|u - reflect(u)|_inf`` for every axis (and all axes combined)."""
    rep = VerificationReport(case_id, "symmetry")
    if problem.domain.radial:
        # the radial profile is the whole solution
        rep.add("reflection_discrepancy", 0.0, tol)
        rep.note = "radial representation: symmetric by construction"
        return rep
    axes = [axes] if isinstance(axes, int) else list(axes)
    for ax in axes:
        asym = problem.f.sup_distance(reflect(problem.f, ax))
        if asym > 1e-13:
            raise PreconditionError(f"f is not symmetric about axis {ax} (|f - Rf| = {asym:.3e})")
    u = solve_singular(problem, schedule).u
    for ax in axes:
        rep.add(f"axis{ax}", u.sup_distance(reflect(u, ax)), tol)
    if len(axes) > 1:
        twice = u
        for ax in axes:
            twice = reflect(twice, ax)
        rep.add("all_axes", u.sup_distance(twice), tol)
    return rep


def scaling_check(
    problem: Problem,
    lam: float,
    tol: float = 1e-7,
    schedule: ContinuationSchedule | None = None,
    case_id: str = "scaling",
) -> VerificationReport:
    """Compare ``solve(lam**(1+beta) f)`` with ``lam * solve(f)``.

    The stopping tolerance is divided by ``max(1, lam)`` because the error of
    ``lam * solve(f)`` is ``lam`` times the continuation error.
    """
    if not lam > 0:
        raise ContractError(f"lambda must be positive, got {lam}")
    schedule = schedule or ContinuationSchedule()
    schedule = replace(schedule, interior_tol=schedule.interior_tol / max(1.0, lam))
    base = solve_singular(problem, schedule)
    scaled = solve_singular(problem.with_source_scale(lam ** (1 + problem.beta)), schedule)
    rep = VerificationReport(case_id, "scaling")
    rep.add("sup_diff", scaled.u.sup_distance(base.u * lam), tol)
    rep.artifacts = {"lambda": lam, "final_n": [base.final_n, scaled.final_n]}
    return rep


def q_exponent(beta: float) -> float:
    return max(1.0, (beta + 1) / 2)


def fit_boundary_exponent(u: ScalarField, window: tuple[int, int] = (2, 32)) -> tuple[float, float]:
    """Least-squares slope and intercept of ``log u`` against ``log dist``.

    ``window`` is an inclusive range of node offsets from the left endpoint,
    i.e. distances ``lo*h .. hi*h``.
    """
    lo, hi = window
    g = u.grid
    if not isinstance(g.domain, Interval):
        raise PreconditionError("boundary exponent fits need an interval")
    if lo < 1:
        raise WindowError("fit window touches the boundary node (log 0)")
    if hi <= lo or hi > (g.m - 1) // 2:
        raise WindowError(f"fit window {window} does not fit in half of {g.m} nodes")
    idx = np.arange(lo, hi + 1)
    vals = u.values[idx]
    if np.any(vals <= 0):
        raise WindowError("solution is not positive on the fit window")
    slope, intercept = np.polyfit(np.log(g.distance[idx]), np.log(vals), 1)
    return float(slope), float(intercept)


def boundary_exponent(
    problem: Problem,
    window: tuple[int, int] = (2, 32),
    target: float | None = None,
    tol: float = 0.05,
    schedule: ContinuationSchedule | None = None,
    min_nodes: int = 513,
    case_id: str = "boundary_exponent",
) -> VerificationReport:
    """Fit ``u ~ dist**alpha`` near the left endpoint of an interval.

    The default target is ``1/q`` with ``q = max(1, (beta+1)/2)``; then both
    the relative error and ``|alpha q - 1|`` are checked against ``tol``.
    """
    if not isinstance(problem.domain, Interval):
        raise PreconditionError("boundary exponent fits need an interval")
    if problem.grid.m < min_nodes:
        raise PreconditionError(f"boundary exponent needs m >= {min_nodes}, got {problem.grid.m}")
    u = solve_singular(problem, schedule).u
    alpha, intercept = fit_boundary_exponent(u, window)
    q = q_exponent(problem.beta)
    rep = VerificationReport(case_id, "boundary_exponent")
    rep.add("relative_error", abs(alpha / (target or 1 / q) - 1), tol)
    if target is None:
        rep.add("q_relation", abs(alpha * q - 1), tol)
    rep.artifacts = {
        "alpha": alpha,
        "intercept": intercept,
        "q": q,
        "target": target or 1 / q,
        "window": list(window),
    }
    return rep


def energy_class_diagnostic(
    problem: Problem,
    ladder: Sequence[int] = (65, 129, 257, 513),
    ratio_tol: float = 1.25,
    min_growth: float = 0.05,
    schedule: ContinuationSchedule | None = None,
    case_id: str = "energy_class",
) -> VerificationReport:
    """Dirichlet energies of ``u`` and ``u**q`` along a refinement ladder.

    The ``u**q`` energies must stay bounded.  For ``beta >= 3`` the raw
    energies must grow by at least ``min_growth`` per refinement; otherwise
    they must stay bounded as well.
    """
    if problem.domain.dim != 1:
        raise PreconditionError("energy diagnostics run on intervals and radial domains")
    if len(ladder) < 4:
        raise PreconditionError("energy diagnostics need at least 4 resolutions")
    q = q_exponent(problem.beta)
    raw, powered = [], []
    for m in ladder:
        u = solve_singular(problem.at_resolution(m), schedule).u
        raw.append(h1_seminorm_sq(u))
        powered.append(h1_seminorm_sq(power_field(u, q)))
    rep = VerificationReport(case_id, "energy_class")
    rep.add("power_energy_ratio", max(powered) / min(powered), ratio_tol)
    growth = np.diff(raw)
    log_slope = float(np.polyfit(np.log(np.asarray(ladder) - 1.0), raw, 1)[0])
    if problem.beta >= 3:
        rep.add("growth_shortfall", min_growth - float(growth.min()), 0.0)
    else:
        rep.add("raw_energy_ratio", max(raw) / min(raw), ratio_tol)
    rep.artifacts = {
        "ladder": list(ladder),
        "q": q,
        "raw_energy": raw,
        "power_energy": powered,
        "growth": growth.tolist(),
        "log_slope": log_slope,
    }
    return rep


_CHECKS = {
    "uniqueness": uniqueness_check,
    "comparison": comparison_check,
    "symmetry": symmetry_check,
    "scaling": scaling_check,
    "boundary_exponent": boundary_exponent,
    "energy_class": energy_class_diagnostic,
}


def run_case(case: VerificationCase) -> VerificationReport:
    """Run one case; precondition and solver failures become failed reports."""
    opts = dict(case.options)
    try:
        if case.kind == "comparison":
            sub = opts.pop("sub")
            return comparison_check(sub, case.problem, case_id=case.case_id, **opts)
        return _CHECKS[case.kind](case.problem, case_id=case.case_id, **opts)
    except KeyError:
        raise ContractError(f"unknown verification kind {case.kind!r}") from None
    except SingularEllipticError as exc:
        rep = VerificationReport(case.case_id, case.kind)
        rep.add("error", math.inf, 0.0)
        rep.note = f"{type(exc).__name__}: {exc}"
        return rep


def run_suite(cases: Sequence[VerificationCase], workers: int = 1) -> list[VerificationReport]:
    """Run cases (optionally in worker processes); results keep the case order."""
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(run_case, cases))
    return [run_case(c) for c in cases]


def summary_csv(reports: Sequence[VerificationReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["case_id", "discrepancy", "value", "tolerance", "pass"])
    for rep in reports:
        for name in rep.discrepancies:
            val, tol = rep.discrepancies[name], rep.tolerances[name]
            w.writerow([rep.case_id, name, f"{val:.17g}", f"{tol:.17g}", "pass" if val <= tol else "fail"])
    return buf.getvalue()


def write_reports(reports: Sequence[VerificationReport], out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for rep in reports:
        (out / f"{rep.case_id}.json").write_text(rep.to_json())
    (out / "summary.csv").write_text(summary_csv(reports))


def random_trig_pair(rng: np.random.Generator, terms: int = 3) -> tuple[str, str]:
    """Source expressions ``f1 <= f2``: ``f1 = 0.1 + p**2`` and ``f2 = f1 + s**2``.

    ``p`` and ``s`` are random trigonometric polynomials in ``x`` on (0, 1);
    coefficients are written with full precision so the pair is reproducible
    from the text alone.
    """

    def poly():
        a = rng.uniform(-1.0, 1.0, size=(terms, 2))
        parts = [
            f"{float(a[j, 0])!r}*sin({j + 1}*pi*x) + {float(a[j, 1])!r}*cos({j + 1}*pi*x)" for j in range(terms)
        ]
        return "(" + " + ".join(parts) + ")**2"

    f1 = f"0.1 + {poly()}"
    f2 = f"{f1} + {poly()}"
    return f1, f2


def comparison_family(
    count: int = 20,
    seed: int = 0,
    beta: float = 2.0,
    m: int = 129,
    eps: float = 0.05,
    k: float = 1e4,
) -> list[VerificationCase]:
    rng = np.random.default_rng(seed)
    cases = []
    for i in range(count):
        f1, f2 = random_trig_pair(rng)
        sub = Problem.build(Interval(0.0, 1.0), m, beta, f1)
        sup = Problem.build(Interval(0.0, 1.0), m, beta, f2)
        cases.append(
            VerificationCase(
                f"comparison_seed{seed}_{i:02d}",
                "comparison",
                sup,
                {"sub": sub, "eps": eps, "k": k},
            )
        )
    return cases
