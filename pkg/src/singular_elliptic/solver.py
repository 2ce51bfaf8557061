"""Regularized solves and continuation for ``-Lap u = f / u**beta``.

For each regularization index ``n`` the problem

    -Lap u_n = min(f, n) / (u_n + 1/n)**beta,   u_n = 0 on the boundary

is solved by damped Newton.  :func:`solve_singular` walks ``n = n0 rho**k``
with warm starts until the solution stops changing on a sub-domain kept a
fixed margin away from the boundary.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import (
    ContractError,
    MarginError,
    NonConvergenceError,
    RegularizedSolveError,
)
from .expr import Expression
from .grid import (
    DiscreteOperator,
    Domain,
    Grid,
    ScalarField,
    Source,
    build_grid,
    from_interior,
    h1_seminorm_sq,
    operator_for,
    sample,
    solve_linear,
    solve_spd,
    vanishes_on_boundary,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Problem:
    """Data ``(domain, beta, f)`` of the singular Dirichlet problem.

    ``source`` keeps the unsampled description of ``f`` (constant, expression
    or callable) so the problem can be rebuilt at another resolution.
    """

    grid: Grid
    beta: float
    f: ScalarField
    source: Source | None = None

    def __post_init__(self):
        if not (math.isfinite(self.beta) and self.beta > 0):
            raise ContractError(f"beta must be positive, got {self.beta}")
        if not self.f.grid.same_as(self.grid):
            raise ContractError("f is sampled on a different grid")
        # re-validates nonnegativity
        object.__setattr__(self, "f", sample(self.f, self.grid, nonnegative=True))

    @classmethod
    def build(cls, domain: Domain, m: int, beta: float, source: Source) -> Problem:
        grid = build_grid(domain, m)
        return cls(grid, float(beta), sample(source, grid, nonnegative=True), source)

    @property
    def domain(self) -> Domain:
        return self.grid.domain

    @property
    def operator(self) -> DiscreteOperator:
        return operator_for(self.grid)

    def at_resolution(self, m: int) -> Problem:
        if self.source is None or isinstance(self.source, (ScalarField, np.ndarray)):
            raise ContractError("gridded source data cannot be resampled at another resolution")
        return Problem.build(self.domain, m, self.beta, self.source)

    def with_source_scale(self, c: float) -> Problem:
        """Same problem with ``f`` replaced by ``c f``."""
        return Problem(self.grid, self.beta, self.f * c, scale_source(self.source, c))

    def with_source(self, f: ScalarField) -> Problem:
        return Problem(self.grid, self.beta, f, None)


class _ScaledCallable:
    def __init__(self, inner, c: float):
        self.inner, self.c = inner, c

    def __call__(self, *coords):
        return self.c * np.asarray(self.inner(*coords), dtype=float)


def scale_source(src: Source | None, c: float) -> Source | None:
    if src is None or isinstance(src, (ScalarField, np.ndarray)):
        return None
    if isinstance(src, (int, float)):
        return c * float(src)
    if isinstance(src, (str, Expression)):
        text = src if isinstance(src, str) else src.text
        return Expression(f"{float(c)!r} * ({text})")
    return _ScaledCallable(src, c)


@dataclass(frozen=True)
class RegularizedConfig:
    n: float = 1.0
    newton_tol: float = 1e-11
    max_newton_iters: int = 100
    damping: float = 0.5

    def __post_init__(self):
        if not self.n >= 1:
            raise ContractError(f"regularization index n must be >= 1, got {self.n}")
        if not (self.newton_tol > 0 and self.max_newton_iters >= 1 and 0 < self.damping < 1):
            raise ContractError("newton_tol > 0, max_newton_iters >= 1 and 0 < damping < 1 required")


@dataclass(frozen=True)
class ContinuationSchedule:
    """Regularization ladder ``n0, n0 rho, n0 rho**2, ... <= n_max``.

    ``margin=None`` means 1/16 of the domain width.
    """

    n0: float = 1.0
    rho: float = 2.0
    n_max: float = 2.0**40
    interior_tol: float = 1e-8
    margin: float | None = None
    newton_tol: float = 1e-11
    max_newton_iters: int = 100
    damping: float = 0.5

    def __post_init__(self):
        if not (self.n0 >= 1 and self.rho > 1 and self.interior_tol > 0 and self.n_max >= self.n0):
            raise ContractError("need n0 >= 1, rho > 1, interior_tol > 0 and n_max >= n0")
        if self.margin is not None and self.margin < 0:
            raise ContractError(f"margin must be >= 0, got {self.margin}")

    def margin_for(self, grid: Grid) -> float:
        return grid.domain.width / 16 if self.margin is None else self.margin

    def levels(self) -> Iterator[float]:
        n = float(self.n0)
        while n <= self.n_max:
            yield n
            n *= self.rho

    def config(self, n: float) -> RegularizedConfig:
        return RegularizedConfig(n, self.newton_tol, self.max_newton_iters, self.damping)


@dataclass(frozen=True)
class ContinuationStep:
    n: float
    interior_change: float | None
    newton_iterations: int
    residual: float


@dataclass(frozen=True, eq=False)
class SolveReport:
    u: ScalarField
    n_history: list[ContinuationStep]
    interior_min: float
    positive: bool
    converged: bool
    margin: float
    weak_residual: float
    degenerate: bool = False

    @property
    def final_n(self) -> float | None:
        return self.n_history[-1].n if self.n_history else None

    @property
    def newton_iterations(self) -> int:
        return sum(s.newton_iterations for s in self.n_history)

    def to_dict(self) -> dict:
        return {
            "domain": self.u.grid.domain.describe(),
            "m": self.u.grid.m,
            "converged": self.converged,
            "positive": self.positive,
            "degenerate": self.degenerate,
            "interior_min": self.interior_min,
            "margin": self.margin,
            "final_n": self.final_n,
            "newton_iterations": self.newton_iterations,
            "weak_residual": self.weak_residual,
            "n_history": [
                {
                    "n": s.n,
                    "interior_change": s.interior_change,
                    "newton_iterations": s.newton_iterations,
                    "residual": s.residual,
                }
                for s in self.n_history
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def truncate_source(f: ScalarField, n: float) -> ScalarField:
    """Pointwise ``min(f, n)``."""
    return f.with_values(np.minimum(f.values, n))


def _newton(problem: Problem, cfg: RegularizedConfig, u: np.ndarray) -> tuple[np.ndarray, int, list[float]]:
    """Damped Newton on ``K u - q f_n (u + 1/n)**-beta = 0`` (interior unknowns).

    The residual is the weak form tested against each interior hat function.
    Steps are halved until ``u + 1/n >= 1/(2n)`` and the residual 2-norm
    decreases.
    """
    opr = problem.operator
    K, q, beta = opr.stiffness, opr.weights, problem.beta
    f = np.minimum(problem.f.interior_values, cfg.n)
    eps = 1.0 / cfg.n

    def residual(v):
        return K @ v - q * f * (v + eps) ** -beta

    G = residual(u)
    history = [float(np.max(np.abs(G), initial=0.0))]
    for it in range(cfg.max_newton_iters):
        if history[-1] <= cfg.newton_tol:
            return u, it, history
        J = K + sp.diags(q * beta * f * (u + eps) ** (-beta - 1))
        d = solve_spd(J, -G, problem.grid)
        gnorm = np.linalg.norm(G)
        step = 1.0
        while True:
            trial = u + step * d
            if trial.min(initial=np.inf) + eps >= 0.5 * eps:
                G_trial = residual(trial)
                if np.linalg.norm(G_trial) <= (1 - 1e-4 * step) * gnorm:
                    break
            step *= cfg.damping
            if step < 1e-12:
                raise RegularizedSolveError(
                    f"line search failed at n={cfg.n:g} (residual {history[-1]:.3e})", history
                )
        u, G = trial, G_trial
        history.append(float(np.max(np.abs(G), initial=0.0)))
    if history[-1] <= cfg.newton_tol:
        return u, cfg.max_newton_iters, history
    raise RegularizedSolveError(
        f"Newton did not converge in {cfg.max_newton_iters} iterations at n={cfg.n:g} "
        f"(residual {history[-1]:.3e})",
        history,
    )


def _check_init(problem: Problem, init: ScalarField | None) -> np.ndarray:
    if init is None:
        return np.zeros(len(problem.grid.interior))
    if not init.grid.same_as(problem.grid):
        raise ContractError("initial guess lives on a different grid")
    if np.any(init.values < 0) or not vanishes_on_boundary(init):
        raise ContractError("initial guess must be >= 0 with zero boundary values")
    return init.interior_values.copy()


def _nonnegative(u: np.ndarray) -> np.ndarray:
    scale = max(1.0, float(np.max(np.abs(u), initial=0.0)))
    if u.size and u.min() < -1e-12 * scale:
        raise RegularizedSolveError(f"iterate lost nonnegativity (min {u.min():.3e})", [])
    return np.maximum(u, 0.0)


def solve_regularized(
    problem: Problem, cfg: RegularizedConfig, init: ScalarField | None = None
) -> ScalarField:
    """Solve the regularized problem at index ``cfg.n``.

    Returns the nonnegative field ``u_n`` (zero on the boundary) whose
    hat-function residual is at most ``cfg.newton_tol``.
    """
    u, _, _ = _newton(problem, cfg, _check_init(problem, init))
    return from_interior(problem.grid, _nonnegative(u))


def default_init(problem: Problem) -> ScalarField:
    """Linear solve with source ``min(f, 1)``, clipped at zero."""
    u = solve_linear(problem.operator, truncate_source(problem.f, 1.0))
    return u.with_values(np.maximum(u.values, 0.0))


def interior_min(u: ScalarField, margin: float) -> float:
    """Minimum over nodes at distance >= margin from the boundary."""
    mask = u.grid.margin_mask(margin)
    if margin >= 0.5 * u.grid.domain.width or not mask.any():
        raise MarginError(f"no nodes at distance >= {margin} from the boundary")
    return float(u.values[mask].min())


def pointwise_residual(u: ScalarField, problem: Problem) -> np.ndarray:
    """``(A u)_i - f_i / u_i**beta`` at interior nodes (``-inf`` where u = 0 < f)."""
    Au = problem.operator.apply(u)
    ui = u.interior_values
    fi = problem.f.interior_values
    with np.errstate(divide="ignore", invalid="ignore"):
        rhs = np.where(fi > 0, fi / ui**problem.beta, 0.0)
    return Au - rhs


def relative_residual(u: ScalarField, problem: Problem) -> np.ndarray:
    """Pointwise residual divided by ``max(|A u|, f/u**beta, 1)``."""
    Au = problem.operator.apply(u)
    ui = u.interior_values
    fi = problem.f.interior_values
    with np.errstate(divide="ignore", invalid="ignore"):
        rhs = np.where(fi > 0, fi / ui**problem.beta, 0.0)
        scale = np.maximum(np.maximum(np.abs(Au), np.abs(rhs)), 1.0)
        out = (Au - rhs) / scale
    return np.where(np.isinf(rhs), -1.0, out)


def solve_singular(
    problem: Problem,
    schedule: ContinuationSchedule | None = None,
    init: ScalarField | None = None,
) -> SolveReport:
    """Continuation in ``n`` towards the solution of the singular problem.

    Raises :class:`NonConvergenceError` if ``n_max`` is passed before the
    interior change drops to ``interior_tol``.  For ``f = 0`` the zero field
    is returned with ``positive=False``.
    """
    schedule = schedule or ContinuationSchedule()
    grid = problem.grid
    margin = schedule.margin_for(grid)
    mask = grid.margin_mask(margin)[grid.interior]
    if not mask.any() or margin >= 0.5 * grid.domain.width:
        raise MarginError(f"margin {margin} leaves no interior nodes")

    if not np.any(problem.f.values > 0):
        zero = ScalarField(grid, np.zeros(grid.n_nodes))
        return SolveReport(zero, [], 0.0, False, True, margin, 0.0, degenerate=True)

    u = _check_init(problem, init if init is not None else default_init(problem))
    history: list[ContinuationStep] = []
    prev = None
    for n in schedule.levels():
        u, iters, res = _newton(problem, schedule.config(n), u)
        u = _nonnegative(u)
        change = None if prev is None else float(np.max(np.abs(u - prev)[mask]))
        history.append(ContinuationStep(n, change, iters, res[-1]))
        log.debug("n=%g newton=%d residual=%.3e change=%s", n, iters, res[-1], change)
        if change is not None and change <= schedule.interior_tol:
            field_u = from_interior(grid, u)
            imin = interior_min(field_u, margin)
            weak = float(np.max(np.abs(pointwise_residual(field_u, problem))))
            return SolveReport(field_u, history, imin, imin > 0, True, margin, weak)
        prev = u
    raise NonConvergenceError(
        f"interior change did not reach {schedule.interior_tol:g} before n_max={schedule.n_max:g}",
        history,
    )


def solve_at_n(problem: Problem, n: float, init: ScalarField, schedule: ContinuationSchedule | None = None) -> ScalarField:
    """Regularized solve at a prescribed ``n`` with the schedule's Newton settings."""
    schedule = schedule or ContinuationSchedule()
    return solve_regularized(problem, schedule.config(n), init)


def dirichlet_excess(
    target: ScalarField | Problem,
    eps: float,
    refinements: Sequence[int] | None = None,
    schedule: ContinuationSchedule | None = None,
) -> list[float]:
    """Energy of ``(u - eps)^+`` for a field, or for re-solves on each refinement."""
    if not eps > 0:
        raise ContractError(f"eps must be positive, got {eps}")
    if isinstance(target, ScalarField):
        if np.any(target.values < 0) or not vanishes_on_boundary(target):
            raise ContractError("u must be >= 0 with zero boundary values")
        return [h1_seminorm_sq(target.with_values(np.maximum(target.values - eps, 0.0)))]
    out = []
    for m in refinements or (target.grid.m,):
        u = solve_singular(target.at_resolution(m), schedule).u
        out.append(h1_seminorm_sq(u.with_values(np.maximum(u.values - eps, 0.0))))
    return out
