"""Truncated energy, obstacle minimization and comparison certificates.

The singular nonlinearity ``-s**-beta`` is cut at level ``-k``:

    g_k(s) = max(-s**-beta, -k)   (s > 0),      g_k(s) = -k   (s <= 0)

``Phi_k`` is its primitive with ``Phi_k(1) = 0`` and

    J_k(phi) = 1/2 int |grad phi|**2 + int f Phi_k(phi)

is minimized over ``{0 <= phi <= v}``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ContractError, NonConvergenceError, PreconditionError, ShapeError
from .grid import ScalarField, h1_seminorm_sq, operator_for, solve_spd, vanishes_on_boundary

# distance to a bound below which a node counts as active in the KKT report
ACTIVE_BAND = 1e-10


@dataclass(frozen=True)
class TruncationParams:
    k: float
    beta: float

    def __post_init__(self):
        if not self.k >= 1:
            raise ContractError(f"truncation level k must be >= 1, got {self.k}")
        if not self.beta > 1:
            raise ContractError(f"the truncated energy needs beta > 1, got {self.beta}")

    @property
    def kink(self) -> float:
        """``s_k = k**(-1/beta)``, where ``-s**-beta`` reaches ``-k``."""
        return self.k ** (-1.0 / self.beta)


def _out(x, like):
    return float(x) if np.ndim(like) == 0 else x


def g_k(s, p: TruncationParams):
    s_arr = np.asarray(s, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        val = np.where(s_arr > 0, np.maximum(-np.abs(s_arr) ** -p.beta, -p.k), -p.k)
    return _out(val, s)


phi_k_prime = g_k


def g_k_slope(s, p: TruncationParams):
    """Derivative of ``g_k`` (zero on the flat branch, taken one-sided at the kink)."""
    s_arr = np.asarray(s, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        val = np.where(s_arr > p.kink, p.beta * np.abs(s_arr) ** (-p.beta - 1), 0.0)
    return _out(val, s)


def _upper_increment(a, b, beta):
    # (b**(1-beta) - a**(1-beta)) / (beta - 1) without cancellation for b ~ a
    return a ** (1 - beta) * np.expm1((1 - beta) * np.log1p((b - a) / a)) / (beta - 1)


def phi_k(s, p: TruncationParams):
    """Closed-form primitive of ``g_k`` normalized by ``phi_k(1) = 0``."""
    return phi_k_increment(1.0, s, p)


def phi_k_increment(s, t, p: TruncationParams):
    """``phi_k(t) - phi_k(s)``, accurate also when ``t`` is close to ``s``."""
    s_arr = np.asarray(s, dtype=float)
    t_arr = np.asarray(t, dtype=float)
    sk = p.kink
    a, b = np.maximum(s_arr, sk), np.maximum(t_arr, sk)
    linear = -p.k * (np.minimum(t_arr, sk) - np.minimum(s_arr, sk))
    val = _upper_increment(a, b, p.beta) + linear
    return float(val) if val.ndim == 0 else val


def J_k(phi: ScalarField, f: ScalarField, p: TruncationParams) -> float:
    """Discrete energy: half the Dirichlet energy plus the quadrature of ``f phi_k(phi)``."""
    _same_grid(phi, f)
    w = phi.grid.weights
    return 0.5 * h1_seminorm_sq(phi) + math.fsum(w * f.values * phi_k(phi.values, p))


def _same_grid(*fields: ScalarField):
    g = fields[0].grid
    if any(not x.grid.same_as(g) for x in fields[1:]):
        raise ShapeError("fields live on different grids")


@dataclass(frozen=True, eq=False)
class ObstacleProblem:
    f: ScalarField
    v: ScalarField
    params: TruncationParams

    def __post_init__(self):
        _same_grid(self.f, self.v)
        if np.any(self.v.values < 0):
            raise ContractError("the obstacle v must be nonnegative")
        if np.any(self.f.values < 0):
            raise ContractError("f must be nonnegative")

    @property
    def grid(self):
        return self.f.grid


@dataclass(frozen=True, eq=False)
class ObstacleResult:
    w: ScalarField
    energy: float
    kkt_lower: float
    kkt_upper: float
    kkt_interior: float
    iterations: int
    grad_history: list[float] = field(default_factory=list)

    @property
    def kkt(self) -> float:
        return max(self.kkt_lower, self.kkt_upper, self.kkt_interior)

    def to_dict(self) -> dict:
        return {
            "energy": self.energy,
            "kkt_lower": self.kkt_lower,
            "kkt_upper": self.kkt_upper,
            "kkt_interior": self.kkt_interior,
            "iterations": self.iterations,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


class _Energy:
    """Interior-node view of ``J_k`` for fields vanishing on the boundary."""

    def __init__(self, problem: ObstacleProblem):
        grid = problem.grid
        opr = operator_for(grid)
        self.grid = grid
        self.K = opr.stiffness
        self.qf = opr.weights * problem.f.interior_values
        self.p = problem.params

    def gradient(self, x):
        return self.K @ x + self.qf * g_k(x, self.p)

    def hessian(self, x):
        return self.K + sp.diags(self.qf * g_k_slope(x, self.p))

    def decrease(self, x, y):
        """``J(y) - J(x)`` evaluated without forming either energy."""
        d = y - x
        quad = d @ (self.K @ x) + 0.5 * d @ (self.K @ d)
        return quad + math.fsum(self.qf * phi_k_increment(x, y, self.p))


def _projected_gradient(x, g, lo, hi):
    return x - np.clip(x - g, lo, hi)


def minimize_obstacle(
    problem: ObstacleProblem,
    tol: float = 1e-10,
    max_iters: int = 500,
    init: ScalarField | None = None,
) -> ObstacleResult:
    """Minimize ``J_k`` over ``0 <= phi <= v`` (zero on the boundary).

    Projected descent with Armijo backtracking along the projection arc.  On
    nodes not held at a bound the gradient is rescaled by the reduced Hessian
    (a two-metric projected Newton step); if that direction fails the line
    search, a plain projected gradient step is taken instead.  Stops when the
    projected gradient ``x - clip(x - grad)`` is below ``tol`` in max-norm.
    """
    grid = problem.grid
    en = _Energy(problem)
    lo = np.zeros(len(grid.interior))
    hi = problem.v.interior_values
    if init is None:
        x = hi.copy()
    else:
        _same_grid(init, problem.f)
        x = np.clip(init.interior_values, lo, hi)
    sigma = 1e-4
    history = []
    for it in range(max_iters + 1):
        g = en.gradient(x)
        pg = np.abs(_projected_gradient(x, g, lo, hi))
        history.append(float(pg.max(initial=0.0)))
        if history[-1] <= tol:
            break
        if it == max_iters:
            raise NonConvergenceError(
                f"projected gradient {history[-1]:.3e} above {tol:g} after {max_iters} iterations",
                history,
            )
        band = min(1e-4, history[-1])
        held = ((x <= lo + band) & (g > 0)) | ((x >= hi - band) & (g < 0))
        free = np.flatnonzero(~held)
        H = en.hessian(x).tocsr()
        d = -g / H.diagonal()
        if free.size:
            Hff = H[free][:, free]
            d[free] = -solve_spd(Hff, g[free], grid)
        step, accepted = 1.0, False
        while step >= 1e-12:
            y = np.clip(x + step * d, lo, hi)
            predicted = step * (g[free] @ d[free]) + g[held] @ (y - x)[held]
            if predicted < 0 and en.decrease(x, y) <= sigma * predicted:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            step = 1.0 / max(np.abs(H).sum(axis=1).max(), 1e-300)
            while True:
                y = np.clip(x - step * g, lo, hi)
                if en.decrease(x, y) <= sigma * (g @ (y - x)) or step < 1e-300:
                    break
                step *= 0.5
        x = y
    w = ScalarField(grid, _embed(grid, x))
    g = en.gradient(x)
    lower = x - lo <= ACTIVE_BAND
    upper = hi - x <= ACTIVE_BAND
    inner = ~(lower | upper)
    only_lower, only_upper = lower & ~upper, upper & ~lower
    return ObstacleResult(
        w=w,
        energy=J_k(w, problem.f, problem.params),
        kkt_lower=float(np.max(-g[only_lower], initial=0.0).clip(0)),
        kkt_upper=float(np.max(g[only_upper], initial=0.0).clip(0)),
        kkt_interior=float(np.max(np.abs(g[inner]), initial=0.0)),
        iterations=it,
        grad_history=history,
    )


def _embed(grid, interior_values):
    out = np.zeros(grid.n_nodes)
    out[grid.interior] = interior_values
    return out


def vi_residual(w: ScalarField, psi: ScalarField, f: ScalarField, p: TruncationParams) -> float:
    """``int grad w . grad psi + int f phi_k'(w) psi`` for a test function ``psi >= 0``."""
    _same_grid(w, psi, f)
    if np.any(psi.values < 0) or not vanishes_on_boundary(psi):
        raise ContractError("psi must be >= 0 with zero boundary values")
    opr = operator_for(w.grid)
    q = w.grid.weights
    return opr.weak_form(w, psi) + math.fsum(q * f.values * g_k(w.values, p) * psi.values)


def hat_residuals(w: ScalarField, f: ScalarField, p: TruncationParams) -> np.ndarray:
    """:func:`vi_residual` against every interior hat function at once."""
    _same_grid(w, f)
    opr = operator_for(w.grid)
    inner = w.grid.interior
    return (opr.stiffness_full @ w.values)[inner] + (
        w.grid.weights * f.values * g_k(w.values, p)
    )[inner]


def t_tau(s, tau: float):
    """Odd truncation ``sign(s) min(|s|, tau)``."""
    if not tau > 0:
        raise ContractError(f"tau must be positive, got {tau}")
    s_arr = np.asarray(s, dtype=float)
    return _out(np.sign(s_arr) * np.minimum(np.abs(s_arr), tau), s)


@dataclass(frozen=True, eq=False)
class Certificate:
    gradient_term: float
    f_term: float
    max_excess: float
    max_over: float
    eps: float
    tau: float
    obstacle: ObstacleResult

    def holds(self, tol: float = 1e-8) -> bool:
        return self.gradient_term <= self.f_term + tol and self.f_term <= tol

    def to_dict(self) -> dict:
        return {
            "gradient_term": self.gradient_term,
            "f_term": self.f_term,
            "max_excess": self.max_excess,
            "max_over": self.max_over,
            "eps": self.eps,
            "tau": self.tau,
            "obstacle": self.obstacle.to_dict(),
        }


def comparison_certificate(
    u: ScalarField,
    v: ScalarField,
    f: ScalarField,
    p: TruncationParams,
    eps: float,
    tau: float = 1.0,
    obstacle_tol: float = 1e-10,
) -> Certificate:
    """Evaluate both sides of the comparison chain for ``(u - w - eps)^+``.

    ``w`` minimizes ``J_k`` below the supersolution ``v``.  For a subsolution
    ``u`` the expected outcome is ``gradient_term <= f_term <= 0``, forcing
    ``u <= w + eps`` on the grid.
    """
    _same_grid(u, v, f)
    if not eps > 0:
        raise PreconditionError(f"eps must be positive, got {eps}")
    if not eps ** (-p.beta) < p.k:
        raise PreconditionError(
            f"threshold ε^(-β) < k violated: eps^(-beta) = {eps ** (-p.beta):g} >= k = {p.k:g}"
        )
    obstacle = minimize_obstacle(ObstacleProblem(f, v, p), tol=obstacle_tol)
    w = obstacle.w
    excess = np.maximum(u.values - w.values - eps, 0.0)
    test = u.with_values(t_tau(excess, tau))
    q = u.grid.weights
    f_term = math.fsum(
        q * f.values * (-g_k(u.values, p) + g_k(w.values, p)) * test.values
    )
    return Certificate(
        gradient_term=h1_seminorm_sq(test),
        f_term=f_term,
        max_excess=float(excess.max()),
        max_over=float(np.max(u.values - v.values)),
        eps=eps,
        tau=tau,
        obstacle=obstacle,
    )
