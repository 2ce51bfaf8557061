"""Domains, structured grids, the discrete negative Laplacian and nodal fields.

Every discretization here is built from one object: a weighted graph on the
grid nodes.  Each edge ``e = (i, j)`` carries a coefficient ``c_e`` so that

    sum_e c_e (u_i - u_j)**2  ~  integral of |grad u|**2

and every node carries a quadrature weight ``q_i``.  The stiffness matrix ``K``
is the graph Laplacian restricted to interior nodes and the discrete operator
is ``A = diag(q)**-1 K``.  On Cartesian grids ``q`` is the trapezoidal weight,
so ``A`` is the usual 3- or 5-point stencil.  On radial grids the edge
coefficients are ``|S^{N-1}| r_mid**(N-1) / h`` and ``q`` is the measure of the
dual cell, which yields a conservative, symmetrizable discretization of
``-u'' - (N-1)/r u'`` with the ghost-node stencil ``2N (u_0 - u_1) / h**2`` at
the origin of a ball.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from pathlib import Path
from typing import Callable, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    DataError,
    InvalidDomainError,
    InvalidResolutionError,
    LinearSolveError,
    MarginError,
    NegativeDataError,
    ShapeError,
)
from .expr import Expression

# relative slack used when deciding whether a node lies at distance >= margin
_DIST_SLACK = 1e-12


def sphere_area(N: int) -> float:
    """Surface measure of the unit sphere in R^N (2 for N = 1)."""
    return 2.0 * math.pi ** (N / 2) / math.gamma(N / 2)


def _as_floats(obj, *names):
    for name in names:
        try:
            object.__setattr__(obj, name, float(getattr(obj, name)))
        except (TypeError, ValueError):
            raise InvalidDomainError(f"{name} must be a real number") from None


@dataclass(frozen=True)
class Interval:
    a: float = 0.0
    b: float = 1.0

    def __post_init__(self):
        _as_floats(self, "a", "b")
        if not (math.isfinite(self.a) and math.isfinite(self.b)) or not self.a < self.b:
            raise InvalidDomainError(f"interval needs finite a < b, got [{self.a}, {self.b}]")

    dim = 1
    radial = False

    @property
    def width(self) -> float:
        return self.b - self.a

    @property
    def measure(self) -> float:
        return self.b - self.a

    def describe(self) -> str:
        return f"interval {self.a!r} {self.b!r}"


@dataclass(frozen=True)
class Rectangle:
    ax: float = 0.0
    bx: float = 1.0
    ay: float = 0.0
    by: float = 1.0

    def __post_init__(self):
        _as_floats(self, "ax", "bx", "ay", "by")
        vals = (self.ax, self.bx, self.ay, self.by)
        if not all(math.isfinite(v) for v in vals) or not (self.ax < self.bx and self.ay < self.by):
            raise InvalidDomainError(f"rectangle needs ax < bx and ay < by, got {vals}")

    dim = 2
    radial = False

    @property
    def width(self) -> float:
        return min(self.bx - self.ax, self.by - self.ay)

    @property
    def measure(self) -> float:
        return (self.bx - self.ax) * (self.by - self.ay)

    def describe(self) -> str:
        return f"rectangle {self.ax!r} {self.bx!r} {self.ay!r} {self.by!r}"


@dataclass(frozen=True)
class RadialBall:
    """Ball of radius ``R`` in R^N, represented by the radial profile on [0, R]."""

    N: int = 2
    R: float = 1.0

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise InvalidDomainError(f"dimension N must be an integer >= 1, got {self.N}")
        object.__setattr__(self, "N", int(self.N))
        _as_floats(self, "R")
        if not (math.isfinite(self.R) and self.R > 0):
            raise InvalidDomainError(f"radius must be positive, got {self.R}")

    dim = 1
    radial = True

    @property
    def r0(self) -> float:
        return 0.0

    @property
    def r1(self) -> float:
        return self.R

    @property
    def width(self) -> float:
        return 2.0 * self.R

    @property
    def measure(self) -> float:
        return sphere_area(self.N) * self.R**self.N / self.N

    def describe(self) -> str:
        return f"ball {self.N} {self.R!r}"


@dataclass(frozen=True)
class RadialAnnulus:
    N: int = 2
    R0: float = 1.0
    R1: float = 2.0

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise InvalidDomainError(f"dimension N must be an integer >= 1, got {self.N}")
        object.__setattr__(self, "N", int(self.N))
        _as_floats(self, "R0", "R1")
        if not (math.isfinite(self.R0) and math.isfinite(self.R1) and 0 < self.R0 < self.R1):
            raise InvalidDomainError(f"annulus needs 0 < R0 < R1, got {self.R0}, {self.R1}")

    dim = 1
    radial = True

    @property
    def r0(self) -> float:
        return self.R0

    @property
    def r1(self) -> float:
        return self.R1

    @property
    def width(self) -> float:
        return self.R1 - self.R0

    @property
    def measure(self) -> float:
        return sphere_area(self.N) * (self.R1**self.N - self.R0**self.N) / self.N

    def describe(self) -> str:
        return f"annulus {self.N} {self.R0!r} {self.R1!r}"


Domain = Union[Interval, Rectangle, RadialBall, RadialAnnulus]


def parse_domain(text: str) -> Domain:
    """Parse ``interval a b``, ``rectangle ax bx ay by``, ``ball N R`` or ``annulus N R0 R1``."""
    parts = text.split()
    if not parts:
        raise InvalidDomainError("empty domain description")
    kind, args = parts[0].lower(), parts[1:]
    try:
        if kind == "interval" and len(args) == 2:
            return Interval(float(args[0]), float(args[1]))
        if kind == "rectangle" and len(args) == 4:
            return Rectangle(*(float(a) for a in args))
        if kind == "ball" and len(args) == 2:
            return RadialBall(int(args[0]), float(args[1]))
        if kind == "annulus" and len(args) == 3:
            return RadialAnnulus(int(args[0]), float(args[1]), float(args[2]))
    except ValueError as exc:
        if isinstance(exc, InvalidDomainError):
            raise
        raise InvalidDomainError(f"bad number in domain {text!r}") from None
    raise InvalidDomainError(f"unrecognized domain {text!r}")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def _trapezoid(n: int, h: float) -> np.ndarray:
    w = np.full(n, h)
    if n == 1:
        return np.zeros(1)
    w[0] = w[-1] = 0.5 * h
    return w


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform tensor grid (Cartesian) or uniform radial mesh.

    Nodes of a rectangle are stored row-major over ``(ix, iy)``, i.e. node
    ``ix * m + iy``.
    """

    domain: Domain
    m: int
    axes: tuple[np.ndarray, ...]
    coords: np.ndarray
    boundary: np.ndarray
    spacing: tuple[float, ...]
    weights: np.ndarray
    distance: np.ndarray

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(ax) for ax in self.axes)

    @property
    def n_nodes(self) -> int:
        return len(self.weights)

    @cached_property
    def interior(self) -> np.ndarray:
        return _frozen(np.flatnonzero(~self.boundary))

    @cached_property
    def boundary_nodes(self) -> np.ndarray:
        return _frozen(np.flatnonzero(self.boundary))

    @property
    def h(self) -> float:
        """Smallest spacing."""
        return min(self.spacing)

    @property
    def coord_names(self) -> tuple[str, ...]:
        if self.domain.radial:
            return ("r",)
        return ("x", "y")[: self.domain.dim]

    def variables(self) -> dict[str, np.ndarray]:
        return {name: self.coords[:, i] for i, name in enumerate(self.coord_names)}

    def margin_mask(self, margin: float) -> np.ndarray:
        """Nodes at distance >= margin from the boundary (margin = 0: all nodes)."""
        if margin < 0:
            raise MarginError(f"margin must be >= 0, got {margin}")
        if margin == 0:
            return np.ones(self.n_nodes, dtype=bool)
        return self.distance >= margin - _DIST_SLACK * self.domain.width

    def index_box(self, margin: float) -> tuple[tuple[int, int], ...]:
        """Per-axis inclusive index ranges of the margin sub-domain."""
        if margin >= 0.5 * self.domain.width:
            raise MarginError(f"margin {margin} is not below half the domain width")
        mask = self.margin_mask(margin).reshape(self.shape)
        box = []
        for axis in range(len(self.shape)):
            other = tuple(i for i in range(len(self.shape)) if i != axis)
            keep = np.flatnonzero(mask.any(axis=other) if other else mask)
            if keep.size == 0:
                raise MarginError(f"margin {margin} leaves no nodes")
            box.append((int(keep[0]), int(keep[-1])))
        return tuple(box)

    def edges(self, margin: float = 0.0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Edge list ``(i, j, c)`` of the energy graph on the margin sub-domain."""
        box = self.index_box(margin)
        if self.domain.radial:
            (lo, hi), h = box[0], self.spacing[0]
            i = np.arange(lo, hi)
            rmid = self.axes[0][i] + 0.5 * h
            c = sphere_area(self.domain.N) * rmid ** (self.domain.N - 1) / h
            return i, i + 1, c
        if self.domain.dim == 1:
            (lo, hi), h = box[0], self.spacing[0]
            i = np.arange(lo, hi)
            return i, i + 1, np.full(len(i), 1.0 / h)
        (xlo, xhi), (ylo, yhi) = box
        hx, hy = self.spacing
        m = self.shape[1]
        ty = _trapezoid(yhi - ylo + 1, hy)
        tx = _trapezoid(xhi - xlo + 1, hx)
        ix, iy = np.meshgrid(np.arange(xlo, xhi), np.arange(ylo, yhi + 1), indexing="ij")
        xi = (ix * m + iy).ravel()
        xc = np.broadcast_to(ty / hx, ix.shape).ravel()
        jx, jy = np.meshgrid(np.arange(xlo, xhi + 1), np.arange(ylo, yhi), indexing="ij")
        yi = (jx * m + jy).ravel()
        yc = np.broadcast_to((tx / hy)[:, None], jx.shape).ravel()
        return (
            np.concatenate([xi, yi]),
            np.concatenate([xi + m, yi + 1]),
            np.concatenate([xc, yc]),
        )

    def same_as(self, other: Grid) -> bool:
        return self is other or (
            self.domain == other.domain and self.m == other.m
        )


def build_grid(domain: Domain, m: int) -> Grid:
    """Uniform grid with ``m`` nodes per axis; boundary nodes lie on the boundary.

    For a ball, ``r = 0`` is an interior node (symmetry stencil); for an
    annulus both radial endpoints are boundary nodes.
    """
    if int(m) != m or m < 3:
        raise InvalidResolutionError(f"need at least 3 nodes per axis, got m={m}")
    m = int(m)
    d = domain
    if isinstance(d, Interval):
        x, h = np.linspace(d.a, d.b, m, retstep=True)
        boundary = np.zeros(m, dtype=bool)
        boundary[[0, -1]] = True
        return Grid(
            domain=d,
            m=m,
            axes=(_frozen(x),),
            coords=_frozen(x[:, None]),
            boundary=_frozen(boundary),
            spacing=(h,),
            weights=_frozen(_trapezoid(m, h)),
            distance=_frozen(np.minimum(x - d.a, d.b - x)),
        )
    if isinstance(d, Rectangle):
        x, hx = np.linspace(d.ax, d.bx, m, retstep=True)
        y, hy = np.linspace(d.ay, d.by, m, retstep=True)
        X, Y = np.meshgrid(x, y, indexing="ij")
        bnd = np.zeros((m, m), dtype=bool)
        bnd[[0, -1], :] = True
        bnd[:, [0, -1]] = True
        dist = np.minimum.reduce([X - d.ax, d.bx - X, Y - d.ay, d.by - Y])
        w = np.outer(_trapezoid(m, hx), _trapezoid(m, hy))
        return Grid(
            domain=d,
            m=m,
            axes=(_frozen(x), _frozen(y)),
            coords=_frozen(np.column_stack([X.ravel(), Y.ravel()])),
            boundary=_frozen(bnd.ravel()),
            spacing=(hx, hy),
            weights=_frozen(w.ravel()),
            distance=_frozen(dist.ravel()),
        )
    if isinstance(d, (RadialBall, RadialAnnulus)):
        r, h = np.linspace(d.r0, d.r1, m, retstep=True)
        boundary = np.zeros(m, dtype=bool)
        boundary[-1] = True
        if isinstance(d, RadialAnnulus):
            boundary[0] = True
            dist = np.minimum(r - d.R0, d.R1 - r)
        else:
            dist = d.R - r
        # measure of the dual cells [r_i - h/2, r_i + h/2] clipped to [r0, r1]
        lo = np.maximum(r - 0.5 * h, d.r0)
        hi = np.minimum(r + 0.5 * h, d.r1)
        w = sphere_area(d.N) * (hi**d.N - lo**d.N) / d.N
        return Grid(
            domain=d,
            m=m,
            axes=(_frozen(r),),
            coords=_frozen(r[:, None]),
            boundary=_frozen(boundary),
            spacing=(h,),
            weights=_frozen(w),
            distance=_frozen(dist),
        )
    raise InvalidDomainError(f"unsupported domain {domain!r}")


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Nodal values of a function on a grid."""

    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float).ravel()
        if v.shape != (self.grid.n_nodes,):
            raise ShapeError(f"expected {self.grid.n_nodes} values, got {np.size(self.values)}")
        if not np.all(np.isfinite(v)):
            raise DataError("field contains non-finite values")
        object.__setattr__(self, "values", _frozen(v))

    @property
    def interior_values(self) -> np.ndarray:
        return self.values[self.grid.interior]

    def with_values(self, values: np.ndarray) -> ScalarField:
        return ScalarField(self.grid, values)

    def __add__(self, other):
        return self.with_values(self.values + _raw(other))

    def __sub__(self, other):
        return self.with_values(self.values - _raw(other))

    def __mul__(self, other):
        return self.with_values(self.values * _raw(other))

    __rmul__ = __mul__

    def max(self) -> float:
        return float(self.values.max())

    def min(self) -> float:
        return float(self.values.min())

    def sup_distance(self, other: ScalarField, mask: np.ndarray | None = None) -> float:
        diff = np.abs(self.values - other.values)
        return float(diff[mask].max() if mask is not None else diff.max())


def _raw(x):
    return x.values if isinstance(x, ScalarField) else x


def from_interior(grid: Grid, interior_values: np.ndarray) -> ScalarField:
    """Extend interior values by zero on the boundary."""
    full = np.zeros(grid.n_nodes)
    full[grid.interior] = interior_values
    return ScalarField(grid, full)


Source = Union[float, int, str, Expression, Callable, np.ndarray, ScalarField]


def sample(src: Source, grid: Grid, *, nonnegative: bool = False) -> ScalarField:
    """Nodal values of a constant, expression string, callable or gridded data.

    Callables receive the coordinate arrays positionally (``x``, ``x, y`` or
    ``r``).  With ``nonnegative=True`` (used for source terms) negative values
    raise :class:`NegativeDataError`.
    """
    if isinstance(src, ScalarField):
        if not src.grid.same_as(grid):
            raise ShapeError("gridded data was sampled on a different grid")
        values = src.values
    elif isinstance(src, (int, float, np.floating, np.integer)) and not isinstance(src, bool):
        values = np.full(grid.n_nodes, float(src))
    elif isinstance(src, (str, Expression)):
        ex = src if isinstance(src, Expression) else Expression(src)
        values = ex(**grid.variables())
    elif callable(src):
        with np.errstate(all="ignore"):
            values = np.asarray(src(*(grid.coords[:, i] for i in range(grid.coords.shape[1]))), dtype=float)
        values = np.broadcast_to(values, (grid.n_nodes,)).copy()
    else:
        values = np.asarray(src, dtype=float)
        if values.size != grid.n_nodes:
            raise ShapeError(f"gridded data has {values.size} values, grid has {grid.n_nodes} nodes")
        values = values.ravel()
    if not np.all(np.isfinite(values)):
        raise DataError("source evaluates to non-finite values on the grid")
    if nonnegative and np.any(values < 0):
        raise NegativeDataError(f"source must be nonnegative (min {values.min():.3g})")
    return ScalarField(grid, values)


@dataclass(frozen=True, eq=False)
class DiscreteOperator:
    """Negative Laplacian with homogeneous Dirichlet data eliminated.

    ``stiffness`` is symmetric over interior nodes and ``weights`` are the
    interior quadrature weights; the operator itself is
    ``matrix = diag(weights)**-1 @ stiffness``.
    """

    grid: Grid
    stiffness: sp.csr_matrix
    stiffness_full: sp.csr_matrix
    weights: np.ndarray

    @cached_property
    def matrix(self) -> sp.csr_matrix:
        return sp.csr_matrix(sp.diags(1.0 / self.weights) @ self.stiffness)

    @cached_property
    def _factor(self):
        return _factorize(self.stiffness, self.grid)

    def apply(self, u: ScalarField | np.ndarray) -> np.ndarray:
        """``A u`` at interior nodes; boundary values of a field are used."""
        if isinstance(u, ScalarField):
            return (self.stiffness_full @ u.values)[self.grid.interior] / self.weights
        return self.matrix @ u

    def weak_form(self, u: ScalarField, psi: ScalarField) -> float:
        """Discrete ``integral grad u . grad psi``."""
        return float(psi.values @ (self.stiffness_full @ u.values))


@lru_cache(maxsize=64)
def operator_for(grid: Grid) -> DiscreteOperator:
    """Cached :func:`assemble_neg_laplacian` (grids are immutable)."""
    return assemble_neg_laplacian(grid)


def assemble_neg_laplacian(grid: Grid) -> DiscreteOperator:
    i, j, c = grid.edges(0.0)
    n = grid.n_nodes
    rows = np.concatenate([i, j, i, j])
    cols = np.concatenate([i, j, j, i])
    vals = np.concatenate([c, c, -c, -c])
    full = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    full.sum_duplicates()
    inner = grid.interior
    K = sp.csr_matrix(full[inner][:, inner])
    return DiscreteOperator(grid, K, full, _frozen(grid.weights[inner]))


def _factorize(matrix: sp.spmatrix, grid: Grid):
    # tridiagonal systems need no reordering; 2D uses a symmetric ordering
    permc = "NATURAL" if grid.domain.dim == 1 else "MMD_AT_PLUS_A"
    return spla.splu(sp.csc_matrix(matrix), permc_spec=permc)


def solve_spd(matrix: sp.spmatrix, rhs: np.ndarray, grid: Grid, factor=None) -> np.ndarray:
    """Direct solve with one step of iterative refinement."""
    lu = factor if factor is not None else _factorize(matrix, grid)
    x = lu.solve(rhs)
    x = x + lu.solve(rhs - matrix @ x)
    return x


def linear_residual(opr: DiscreteOperator, u: np.ndarray, rhs: np.ndarray) -> float:
    """``|K u - q rhs|_inf``, the residual tested against interior hat functions."""
    return float(np.max(np.abs(opr.stiffness @ u - opr.weights * rhs), initial=0.0))


def solve_linear(opr: DiscreteOperator, rhs: ScalarField) -> ScalarField:
    """Solve ``A u = rhs`` at interior nodes with zero boundary values.

    The residual is measured in the weak scaling ``K u - q rhs`` and must not
    exceed ``1e-11 (1 + |q rhs|_inf)``.
    """
    b = rhs.interior_values
    if not np.all(np.isfinite(b)):
        raise DataError("right-hand side is not finite")
    u = solve_spd(opr.stiffness, opr.weights * b, opr.grid, opr._factor)
    res = linear_residual(opr, u, b)
    bound = 1e-11 * (1.0 + float(np.max(np.abs(opr.weights * b), initial=0.0)))
    if not np.all(np.isfinite(u)) or res > bound:
        raise LinearSolveError("linear solve failed", res)
    return from_interior(opr.grid, u)


def h1_seminorm_sq(u: ScalarField, margin: float = 0.0) -> float:
    """Squared H1 seminorm on the nodes at distance >= margin from the boundary.

    Uses differences along grid edges with trapezoidal weights across them,
    summed with :func:`math.fsum` so the result does not depend on the order
    of the nodes.
    """
    i, j, c = u.grid.edges(margin)
    d = u.values[i] - u.values[j]
    return math.fsum(c * d * d)


def reflect(u: ScalarField, axis: int = 0) -> ScalarField:
    """Mirror a field across the midplane of a Cartesian axis."""
    g = u.grid
    if g.domain.radial:
        raise ShapeError("radial grids have no reflection midplane")
    if axis not in range(g.domain.dim):
        raise ShapeError(f"axis {axis} out of range for a {g.domain.dim}-d grid")
    return u.with_values(np.flip(u.values.reshape(g.shape), axis=axis).ravel())


def vanishes_on_boundary(u: ScalarField, rel: float = 1e-12) -> bool:
    """Boundary values are zero up to round-off (``rel`` times the field scale)."""
    scale = rel * max(1.0, float(np.max(np.abs(u.values))))
    return bool(np.all(np.abs(u.values[u.grid.boundary]) <= scale))


def power_field(u: ScalarField, q: float) -> ScalarField:
    if not q > 0:
        raise ValueError(f"exponent must be positive, got {q}")
    if np.any(u.values < 0):
        raise NegativeDataError("power_field needs a nonnegative field")
    return u.with_values(u.values**q)


def write_field_csv(u: ScalarField, path: str | Path) -> None:
    """CSV with header ``x[,y],value`` (``r,value`` on radial grids), 17 digits."""
    names = u.grid.coord_names
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*names, "value"])
        for row, v in zip(u.grid.coords, u.values):
            w.writerow([f"{c:.17g}" for c in row] + [f"{v:.17g}"])


def read_field_csv(path: str | Path, grid: Grid) -> ScalarField:
    """Read a field written by :func:`write_field_csv`, checking the coordinates."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read field CSV {path}: {exc.strerror}") from None
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if header != [*grid.coord_names, "value"]:
        raise DataError(f"{path}: header {header} does not match this grid")
    try:
        data = np.array([[float(x) for x in r] for r in rows[1:] if r], dtype=float)
    except ValueError:
        raise DataError(f"{path}: non-numeric entry") from None
    if data.shape != (grid.n_nodes, len(header)):
        raise ShapeError(f"{path}: {len(data)} rows for a grid of {grid.n_nodes} nodes")
    if not np.allclose(data[:, :-1], grid.coords, rtol=0, atol=1e-12 * (1 + grid.domain.width)):
        raise ShapeError(f"{path}: coordinates do not match the grid")
    return ScalarField(grid, data[:, -1])
