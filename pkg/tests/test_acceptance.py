"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the lines are printed even
when output capture is on.
"""

import math

import numpy as np
import pytest

from singular_elliptic.cli import parse_text, resolve, run
from singular_elliptic.grid import Interval, Rectangle
from singular_elliptic.solver import ContinuationSchedule, Problem, RegularizedConfig, solve_regularized, solve_singular
from singular_elliptic.variational import (
    ObstacleProblem,
    TruncationParams,
    g_k,
    hat_residuals,
    minimize_obstacle,
    phi_k,
)
from singular_elliptic.verify import (
    boundary_exponent,
    comparison_family,
    energy_class_diagnostic,
    run_suite,
    scaling_check,
    symmetry_check,
    uniqueness_check,
)

from oracles import coordinate_oracle

UNIT = Interval(0.0, 1.0)


@pytest.fixture
def verdict(capsys):
    def emit(number, title, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} | {detail}")
        assert ok, detail

    return emit


def test_01_manufactured_convergence(verdict):
    ms = (33, 65, 129, 257)
    errs = []
    for m in ms:
        u = solve_singular(Problem.build(UNIT, m, 2.0, "pi**2 * sin(pi*x)**3")).u
        errs.append(float(np.max(np.abs(u.values - np.sin(np.pi * u.grid.coords[:, 0])))))
    orders = np.log2(np.array(errs[:-1]) / errs[1:])
    ok = orders.min() >= 1.8 and errs[-1] <= 5e-4
    verdict(1, "manufactured solution", ok,
            f"min order {orders.min():.3f} (>= 1.8), error at m=257 {errs[-1]:.3e} (<= 5e-4)")


def test_02_uniqueness(verdict):
    cases = [(2.0, 1.0), (4.0, 1.0), (0.5, 1.0), (2.0, "x*(1-x)")]
    worst = 0.0
    for beta, f in cases:
        rep = uniqueness_check(Problem.build(UNIT, 257, beta, f), tol=1e-6)
        worst = max(worst, rep.discrepancies["max_pairwise_interior_diff"])
    verdict(2, "uniqueness over inits x schedules", worst <= 1e-6, f"max pairwise diff {worst:.3e} (<= 1e-6)")


def test_03_weak_comparison(verdict):
    reports = run_suite(comparison_family(20, seed=0, beta=2.0, m=129, eps=0.05, k=1e4))
    violations = sum(r.artifacts["violating_nodes"] for r in reports)
    grad = max(r.discrepancies["certificate_gradient_term"] for r in reports)
    worst_over = max(r.discrepancies["max_sub_minus_super"] for r in reports)
    ok = len(reports) == 20 and violations == 0 and worst_over <= 1e-9 and grad <= 1e-8
    verdict(3, "weak comparison on 20 seeded pairs", ok,
            f"violating nodes {violations} (== 0), max u1-u2 {worst_over:.3e} (<= 1e-9), "
            f"max certificate gradient term {grad:.3e} (<= 1e-8)")


def test_04_symmetry(verdict):
    p = Problem.build(Rectangle(0, 1, 0, 1), 65, 2.0, "sin(pi*x)*sin(pi*y)")
    rep = symmetry_check(p, axes=(0, 1), tol=1e-10)
    worst = max(rep.discrepancies.values())
    verdict(4, "reflection symmetry on the square", rep.passed,
            f"axis0 {rep.discrepancies['axis0']:.3e}, axis1 {rep.discrepancies['axis1']:.3e}, "
            f"double {rep.discrepancies['all_axes']:.3e}; max {worst:.3e} (<= 1e-10)")


def test_05_scaling(verdict):
    worst = 0.0
    for lam in (0.1, 3.0):
        for beta in (1.5, 3.0):
            rep = scaling_check(Problem.build(UNIT, 129, beta, 1.0), lam, tol=1e-7)
            worst = max(worst, rep.discrepancies["sup_diff"])
    verdict(5, "scaling identity", worst <= 1e-7, f"max sup diff {worst:.3e} (<= 1e-7)")


def test_06_boundary_exponent(verdict):
    parts, ok = [], True
    for beta in (2.0, 3.0, 4.0):
        rep = boundary_exponent(Problem.build(UNIT, 1025, beta, 1.0), window=(2, 32), tol=0.05)
        alpha = rep.artifacts["alpha"]
        rel = abs(alpha / (2 / (1 + beta)) - 1)
        qrel = abs(alpha * (beta + 1) / 2 - 1)
        ok &= rel <= 0.05 and qrel <= 0.05
        parts.append(f"beta={beta:g}: alpha {alpha:.4f} rel {rel:.4f} |alpha q - 1| {qrel:.4f}")
    verdict(6, "boundary exponent within 5%", ok, "; ".join(parts))


def test_07_energy_classes(verdict):
    r3 = energy_class_diagnostic(Problem.build(UNIT, 65, 3.0, 1.0))
    r2 = energy_class_diagnostic(Problem.build(UNIT, 65, 2.0, 1.0))
    growth = min(r3.artifacts["growth"])
    ok = r3.passed and r2.passed and growth >= 0.05
    verdict(7, "energy classes", ok,
            f"beta=3 min growth {growth:.4f} (>= .05), u^2 ratio {r3.discrepancies['power_energy_ratio']:.4f}; "
            f"beta=2 raw ratio {r2.discrepancies['raw_energy_ratio']:.4f}, "
            f"u^1.5 ratio {r2.discrepancies['power_energy_ratio']:.4f} (<= 1.25)")


def test_08_obstacle(verdict):
    p = TruncationParams(4.0, 2.0)
    prob = Problem.build(UNIT, 9, 2.0, 1.0)
    v = solve_singular(prob).u
    res = minimize_obstacle(ObstacleProblem(prob.f, v, p))
    gap = float(np.max(np.abs(res.w.values - coordinate_oracle(v.values, prob.f.values, p))))
    hat_min = float(hat_residuals(res.w, prob.f, p).min())
    s = np.logspace(-3, 2, 100)
    h = 1e-4 * s
    fd = (phi_k(s + h, p) - phi_k(s - h, p)) / (2 * h)
    fd_err = float(np.max(np.abs(fd / g_k(s, p) - 1)))
    ok = gap <= 1e-6 and hat_min >= -1e-8 and fd_err <= 1e-7
    verdict(8, "obstacle minimizer", ok,
            f"oracle gap {gap:.3e} (<= 1e-6), min hat residual {hat_min:.3e} (>= -1e-8), "
            f"Phi' = g relative FD error {fd_err:.3e} over 100 points (<= 1e-7)")


def test_09_monotone_in_n(verdict):
    prob = Problem.build(UNIT, 129, 2.0, 1.0)
    levels = [s.n for s in solve_singular(prob).n_history]
    fields = [solve_regularized(prob, RegularizedConfig(n=n)) for n in levels]
    worst = max(float(np.max(a.values - b.values)) for a, b in zip(fields, fields[1:]))
    verdict(9, "monotone in n", worst <= 1e-9,
            f"{len(levels)} levels up to n={levels[-1]:g}, max(u_n - u_n') {worst:.3e} (<= 1e-9)")


FULL_SUITE = """\
subcommand = verify
domain = interval 0 1
beta = 2
f = 1 + x*(1-x)
m = 129
cases = uniqueness, comparison, symmetry, scaling, boundary_exponent, energy_class
scaling_lambdas = 0.1, 3
comparison_pairs = 20
exponent_m = 1025
"""


def test_10_determinism(verdict, tmp_path):
    outs = []
    for name in ("first", "second"):
        cfg = resolve(parse_text(FULL_SUITE + f"out = {tmp_path / name}\n"))
        assert run(cfg) == 0
        outs.append(tmp_path / name)
    names = sorted(p.name for p in outs[0].iterdir() if p.suffix in (".csv", ".json"))
    differing = [n for n in names if (outs[0] / n).read_bytes() != (outs[1] / n).read_bytes()]
    ok = len(names) > 20 and not differing
    verdict(10, "byte-identical verify suite", ok, f"{len(names)} CSV/JSON files, differing: {differing or 'none'}")


def test_closed_form_reference_beta3():
    # not a numbered criterion: anchors the solver to u = sqrt(2x(1-x)) for beta = 3
    u = solve_singular(Problem.build(UNIT, 513, 3.0, 1.0), ContinuationSchedule(interior_tol=1e-10)).u
    assert abs(u.values[256] - math.sqrt(0.5)) < 5e-4
