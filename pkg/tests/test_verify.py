import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from singular_elliptic.errors import ContractError, PreconditionError, WindowError
from singular_elliptic.grid import Interval, RadialBall, Rectangle, build_grid, sample
from singular_elliptic.solver import ContinuationSchedule, Problem, default_init, solve_singular
from singular_elliptic.verify import (
    VerificationCase,
    VerificationReport,
    boundary_exponent,
    comparison_check,
    comparison_family,
    energy_class_diagnostic,
    fit_boundary_exponent,
    half_max_init,
    random_trig_pair,
    run_case,
    run_suite,
    scaling_check,
    summary_csv,
    symmetry_check,
    uniqueness_check,
    write_reports,
)

UNIT = Interval(0.0, 1.0)


class TestReport:
    @given(st.dictionaries(st.text(min_size=1, max_size=5), st.tuples(st.floats(0, 10), st.floats(0, 10)), max_size=5))
    def test_pass_iff_all_within_tolerance(self, entries):
        rep = VerificationReport("c", "k")
        for name, (val, tol) in entries.items():
            rep.add(name, val, tol)
        assert rep.passed == (bool(entries) and all(v <= t for v, t in entries.values()))

    def test_json_handles_infinity(self):
        rep = VerificationReport("c", "k")
        rep.add("error", math.inf, 0.0)
        d = json.loads(rep.to_json())
        assert d["discrepancies"]["error"] == "inf" and d["passed"] is False


class TestUniqueness:
    @pytest.mark.parametrize("beta", [2.0, 0.5])
    def test_passes(self, beta):
        rep = uniqueness_check(Problem.build(UNIT, 129, beta, 1.0))
        assert rep.passed, rep.discrepancies
        assert len(rep.artifacts["final_n"]) == 4

    def test_identical_runs_bitwise(self):
        p = Problem.build(UNIT, 65, 2.0, 1.0)
        init = default_init(p)
        rep = uniqueness_check(p, [init, init], [ContinuationSchedule()])
        assert rep.discrepancies["max_pairwise_interior_diff"] == 0.0
        assert all(rep.artifacts["bitwise_equal_pairs"])

    def test_needs_two_combinations(self):
        p = Problem.build(UNIT, 17, 2.0, 1.0)
        with pytest.raises(ContractError):
            uniqueness_check(p, [default_init(p)], [ContinuationSchedule()])

    def test_tightening_tolerance_does_not_hurt(self):
        p = Problem.build(UNIT, 129, 2.0, "1 + x")
        loose = uniqueness_check(p, schedules=[ContinuationSchedule(rho=2, interior_tol=1e-7),
                                              ContinuationSchedule(rho=4, interior_tol=1e-7)])
        tight = uniqueness_check(p, schedules=[ContinuationSchedule(rho=2, interior_tol=1e-8),
                                              ContinuationSchedule(rho=4, interior_tol=1e-8)])
        d = "max_pairwise_interior_diff"
        assert tight.discrepancies[d] <= loose.discrepancies[d]

    def test_half_max_init(self):
        p = Problem.build(UNIT, 17, 2.0, 1.0)
        init = half_max_init(p)
        assert np.all(init.values[p.grid.boundary] == 0)
        assert np.allclose(init.interior_values, 0.5 * default_init(p).max())


class TestComparison:
    def test_equal_sources(self):
        p = Problem.build(UNIT, 129, 2.0, 1.0)
        rep = comparison_check(p, p)
        assert rep.passed and rep.discrepancies["max_sub_minus_super"] == 0.0

    def test_half_source(self):
        p = Problem.build(UNIT, 129, 2.0, "1 + sin(pi*x)")
        rep = comparison_check(p.with_source_scale(0.5), p)
        assert rep.passed, rep.discrepancies
        assert rep.artifacts["violating_nodes"] == 0

    def test_scaled_field_subsolution(self):
        p = Problem.build(UNIT, 129, 2.0, 1.0)
        u = solve_singular(p).u
        rep = comparison_check(u * 0.7, p)
        assert rep.passed, rep.discrepancies

    def test_non_subsolution_field_fails(self):
        p = Problem.build(UNIT, 129, 2.0, 1.0)
        u = solve_singular(p).u
        rep = comparison_check(u * 1.3, p)
        assert not rep.passed
        assert rep.discrepancies["subsolution_residual"] > 1e-6

    def test_preconditions(self):
        p = Problem.build(UNIT, 33, 2.0, 1.0)
        with pytest.raises(PreconditionError):
            comparison_check(p.with_source_scale(2.0), p)
        q = Problem.build(UNIT, 33, 1.0, 1.0)
        with pytest.raises(PreconditionError):
            comparison_check(q, q)

    def test_random_pairs_ordered_and_reproducible(self):
        rng_a, rng_b = np.random.default_rng(7), np.random.default_rng(7)
        assert random_trig_pair(rng_a) == random_trig_pair(rng_b)
        for f1, f2 in (random_trig_pair(rng_a) for _ in range(10)):
            a = Problem.build(UNIT, 129, 2.0, f1).f.values
            b = Problem.build(UNIT, 129, 2.0, f2).f.values
            assert np.all(a >= 0.1) and np.all(a <= b)

    def test_family_ids(self):
        cases = comparison_family(3, seed=5)
        assert [c.case_id for c in cases] == [f"comparison_seed5_{i:02d}" for i in range(3)]


class TestSymmetry:
    def test_rectangle(self):
        p = Problem.build(Rectangle(0, 1, 0, 1), 17, 2.0, "sin(pi*x)*sin(pi*y)")
        rep = symmetry_check(p, axes=(0, 1))
        assert rep.passed and set(rep.discrepancies) == {"axis0", "axis1", "all_axes"}

    def test_asymmetric_rejected(self):
        p = Problem.build(Rectangle(0, 1, 0, 1), 9, 2.0, "exp(x)")
        with pytest.raises(PreconditionError):
            symmetry_check(p, axes=0)

    def test_radial_trivial(self):
        rep = symmetry_check(Problem.build(RadialBall(2, 1.0), 17, 2.0, 1.0))
        assert rep.passed and rep.discrepancies == {"reflection_discrepancy": 0.0}


class TestScaling:
    def test_identity_lambda(self):
        rep = scaling_check(Problem.build(UNIT, 65, 2.0, 1.0), 1.0)
        assert rep.discrepancies["sup_diff"] == 0.0

    @pytest.mark.parametrize("lam", [0.1, 1.0, 3.0, 10.0])
    @pytest.mark.parametrize("beta", [1.5, 2.0, 3.0, 4.0])
    def test_grid_of_cases(self, lam, beta):
        rep = scaling_check(Problem.build(UNIT, 129, beta, "1 + x*(1-x)"), lam)
        assert rep.passed, rep.discrepancies

    def test_invalid_lambda(self):
        with pytest.raises(ContractError):
            scaling_check(Problem.build(UNIT, 17, 2.0, 1.0), 0.0)


@pytest.fixture(scope="module")
def beta3_fine():
    return Problem.build(UNIT, 1025, 3.0, 1.0)


class TestBoundaryExponent:
    def test_beta3(self, beta3_fine):
        rep = boundary_exponent(beta3_fine)
        assert 0.475 <= rep.artifacts["alpha"] <= 0.525
        assert rep.passed

    def test_beta2(self):
        rep = boundary_exponent(Problem.build(UNIT, 1025, 2.0, 1.0))
        assert abs(rep.artifacts["alpha"] / (2 / 3) - 1) <= 0.05

    def test_manufactured_linear(self):
        rep = boundary_exponent(Problem.build(UNIT, 1025, 2.0, "pi**2*sin(pi*x)**3"), target=1.0)
        assert rep.passed and set(rep.discrepancies) == {"relative_error"}

    def test_preconditions(self, beta3_fine):
        with pytest.raises(PreconditionError):
            boundary_exponent(Problem.build(UNIT, 257, 3.0, 1.0))
        with pytest.raises(PreconditionError):
            boundary_exponent(Problem.build(Rectangle(0, 1, 0, 1), 9, 3.0, 1.0))
        u = solve_singular(beta3_fine).u
        with pytest.raises(WindowError):
            fit_boundary_exponent(u, (0, 32))
        with pytest.raises(WindowError):
            fit_boundary_exponent(u, (2, 600))

    def test_exact_power_law_fit(self):
        g = build_grid(UNIT, 513)
        u = sample("x**0.37 * (1 - x)**0.37", g)
        alpha, _ = fit_boundary_exponent(u, (2, 32))
        assert abs(alpha - 0.37) < 0.01


class TestEnergy:
    def test_beta3_diverges(self):
        rep = energy_class_diagnostic(Problem.build(UNIT, 65, 3.0, 1.0))
        raw = rep.artifacts["raw_energy"]
        assert rep.passed and all(b - a >= 0.05 for a, b in zip(raw, raw[1:]))
        assert rep.artifacts["log_slope"] > 0

    def test_beta2_bounded(self):
        rep = energy_class_diagnostic(Problem.build(UNIT, 65, 2.0, 1.0))
        assert rep.passed and "raw_energy_ratio" in rep.discrepancies

    def test_manufactured_converges(self):
        rep = energy_class_diagnostic(Problem.build(UNIT, 65, 2.0, "pi**2*sin(pi*x)**3"))
        assert rep.passed
        # |(sin)'|^2 integrates to pi**2/2 and |(sin**1.5)'|^2 to 1.5 pi
        assert abs(rep.artifacts["raw_energy"][-1] - math.pi**2 / 2) < 1e-3
        assert abs(rep.artifacts["power_energy"][-1] - 1.5 * math.pi) < 1e-3

    def test_preconditions(self):
        with pytest.raises(PreconditionError):
            energy_class_diagnostic(Problem.build(Rectangle(0, 1, 0, 1), 9, 3.0, 1.0))
        with pytest.raises(PreconditionError):
            energy_class_diagnostic(Problem.build(UNIT, 9, 3.0, 1.0), ladder=(9, 17, 33))


class TestSuite:
    def cases(self):
        p = Problem.build(UNIT, 65, 2.0, 1.0)
        asym = Problem.build(UNIT, 17, 2.0, "1 + x")
        return [
            VerificationCase("u", "uniqueness", p),
            VerificationCase("s", "scaling", p, {"lam": 3.0}),
            VerificationCase("sym_bad", "symmetry", asym),
            *comparison_family(2, seed=1, m=33),
        ]

    def test_order_and_failures(self):
        reports = run_suite(self.cases())
        assert [r.case_id for r in reports] == ["u", "s", "sym_bad", "comparison_seed1_00", "comparison_seed1_01"]
        bad = reports[2]
        assert not bad.passed and "PreconditionError" in bad.note

    def test_workers_match_serial(self):
        serial = run_suite(self.cases())
        parallel = run_suite(self.cases(), workers=2)
        assert summary_csv(serial) == summary_csv(parallel)

    def test_written_files_deterministic(self, tmp_path):
        for d in ("a", "b"):
            write_reports(run_suite(self.cases()), tmp_path / d)
        names = sorted(p.name for p in (tmp_path / "a").iterdir())
        assert "summary.csv" in names and len(names) == 6
        for n in names:
            assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()
        header = (tmp_path / "a" / "summary.csv").read_text().splitlines()[0]
        assert header == "case_id,discrepancy,value,tolerance,pass"

    def test_unknown_kind(self):
        with pytest.raises(ContractError):
            run_case(VerificationCase("x", "nope", Problem.build(UNIT, 9, 2.0, 1.0)))
