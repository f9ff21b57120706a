"""
Tests for the property-verification suites
==========================================

Every suite runs with reduced sizes and must report no violations.
"""

import pytest

from test_utils import get_test_settings

from modules.errors import ConfigError
from modules.verification import (
    SUITES,
    VerificationReport,
    random_convex_instance,
    run_suite,
    verify_bounds,
    verify_oracle_equivalence,
)


@pytest.fixture
def test_settings():
    """Test settings configuration"""
    return get_test_settings()


class TestReport:
    """Counting and counterexample selection"""

    def test_record_and_counterexample(self):
        report = VerificationReport(suite="demo", seed=0)
        report.record(True, dim=1, magnitude=0.0)
        report.record(False, dim=3, magnitude=0.5)
        report.record(False, dim=2, magnitude=-2.0)
        report.record(False, dim=2, magnitude=0.1)
        assert report.checks == 4
        assert not report.passed
        assert report.counterexample()["magnitude"] == 0.1
        assert report.to_dict()["n_violations"] == 3

    def test_empty_report_passes(self):
        report = VerificationReport(suite="demo", seed=0)
        assert report.passed
        assert report.counterexample() is None

    def test_inconclusive_fails_without_counterexample(self):
        report = VerificationReport(suite="demo", seed=0)
        report.record(True, dim=1, magnitude=0.0)
        report.record_inconclusive(dim=2, ran=1, N=40)
        assert report.checks == 2
        assert not report.passed
        assert report.counterexample() is None
        assert report.to_dict()["n_inconclusive"] == 1
        assert report.to_dict()["n_violations"] == 0


class TestSuites:
    """Reduced-size runs of every suite"""

    def test_registry(self):
        assert set(SUITES) == {"lemma2", "lemma3", "lemma5", "prop1", "oracle_equiv", "assumption1", "bounds"}

    def test_unknown_suite(self, test_settings):
        with pytest.raises(ConfigError):
            run_suite("lemma9", 0, test_settings)

    def test_monotone_power(self, test_settings):
        report = run_suite("lemma2", 0, test_settings, n_trials=5000)
        assert report.passed
        # three powers plus the p = 2 equality check
        assert report.checks == 3 * 5000 + 1
        assert report.metrics["p2_equality_error"] <= 1e-12

    def test_prox_stability(self, test_settings):
        report = run_suite("lemma3", 1, test_settings, n_trials=300)
        assert report.passed
        assert report.metrics["worst_excess"] <= 1e-8

    def test_smoothing(self, test_settings):
        report = run_suite("lemma5", 2, test_settings, n_points=4, n_samples=1000)
        assert report.passed

    def test_prox_residual(self, test_settings):
        report = run_suite("prop1", 3, test_settings, n_instances=10, n_samples=200)
        assert report.passed
        assert report.checks == 30

    def test_oracle_equivalence(self, test_settings):
        report = verify_oracle_equivalence(4, n_instances=5, n_iters=2000, settings=test_settings)
        assert report.passed
        assert report.metrics["max_gap_linear"] <= 1e-6

    def test_assumption(self, test_settings):
        report = run_suite("assumption1", 5, test_settings, n_trials=5000, n_pairs=300)
        assert report.passed
        assert report.metrics["holder_constant"] == pytest.approx(3.375, rel=1e-9)
        assert report.metrics["sampled_lambda_power_sum"] <= 2.0 + 1e-9

    def test_bounds_capped_runs_are_undecided(self, test_settings):
        report = verify_bounds(
            0, n_instances=2, eps_values=(1e-2,), dim=3, multiblock=False, step_cap=1, settings=test_settings
        )
        assert report.checks == 4
        assert not report.violations
        assert report.inconclusive
        assert not report.passed
        assert report.metrics["inconclusive_runs"] == len(report.inconclusive)
        missed = [r for r in report.table if r["k_hit"] < 0]
        assert len(missed) == len(report.inconclusive)
        assert all(r["ran"] < r["N"] for r in report.inconclusive)

    @pytest.mark.slow
    def test_bounds(self, test_settings):
        report = verify_bounds(
            6,
            n_instances=2,
            eps_values=(1e-1,),
            dim=3,
            n_pairs=100,
            block_instances=1,
            step_cap=5000,
            settings=test_settings,
        )
        assert report.passed
        algorithms = {row["algorithm"] for row in report.table}
        assert {"alg1", "alg2", "alg5_jacobian", "alg5_mbi", "alg6_jacobian", "alg6_mbi"} <= algorithms

    def test_random_convex_instance(self, test_settings):
        problem = random_convex_instance(4, 9, test_settings)
        assert problem.dim == 4
        assert problem.phi_star_lower == 0.0
        assert problem.validate_lower_bound(n_samples=200)
