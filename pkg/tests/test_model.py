"""
Tests for problem instances, oracles and smoothness estimation
==============================================================

Covers the composite objective, the p-power descent constant estimators,
the Hoelder check and the oracle validation helpers.
"""

import numpy as np
import pytest
from hypothesis import given, settings as hsettings, strategies as st

from test_utils import get_test_settings, make_ball_quadratic

from modules.errors import GradientCheckError, InfeasiblePointError, PreconditionError
from modules.geometry import BoxSet, L2BallSet
from modules.model import (
    ProblemInstance,
    SmoothOracle,
    SmoothnessParams,
    check_convexity,
    check_gradient,
    conjugate_exponent,
    estimate_holder_constant,
    estimate_lambda,
    l1_term,
    lambda_failure_rate,
    linear_oracle,
    norm_p_pow,
    one_parameter_lambda,
    phi,
    power_sum_oracle,
    quadratic_oracle,
    validate_oracle_gradient,
    verify_holder_power,
    zero_term,
)


@pytest.fixture
def test_settings():
    """Test settings configuration"""
    return get_test_settings()


@pytest.fixture
def unit_ball_half_norm(test_settings):
    """1/2 ||x||^2 + ||x||_1 on the unit ball in R^2"""
    return ProblemInstance(
        f=quadratic_oracle(np.eye(2)),
        h=l1_term(1.0, 2),
        feasible_set=L2BallSet(1.0, 2, test_settings),
        params=SmoothnessParams(p=2.0, lam=1.0),
        phi_star_lower=0.0,
    )


class TestSmoothnessParams:
    """Exponents and constants"""

    def test_conjugate_of_two(self):
        assert SmoothnessParams(p=2.0, lam=1.0).q == 2.0

    def test_conjugate_of_three(self):
        assert SmoothnessParams(p=3.0, lam=1.0).q == pytest.approx(1.5)

    @given(st.floats(min_value=1.01, max_value=50.0))
    def test_conjugate_identity(self, p):
        q = conjugate_exponent(p)
        assert 1.0 / p + 1.0 / q == pytest.approx(1.0, abs=1e-12)

    def test_rejects_p_at_most_one(self):
        with pytest.raises(PreconditionError):
            SmoothnessParams(p=1.0, lam=1.0)

    def test_rejects_nonpositive_lambda(self):
        with pytest.raises(PreconditionError):
            SmoothnessParams(p=2.0, lam=0.0)

    def test_to_dict_uses_lambda_key(self):
        data = SmoothnessParams(p=2.0, lam=3.0).to_dict()
        assert data == {"p": 2.0, "q": 2.0, "lambda": 3.0}

    def test_norm_p_pow(self):
        assert norm_p_pow(np.array([3.0, -4.0]), 2.0) == pytest.approx(25.0)
        assert norm_p_pow(np.array([1.0, -2.0]), 1.5) == pytest.approx(1.0 + 2.0**1.5)


class TestObjective:
    """Phi = f + h at feasible points"""

    def test_linear_zero_plus_l1(self, test_settings):
        problem = ProblemInstance(
            f=linear_oracle(np.zeros(2)),
            h=l1_term(1.0, 2),
            feasible_set=BoxSet(-np.ones(2), np.ones(2), test_settings),
            params=SmoothnessParams(p=2.0, lam=1.0),
            phi_star_lower=-1.0,
        )
        assert phi(problem, np.array([1.0, -1.0])) == pytest.approx(2.0)

    def test_half_norm_plus_l1(self, unit_ball_half_norm):
        assert unit_ball_half_norm.phi(np.array([0.6, 0.8])) == pytest.approx(1.9, abs=1e-12)

    def test_infeasible_point(self, unit_ball_half_norm):
        with pytest.raises(InfeasiblePointError):
            phi(unit_ball_half_norm, np.array([1.0, 1.0]))

    def test_phi_gap_clipped(self, unit_ball_half_norm):
        assert unit_ball_half_norm.phi_gap(np.zeros(2)) == 0.0
        assert unit_ball_half_norm.phi_gap(np.array([0.6, 0.8])) == pytest.approx(1.9)

    def test_default_lower_bound_holds(self):
        problem = ProblemInstance(
            f=quadratic_oracle(np.eye(3), center=np.array([2.0, 0.0, 0.0])),
            h=l1_term(0.2, 3),
            feasible_set=L2BallSet(1.0, 3),
            params=SmoothnessParams(p=2.0, lam=1.0),
        )
        assert problem.validate_lower_bound(n_samples=1000, rng_seed=1)

    def test_with_params_keeps_lower_bound(self, unit_ball_half_norm):
        other = unit_ball_half_norm.with_params(SmoothnessParams(p=3.0, lam=5.0))
        assert other.phi_star_lower == unit_ball_half_norm.phi_star_lower
        assert other.params.lam == 5.0
        assert other.diam_p() == pytest.approx(2.0)


class TestLambdaEstimation:
    """Sampled p-power descent constants"""

    def test_linear_gives_floor(self, test_settings):
        lam = estimate_lambda(
            linear_oracle(np.array([1.0, -2.0])), L2BallSet(1.0, 2), 2.0, 200, 0, test_settings
        )
        assert lam == test_settings.LAMBDA_MIN

    def test_half_norm_gives_one(self, test_settings):
        lam = estimate_lambda(quadratic_oracle(np.eye(3)), L2BallSet(1.0, 3), 2.0, 1000, 0, test_settings)
        assert lam == pytest.approx(1.0, abs=1e-6)

    def test_power_sum_below_one_parameter_constant(self, test_settings):
        box = BoxSet(np.zeros(3), np.ones(3))
        lam = estimate_lambda(power_sum_oracle(1.5), box, 1.5, 2000, 0, test_settings)
        assert lam <= one_parameter_lambda(1.5) + 1e-9

    def test_estimate_has_no_failures_on_its_own_pairs(self, test_settings):
        f = quadratic_oracle(np.diag([3.0, 1.0]))
        ball = L2BallSet(1.0, 2)
        lam = estimate_lambda(f, ball, 2.0, 500, 7, test_settings)
        assert lambda_failure_rate(f, ball, 2.0, lam, 500, 7) == 0.0

    def test_rejects_zero_pairs(self):
        with pytest.raises(PreconditionError):
            estimate_lambda(linear_oracle(np.ones(2)), L2BallSet(1.0, 2), 2.0, 0, 0)


class TestOneParameterConstant:
    """max(2, 2 sup g) over k >= 0"""

    @pytest.mark.parametrize("p", [1.1, 1.5, 2.0])
    def test_equals_two(self, p):
        assert one_parameter_lambda(p) == pytest.approx(2.0, abs=1e-6)


class TestHolder:
    """Hoelder continuity of the gradient in the p-norm"""

    def test_linear_passes(self):
        report = verify_holder_power(linear_oracle(np.ones(2)), L2BallSet(1.0, 2), 2.0, 1.0, 200, 0)
        assert report.passed
        assert report.worst_holder_margin >= 0.0

    def test_half_norm_tight(self):
        report = verify_holder_power(quadratic_oracle(np.eye(2)), L2BallSet(1.0, 2), 2.0, 1.0, 200, 0)
        assert report.passed
        assert abs(report.worst_holder_margin) < 1e-12

    def test_power_sum_with_anchor(self):
        box = BoxSet(np.zeros(3), np.ones(3))
        f = power_sum_oracle(1.5)
        M = estimate_holder_constant(f, box, 1.5, 500, 0, anchors=[np.zeros(3)])
        assert M > 0
        assert verify_holder_power(f, box, 1.5, M * (1 + 1e-9), 500, 0).holder_fail == 0

    def test_rejects_nonpositive_M(self):
        with pytest.raises(PreconditionError):
            verify_holder_power(linear_oracle(np.ones(2)), L2BallSet(1.0, 2), 2.0, 0.0, 10, 0)


class TestOracleChecks:
    """Finite-difference and convexity checks"""

    def test_quadratic_gradient(self):
        f = quadratic_oracle(np.array([[2.0, 0.5], [0.5, 1.0]]), b=np.array([1.0, -1.0]))
        assert check_gradient(f, [np.array([0.3, -0.2]), np.array([1.0, 2.0])]) < 1e-6

    def test_wrong_gradient_raises(self, test_settings):
        wrong = SmoothOracle(eval=lambda x: float(x @ x), grad=lambda x: x, name="wrong")
        with pytest.raises(GradientCheckError):
            validate_oracle_gradient(wrong, L2BallSet(1.0, 3), test_settings)

    def test_l1_is_convex(self):
        assert check_convexity(l1_term(0.5, 3), L2BallSet(1.0, 3), 200, 0) == 0

    def test_zero_term_is_zero(self):
        assert zero_term(4)(np.array([1.0, -2.0, 3.0, 4.0])) == 0.0

    @hsettings(max_examples=25, deadline=None)
    @given(st.integers(min_value=1, max_value=6), st.integers(min_value=0, max_value=1000))
    def test_ball_quadratic_gradient(self, dim, seed):
        problem = make_ball_quadratic(dim=dim, seed=seed)
        x = problem.feasible_set.sample(np.random.default_rng(seed))
        assert check_gradient(problem.f, [x]) < 1e-6
