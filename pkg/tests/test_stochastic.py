"""
Tests for the stochastic solvers
================================

Mini-batch powered proximal method with noisy gradients, randomized
smoothing of h, their planners and the per-step random streams.
"""

import math

import numpy as np
import pytest

from test_utils import get_test_settings, make_ball_quadratic

from modules.deterministic import PlannerMode, SolveConfig, run_alg1, run_alg2
from modules.errors import PreconditionError
from modules.geometry import BoxSet
from modules.model import (
    NonsmoothTerm,
    ProblemInstance,
    SmoothnessParams,
    l1_term,
    power_term,
    quadratic_oracle,
    zero_term,
)
from modules.stochastic import (
    GaussianNoiseOracle,
    SmoothingConfig,
    UniformNoiseOracle,
    batch_mean,
    batch_size,
    empirical_moment,
    estimate_h_r,
    make_noise_oracle,
    minibatch_expectation_bound,
    plan_alg3,
    plan_alg4,
    replicate_alg3,
    rng_digest,
    run_alg3,
    run_alg4,
    step_rng,
)


@pytest.fixture
def test_settings():
    """Test settings configuration"""
    return get_test_settings()


@pytest.fixture
def quadratic(test_settings):
    """Seeded ball quadratic with an L1 term"""
    return make_ball_quadratic(dim=3, seed=11, lam=2.0, settings=test_settings)


LQ_LOWER, LQ_UPPER, LQ_EXPONENT, LQ_RADIUS = 0.5, 1.5, 0.5, 0.1
# ||grad h||_2 over the box enlarged by the smoothing radius
LQ_BOUND = math.sqrt(3) * LQ_EXPONENT * (LQ_LOWER - LQ_RADIUS) ** (LQ_EXPONENT - 1.0)


@pytest.fixture
def lq_toy(test_settings):
    """Quadratic plus a concave power term on a box bounded away from zero"""
    rng = np.random.default_rng(21)
    return ProblemInstance(
        f=quadratic_oracle(np.eye(3), center=rng.uniform(LQ_LOWER, LQ_UPPER, 3)),
        h=power_term(LQ_EXPONENT, 3, bound=LQ_BOUND),
        feasible_set=BoxSet(np.full(3, LQ_LOWER), np.full(3, LQ_UPPER), test_settings),
        params=SmoothnessParams(p=2.0, lam=2.0),
        phi_star_lower=0.0,
    )


class TestRandomStreams:
    """Per-step generators and batch averaging"""

    def test_step_streams_reproducible(self):
        assert rng_digest(step_rng(7, 3)) == rng_digest(step_rng(7, 3))
        assert step_rng(7, 3).standard_normal() == step_rng(7, 3).standard_normal()

    def test_step_streams_distinct(self):
        assert rng_digest(step_rng(7, 3)) != rng_digest(step_rng(7, 4))
        assert rng_digest(step_rng(7, 3)) != rng_digest(step_rng(8, 3))

    def test_identical_samples_average_exactly(self):
        g = np.array([0.1, 1.0 / 3.0, -7.25])
        assert np.array_equal(batch_mean([g] * 9), g)

    def test_batch_schedules(self):
        assert batch_size(4, 10) == 4
        assert batch_size([1, 2, 3], 2) == 2
        assert batch_size(lambda k: k * 2, 5) == 10
        with pytest.raises(PreconditionError):
            batch_size(0, 1)


class TestNoiseOracles:
    """Calibrated, unbiased gradient noise"""

    def test_gaussian_moment(self, quadratic):
        oracle = GaussianNoiseOracle(quadratic.f, 1.0, 2.0, 3)
        moment = empirical_moment(oracle, np.zeros(3), 20000, np.random.default_rng(0))
        assert moment == pytest.approx(1.0, abs=0.05)

    def test_uniform_moment(self, quadratic):
        oracle = UniformNoiseOracle(quadratic.f, 0.5, 2.0, 3)
        moment = empirical_moment(oracle, np.zeros(3), 20000, np.random.default_rng(1))
        assert moment == pytest.approx(0.25, abs=0.01)

    def test_unbiased(self, quadratic):
        oracle = GaussianNoiseOracle(quadratic.f, 1.0, 2.0, 3)
        x = np.array([0.2, -0.1, 0.3])
        rng = np.random.default_rng(2)
        n = 20000
        mean = np.mean([oracle.sample_grad(x, rng) for _ in range(n)], axis=0)
        assert np.all(np.abs(mean - oracle.true_grad(x)) <= 5 * oracle.scale / math.sqrt(n))

    def test_unknown_model(self, quadratic):
        with pytest.raises(PreconditionError):
            make_noise_oracle("cauchy", quadratic.f, 1.0, 2.0, 3)

    def test_negative_sigma(self, quadratic):
        with pytest.raises(PreconditionError):
            GaussianNoiseOracle(quadratic.f, -1.0, 2.0, 3)


class TestMiniBatchPlanner:
    """Oracle-call and batch-size planning"""

    def test_example(self):
        plan = plan_alg3(0.5, 1.0, 1.0, 2.0, 1.0, 1.0)
        assert plan.n_bar == 512
        assert plan.m == 16
        assert plan.n_iters == 32

    def test_halving_eps_scales_calls(self):
        assert plan_alg3(0.25, 1.0, 1.0, 2.0, 1.0, 1.0).n_bar == 512 * 16

    def test_noiseless(self):
        plan = plan_alg3(0.5, 0.0, 1.0, 2.0, 1.0, 1.0)
        assert plan.n_bar == 1
        assert plan.m == 1
        assert plan.warnings == []

    def test_requires_integer_p(self):
        with pytest.raises(PreconditionError):
            plan_alg3(0.5, 1.0, 1.0, 2.5, 1.0, 1.0)

    def test_expectation_bound(self):
        # (2 sigma^2 / (2 lam) * N / m + gap) / N with sigma = lam = 1, N = 4, m = 2
        assert minibatch_expectation_bound(1.0, 1.0, 2.0, [2, 2, 2, 2], 1.0) == pytest.approx(0.75)


class TestMiniBatchSolver:
    """Powered proximal steps on sampled gradients"""

    def test_noiseless_matches_deterministic(self, quadratic, test_settings):
        x0 = np.zeros(3)
        oracle = GaussianNoiseOracle(quadratic.f, 0.0, 2.0, 3)
        sampled = run_alg3(quadratic, oracle, x0, 15, 1, rng_seed=0, settings=test_settings)
        exact = run_alg2(
            quadratic,
            x0,
            SolveConfig(eps=1e-3, max_iters=15, planner_mode=PlannerMode.EXPLICIT_N, early_stop=False),
            test_settings,
        )
        assert np.array_equal(sampled.phi_values, exact.phi_values)
        assert np.array_equal(sampled.cert_values, exact.cert_values)

    def test_reproducible(self, quadratic, test_settings):
        oracle = GaussianNoiseOracle(quadratic.f, 0.5, 2.0, 3)
        a = run_alg3(quadratic, oracle, np.zeros(3), 10, 4, rng_seed=3, settings=test_settings)
        b = run_alg3(quadratic, oracle, np.zeros(3), 10, 4, rng_seed=3, settings=test_settings)
        assert a.to_frame().equals(b.to_frame())
        assert all(row.rng_digest for row in a.rows)

    def test_exact_shadow_recorded(self, quadratic, test_settings):
        oracle = GaussianNoiseOracle(quadratic.f, 0.5, 2.0, 3)
        trace = run_alg3(quadratic, oracle, np.zeros(3), 5, 2, rng_seed=1, eps=0.5, settings=test_settings)
        assert all(row.exact_cert is not None for row in trace.rows)
        assert trace.certificate is not None

    def test_requires_p_at_least_two(self, quadratic, test_settings):
        problem = quadratic.with_params(SmoothnessParams(p=1.5, lam=2.0))
        oracle = GaussianNoiseOracle(quadratic.f, 0.1, 3.0, 3)
        with pytest.raises(PreconditionError):
            run_alg3(problem, oracle, np.zeros(3), 5, 1, rng_seed=0, settings=test_settings)

    @pytest.mark.slow
    def test_expected_certificate_within_bound(self, quadratic, test_settings):
        sigma, n_iters, m = 0.5, 20, 4
        oracle = GaussianNoiseOracle(quadratic.f, sigma, 2.0, 3)
        x0 = np.zeros(3)
        result = replicate_alg3(quadratic, oracle, x0, n_iters, m, range(100), test_settings)
        bound = minibatch_expectation_bound(
            sigma, quadratic.params.lam, 2.0, [m] * n_iters, quadratic.phi_gap(x0)
        )
        assert result.mean <= bound + 3 * result.stderr


class TestSmoothing:
    """Randomized smoothing of the nonsmooth part"""

    def test_h_r_of_abs_at_zero(self):
        # E|r xi| for xi uniform on [-1, 1] equals r / 2
        est = estimate_h_r(l1_term(1.0, 1), np.zeros(1), 1.0, 20000, np.random.default_rng(0))
        assert abs(est.value - 0.5) <= 5 * est.value_stderr

    def test_linear_h_gradient_exact(self):
        c = np.array([1.0, -2.0])
        h = NonsmoothTerm(eval=lambda x: float(c @ x), subgrad=lambda x: c.copy(), name="linear_h")
        value, gradient = estimate_h_r(h, np.array([0.5, 0.5]), 0.1, 500, np.random.default_rng(1))
        assert np.array_equal(gradient, c)
        assert value == pytest.approx(-0.5, abs=0.02)

    def test_zero_h_matches_conditional_gradient(self, test_settings):
        problem = make_ball_quadratic(dim=3, seed=4, settings=test_settings)
        problem = ProblemInstance(
            f=problem.f,
            h=zero_term(3),
            feasible_set=problem.feasible_set,
            params=problem.params,
            phi_star_lower=0.0,
        )
        x0 = np.zeros(3)
        smoothed = run_alg4(problem, SmoothingConfig(r=0.1, M=0.0), x0, 12, rng_seed=0, settings=test_settings)
        plain = run_alg1(
            problem,
            x0,
            SolveConfig(eps=1e-3, max_iters=12, planner_mode=PlannerMode.EXPLICIT_N, early_stop=False),
            test_settings,
        )
        assert np.allclose(smoothed.phi_values, plain.phi_values, rtol=0, atol=1e-14)
        assert np.allclose(smoothed.cert_values, plain.cert_values, rtol=0, atol=1e-14)

    def test_plan_example(self):
        plan = plan_alg4(0.5, 1.0, 1.0, 1.0, 1.0, 2.0, 1.0)
        assert plan.n_iters == 16
        assert plan.m == 256

    def test_config_validation(self):
        with pytest.raises(PreconditionError):
            SmoothingConfig(r=0.0, M=1.0)
        with pytest.raises(PreconditionError):
            SmoothingConfig(r=0.1, M=-1.0)

    def test_concave_power_sandwich(self, lq_toy):
        # concave h: h_r <= h <= h_r + M r, up to the sampling band
        rng = np.random.default_rng(5)
        for _ in range(10):
            x = lq_toy.feasible_set.sample(rng)
            est = estimate_h_r(lq_toy.h, x, LQ_RADIUS, 4000, rng)
            band = 5 * est.value_stderr
            assert est.value - band <= lq_toy.h(x)
            assert lq_toy.h(x) <= est.value + LQ_BOUND * LQ_RADIUS + band

    def test_concave_power_descent(self, lq_toy, test_settings):
        x0 = np.full(3, LQ_UPPER)
        smoothing = SmoothingConfig(r=LQ_RADIUS, M=LQ_BOUND, batch=50)
        trace = run_alg4(lq_toy, smoothing, x0, 30, rng_seed=2, eps=1e-2, settings=test_settings)
        phi = trace.phi_values
        assert phi[0] == pytest.approx(lq_toy.phi(x0))
        # smoothing moves the objective by at most M r in either direction
        assert phi.min() < phi[0] - 2 * LQ_BOUND * LQ_RADIUS
        assert lq_toy.phi(trace.x_best) == pytest.approx(trace.best_row.phi)
        assert lq_toy.feasible_set.contains(trace.x_final)
