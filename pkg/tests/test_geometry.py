"""
Tests for feasible sets and subproblem solvers
==============================================

Closed-form linear and powered subproblems, the projected-subgradient
fallback, the exact line search and ball sampling.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings as hsettings, strategies as st

from test_utils import get_test_settings

from modules.errors import DimensionMismatchError, PreconditionError
from modules.geometry import (
    BoxSet,
    FeasibleSetOracle,
    L2BallSet,
    ProductSet,
    ball_analysis_l1_linear_argmin,
    ball_l1_linear_argmin,
    ball_l1_prox_argmin,
    line_search_alpha,
    powered_model_value,
    soft_threshold,
    uniform_ball_sample,
)
from modules.model import l1_term, weighted_l1_term, zero_term


@pytest.fixture
def test_settings():
    """Test settings configuration"""
    return get_test_settings()


def _orthogonal(n: int, seed: int) -> np.ndarray:
    q, _ = np.linalg.qr(np.random.default_rng(seed).standard_normal((n, n)))
    return q


class TestSoftThreshold:
    """Componentwise shrinkage"""

    def test_examples(self):
        assert np.allclose(soft_threshold(np.array([2.0, 0.0]), 0.85), [1.15, 0.0])
        assert np.allclose(soft_threshold(np.array([0.5, -0.3]), 0.85), [0.0, 0.0])
        assert np.allclose(soft_threshold(np.array([3.0, -4.0]), 1.0), [2.0, -3.0])

    def test_per_coordinate_weights(self):
        out = soft_threshold(np.array([1.0, 1.0]), np.array([0.5, 2.0]))
        assert np.allclose(out, [0.5, 0.0])


class TestBallSubproblems:
    """Closed forms on the Euclidean ball with an L1 term"""

    def test_linear_argmin_examples(self):
        assert np.allclose(ball_l1_linear_argmin(np.array([2.0, 0.0]), 0.85), [1.0, 0.0])
        assert np.allclose(ball_l1_linear_argmin(np.array([0.5, -0.3]), 0.85), [0.0, 0.0])
        expected = np.array([2.0, -3.0]) / math.sqrt(13.0)
        assert np.allclose(ball_l1_linear_argmin(np.array([3.0, -4.0]), 1.0), expected)

    def test_linear_argmin_radius(self):
        y = ball_l1_linear_argmin(np.array([0.0, 5.0]), 0.0, radius=3.0)
        assert np.allclose(y, [0.0, 3.0])

    def test_prox_examples(self):
        assert np.allclose(ball_l1_prox_argmin(np.zeros(2), 1.0, 2.0), [0.0, 0.0])
        assert np.allclose(ball_l1_prox_argmin(np.array([2.0, 0.0]), 1.0, 4.0), [0.25, 0.0])
        assert np.allclose(ball_l1_prox_argmin(np.array([5.0, 0.0]), 1.0, 2.0), [1.0, 0.0])

    def test_prox_rejects_nonpositive_lambda(self):
        with pytest.raises(PreconditionError):
            ball_l1_prox_argmin(np.ones(2), 0.1, 0.0)

    @hsettings(max_examples=50, deadline=None)
    @given(
        st.lists(st.floats(min_value=-5, max_value=5), min_size=1, max_size=5),
        st.floats(min_value=0.0, max_value=2.0),
    )
    def test_linear_argmin_beats_samples(self, b, rho):
        b = np.array(b)
        y = ball_l1_linear_argmin(b, rho)
        assert np.linalg.norm(y) <= 1.0 + 1e-12

        def obj(v):
            return float(-v @ b + rho * np.sum(np.abs(v)))

        rng = np.random.default_rng(0)
        for _ in range(50):
            v = uniform_ball_sample(b.size, 1.0, rng)
            assert obj(y) <= obj(v) + 1e-10

    @hsettings(max_examples=10, deadline=None)
    @given(st.integers(min_value=1, max_value=5), st.integers(min_value=0, max_value=500))
    def test_prox_matches_fallback(self, dim, seed):
        rng = np.random.default_rng(seed)
        settings = get_test_settings()
        ball = L2BallSet(1.0, dim, settings)
        h = l1_term(float(rng.uniform(0.0, 1.0)), dim)
        g = rng.standard_normal(dim) * 2
        z = uniform_ball_sample(dim, 1.0, rng)
        closed = ball.solve_powered_prox(g, z, 2.0, 2.0, h)
        fallback = FeasibleSetOracle.solve_powered_prox(ball, g, z, 2.0, 2.0, h)
        assert powered_model_value(g, z, 2.0, 2.0, h, closed) <= (
            powered_model_value(g, z, 2.0, 2.0, h, fallback) + 1e-9
        )


class TestAnalysisL1:
    """g^T x + sum w_i |(T x)_i| over the ball"""

    def test_square_and_dual_agree(self):
        rng = np.random.default_rng(3)
        T = _orthogonal(4, 3)
        g = rng.standard_normal(4)
        w = rng.uniform(0.1, 0.6, 4)

        def obj(x):
            return float(g @ x + np.sum(w * np.abs(T @ x)))

        x_sq, gap_sq = ball_analysis_l1_linear_argmin(g, w, T, method="square")
        x_du, gap_du = ball_analysis_l1_linear_argmin(g, w, T, method="dual")
        assert gap_sq == 0.0
        assert gap_du <= 1e-6
        assert obj(x_sq) == pytest.approx(obj(x_du), abs=1e-6)

    def test_rectangular_gap_certified(self):
        rng = np.random.default_rng(5)
        q, _ = np.linalg.qr(rng.standard_normal((6, 3)))
        g = rng.standard_normal(3)
        x, gap = ball_analysis_l1_linear_argmin(g, np.full(6, 0.2), q)
        assert np.linalg.norm(x) <= 1.0 + 1e-12
        assert gap <= 1e-6

    def test_shape_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            ball_analysis_l1_linear_argmin(np.ones(3), np.ones(2), np.eye(3))

    def test_ball_dispatches_to_closed_form(self, test_settings):
        T = _orthogonal(3, 1)
        h = weighted_l1_term(np.full(3, 0.3), T)
        g = np.array([1.0, -2.0, 0.5])
        x = L2BallSet(1.0, 3, test_settings).solve_linear(g, h)
        expected, _ = ball_analysis_l1_linear_argmin(g, h.l1_weights, T)
        assert np.allclose(x, expected)


class TestBoxSet:
    """Separable subproblems on a box"""

    def test_linear_vertex(self):
        box = BoxSet(-np.ones(2), np.ones(2))
        y = box.solve_linear(np.array([1.0, -1.0]), zero_term(2))
        assert np.allclose(y, [-1.0, 1.0])

    def test_linear_zero_when_l1_dominates(self):
        box = BoxSet(-np.ones(2), np.ones(2))
        y = box.solve_linear(np.array([1.0, -1.0]), l1_term(2.0, 2))
        assert np.allclose(y, [0.0, 0.0])

    def test_prox_matches_fallback(self, test_settings):
        box = BoxSet(-np.ones(3), np.ones(3), test_settings)
        h = l1_term(0.3, 3)
        g = np.array([2.5, -0.2, 0.7])
        z = np.array([0.5, -0.5, 0.0])
        closed = box.solve_powered_prox(g, z, 1.5, 2.0, h)
        fallback = FeasibleSetOracle.solve_powered_prox(box, g, z, 1.5, 2.0, h)
        assert box.contains(closed)
        assert powered_model_value(g, z, 1.5, 2.0, h, closed) <= (
            powered_model_value(g, z, 1.5, 2.0, h, fallback) + 1e-9
        )

    def test_diameter(self):
        box = BoxSet(np.zeros(2), np.array([3.0, 4.0]))
        assert box.diam_p(2.0) == pytest.approx(5.0)

    def test_rejects_inverted_bounds(self):
        with pytest.raises(PreconditionError):
            BoxSet(np.ones(2), np.zeros(2))


class TestProductSet:
    """Block layout of concatenated vectors"""

    def test_split_join(self):
        product = ProductSet([L2BallSet(1.0, 2), L2BallSet(1.0, 3)])
        x = np.arange(5, dtype=float)
        blocks = product.split(x)
        assert [b.size for b in blocks] == [2, 3]
        assert np.array_equal(product.join(blocks), x)

    def test_diameter_combines_blocks(self):
        product = ProductSet([L2BallSet(1.0, 2), L2BallSet(1.0, 2)])
        assert product.diam_p(2.0) == pytest.approx(2.0 * math.sqrt(2.0))

    def test_contains_and_project(self):
        product = ProductSet([L2BallSet(1.0, 1), L2BallSet(1.0, 2)])
        x = np.array([2.0, 3.0, 4.0])
        assert not product.contains(x)
        assert np.allclose(product.project(x), [1.0, 0.6, 0.8])

    def test_wrong_length(self):
        with pytest.raises(DimensionMismatchError):
            ProductSet([L2BallSet(1.0, 2)]).split(np.ones(3))


class TestLineSearch:
    """Exact minimizer of the p-power model along a direction"""

    def test_quadratic_interior(self):
        assert line_search_alpha(-4.0, 4.0, 0.0, 0.0, 2.0, 2.0) == pytest.approx(0.5)

    def test_quadratic_full_step(self):
        assert line_search_alpha(-100.0, 1.0, 0.0, 0.0, 2.0, 2.0) == 1.0

    def test_nonnegative_slope(self):
        assert line_search_alpha(1.0, 1.0, 0.0, 0.0, 2.0, 2.0) == 0.0
        assert line_search_alpha(-1.0, 1.0, 0.0, 2.0, 2.0, 2.0) == 0.0

    def test_cubic_bisection(self, test_settings):
        alpha = line_search_alpha(-0.75, 1.0, 0.0, 0.0, 2.0, 3.0, test_settings)
        assert alpha == pytest.approx(0.5, abs=1e-8)

    def test_zero_direction(self):
        assert line_search_alpha(0.0, 0.0, 0.0, 0.0, 1.0, 2.0) == 0.0


class TestSampling:
    """Uniform points in the Euclidean ball"""

    def test_inside_radius(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            assert np.linalg.norm(uniform_ball_sample(4, 0.5, rng)) <= 0.5 + 1e-12

    def test_second_moment(self):
        rng = np.random.default_rng(1)
        n = 100000
        sq = np.array([np.sum(uniform_ball_sample(3, 1.0, rng) ** 2) for _ in range(n)])
        # E ||xi||^2 = dim / (dim + 2)
        assert abs(sq.mean() - 0.6) <= 5 * sq.std() / math.sqrt(n)

    def test_rejects_nonpositive_radius(self):
        with pytest.raises(PreconditionError):
            uniform_ball_sample(2, 0.0, np.random.default_rng(0))

    def test_ball_diameter_for_small_p(self):
        assert L2BallSet(1.0, 4).diam_p(1.0) == pytest.approx(4.0)
        assert L2BallSet(1.0, 4).diam_p(3.0) == pytest.approx(2.0)
