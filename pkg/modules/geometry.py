"""
Feasible Sets and Subproblem Oracles
====================================

Concrete compact convex sets together with the solvers for the two model
subproblems every algorithm needs: the linearized problem
min g^T y + h(y) and the p-powered proximal problem
min g^T (y - z) + (lambda/2) ||y - z||_p^p + h(y).

Features:
- L2 ball, box and product sets with membership, p-diameters and projections
- Closed-form soft-threshold solvers for (weighted) L1 terms on the ball and box
- Exact dual solver for analysis-L1 terms sum w_i |(T x)_i| on the ball
- Projected-subgradient fallback for everything else
- One-dimensional line search for conditional-gradient steps
- Uniform sampling in Euclidean balls
"""

import logging
from abc import ABC, abstractmethod
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import bisect, lsq_linear

from config.settings import Settings, get_settings
from modules.errors import DimensionMismatchError, PreconditionError
from modules.model import NonsmoothTerm, Vector, norm_p_pow

logger = logging.getLogger(__name__)

Weights = Union[float, np.ndarray]


# =============================================================================
# CLOSED FORMS
# =============================================================================


def soft_threshold(b: Vector, rho: Weights) -> Vector:
    """Componentwise sign(b) * max(|b| - rho, 0); rho may be per-coordinate."""
    b = np.asarray(b, dtype=float)
    return np.sign(b) * np.maximum(np.abs(b) - rho, 0.0)


def ball_l1_linear_argmin(b: Vector, rho: Weights, radius: float = 1.0) -> Vector:
    """Minimizer of -y^T b + sum rho_i |y_i| over ||y||_2 <= radius."""
    z = soft_threshold(b, rho)
    nz = np.linalg.norm(z)
    if nz == 0.0:
        return np.zeros_like(z)
    return radius * z / nz


def ball_l1_prox_argmin(
    b: Vector, rho: Weights, lam: float, radius: float = 1.0
) -> Vector:
    """
    Minimizer of -y^T b + sum rho_i |y_i| + (lam/2) ||y||_2^2 over ||y||_2 <= radius.

    The powered-prox subproblem at center x with gradient g is the case b = lam x - g.
    """
    if lam <= 0:
        raise PreconditionError(f"lambda must be positive, got {lam}")
    z = soft_threshold(b, rho)
    nz = np.linalg.norm(z)
    return z / (lam + max(0.0, nz / radius - lam))


def _is_square_orthogonal(T: np.ndarray, tol: float = 1e-8) -> bool:
    m, n = T.shape
    return m == n and np.allclose(T.T @ T, np.eye(n), atol=tol)


def ball_analysis_l1_linear_argmin(
    g: Vector,
    weights: Vector,
    operator: np.ndarray,
    radius: float = 1.0,
    method: str = "auto",
) -> Tuple[Vector, float]:
    """
    Minimize g^T x + sum_i w_i |(T x)_i| over ||x||_2 <= radius.

    Returns the minimizer and a certified objective gap. A square orthogonal T is
    handled by the change of variables u = T x and the weighted closed form.
    Otherwise the dual max_{||v||_inf <= 1} -radius ||g + A^T v||_2 with
    A = diag(w) T is solved as a bounded least-squares problem and the primal
    point recovered as x = -radius u / ||u||, u = g + A^T v.
    """
    g = np.asarray(g, dtype=float)
    w = np.asarray(weights, dtype=float)
    T = np.asarray(operator, dtype=float)
    if T.shape[1] != g.size or T.shape[0] != w.size:
        raise DimensionMismatchError(
            f"operator {T.shape} incompatible with g ({g.size}) and weights ({w.size})"
        )

    if method not in ("auto", "square", "dual"):
        raise PreconditionError(f"Unknown method {method}")
    if not np.any(w):
        ng = np.linalg.norm(g)
        return (np.zeros_like(g) if ng == 0.0 else -radius * g / ng), 0.0
    if method == "square" or (method == "auto" and _is_square_orthogonal(T)):
        u = ball_l1_linear_argmin(-(T @ g), w, radius)
        return T.T @ u, 0.0

    A = w[:, None] * T
    res = lsq_linear(A.T, -g, bounds=(-1.0, 1.0), method="bvls", tol=1e-12)
    u = g + A.T @ res.x
    nu = np.linalg.norm(u)
    x = np.zeros_like(g) if nu <= 1e-14 else -radius * u / nu
    primal = float(g @ x + np.sum(np.abs(A @ x)))
    gap = primal + radius * nu
    if gap > 1e-8:
        logger.warning(f"Analysis-L1 dual solve left an objective gap of {gap:.3g}")
    return x, float(gap)


# =============================================================================
# FALLBACK SOLVER
# =============================================================================


def projected_subgradient(
    objective: Callable[[Vector], float],
    subgradient: Callable[[Vector], Vector],
    project: Callable[[Vector], Vector],
    x0: Vector,
    n_iters: int,
    step0: float,
) -> Vector:
    """Projected subgradient with steps step0 / sqrt(k+1); returns the best iterate."""
    x = project(np.asarray(x0, dtype=float))
    best, best_val = x.copy(), objective(x)
    for k in range(n_iters):
        s = subgradient(x)
        ns = np.linalg.norm(s)
        if ns == 0.0 or not np.isfinite(ns):
            break
        x = project(x - (step0 / np.sqrt(k + 1.0)) * s / ns)
        val = objective(x)
        if val < best_val:
            best, best_val = x.copy(), val
    return best


def powered_model_value(
    g: Vector, center: Vector, lam: float, p: float, h: NonsmoothTerm, y: Vector
) -> float:
    """g^T (y - z) + (lam/2) ||y - z||_p^p + h(y)."""
    d = y - center
    return float(g @ d) + 0.5 * lam * norm_p_pow(d, p) + h(y)


# =============================================================================
# FEASIBLE SETS
# =============================================================================


class FeasibleSetOracle(ABC):
    """
    Capability bundle of a compact convex set

    Subclasses provide membership, p-diameters, projection and sampling, and may
    override the two subproblem solvers with closed forms. The defaults fall back
    to projected subgradient.
    """

    dim: int

    def __init__(self, settings: Optional[Settings] = None):
        self.settings = settings or get_settings()

    @abstractmethod
    def contains(self, x: Vector, tol: float = 1e-9) -> bool:
        """Membership test with tolerance"""

    @abstractmethod
    def diam_p(self, p: float) -> float:
        """max ||x - y||_p over the set"""

    @abstractmethod
    def project(self, x: Vector) -> Vector:
        """Euclidean projection onto the set"""

    def sample(self, rng: np.random.Generator) -> Vector:
        """Random feasible point"""
        raise NotImplementedError(f"{type(self).__name__} cannot sample")

    def center(self) -> Vector:
        return self.project(np.zeros(self.dim))

    def solve_linear(
        self, g: Vector, h: NonsmoothTerm, warm_start: Optional[Vector] = None
    ) -> Vector:
        """argmin over the set of g^T y + h(y)"""
        g = np.asarray(g, dtype=float)
        start = self.center() if warm_start is None else warm_start
        logger.debug(f"{type(self).__name__}.solve_linear using fallback for {h.name}")
        return projected_subgradient(
            lambda y: float(g @ y) + h(y),
            lambda y: g + h.subgrad(y),
            self.project,
            start,
            self.settings.FALLBACK_ITERATIONS,
            0.5 * self.diam_p(2.0),
        )

    def solve_powered_prox(
        self, g: Vector, center: Vector, lam: float, p: float, h: NonsmoothTerm
    ) -> Vector:
        """argmin over the set of g^T (y - z) + (lam/2) ||y - z||_p^p + h(y)"""
        g = np.asarray(g, dtype=float)
        z = np.asarray(center, dtype=float)
        logger.debug(
            f"{type(self).__name__}.solve_powered_prox using fallback (p={p}, {h.name})"
        )

        def subgradient(y):
            d = y - z
            return g + 0.5 * lam * p * np.sign(d) * np.abs(d) ** (p - 1.0) + h.subgrad(y)

        return projected_subgradient(
            lambda y: powered_model_value(g, z, lam, p, h, y),
            subgradient,
            self.project,
            z,
            self.settings.FALLBACK_ITERATIONS,
            0.5 * self.diam_p(2.0),
        )


class L2BallSet(FeasibleSetOracle):
    """Euclidean ball of given radius centered at the origin"""

    def __init__(self, radius: float, dim: int, settings: Optional[Settings] = None):
        super().__init__(settings)
        if radius <= 0:
            raise PreconditionError(f"radius must be positive, got {radius}")
        self.radius = float(radius)
        self.dim = int(dim)

    def contains(self, x: Vector, tol: float = 1e-9) -> bool:
        x = np.asarray(x, dtype=float)
        return x.shape == (self.dim,) and np.linalg.norm(x) <= self.radius + tol

    def diam_p(self, p: float) -> float:
        # the extreme chord is an axis for p >= 2 and the all-ones diagonal for p < 2
        return 2.0 * self.radius * max(1.0, self.dim ** (1.0 / p - 0.5))

    def project(self, x: Vector) -> Vector:
        nx = np.linalg.norm(x)
        return x if nx <= self.radius else x * (self.radius / nx)

    def sample(self, rng: np.random.Generator) -> Vector:
        return uniform_ball_sample(self.dim, self.radius, rng)

    def solve_linear(self, g, h, warm_start=None):
        g = np.asarray(g, dtype=float)
        if h.is_weighted_l1:
            return ball_l1_linear_argmin(-g, h.l1_weights, self.radius)
        if h.is_analysis_l1:
            x, _ = ball_analysis_l1_linear_argmin(
                g, h.l1_weights, h.l1_operator, self.radius
            )
            return x
        return super().solve_linear(g, h, warm_start)

    def solve_powered_prox(self, g, center, lam, p, h):
        if p == 2 and h.is_weighted_l1:
            b = lam * np.asarray(center, dtype=float) - np.asarray(g, dtype=float)
            return ball_l1_prox_argmin(b, h.l1_weights, lam, self.radius)
        return super().solve_powered_prox(g, center, lam, p, h)

    def __repr__(self) -> str:
        return f"L2BallSet(radius={self.radius}, dim={self.dim})"


class BoxSet(FeasibleSetOracle):
    """Axis-aligned box lower <= x <= upper"""

    def __init__(self, lower: Vector, upper: Vector, settings: Optional[Settings] = None):
        super().__init__(settings)
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)
        if self.lower.shape != self.upper.shape or np.any(self.lower > self.upper):
            raise PreconditionError("Box bounds must have equal shape and lower <= upper")
        self.dim = self.lower.size

    def contains(self, x: Vector, tol: float = 1e-9) -> bool:
        x = np.asarray(x, dtype=float)
        return (
            x.shape == (self.dim,)
            and bool(np.all(x >= self.lower - tol))
            and bool(np.all(x <= self.upper + tol))
        )

    def diam_p(self, p: float) -> float:
        return norm_p_pow(self.upper - self.lower, p) ** (1.0 / p)

    def project(self, x: Vector) -> Vector:
        return np.clip(x, self.lower, self.upper)

    def sample(self, rng: np.random.Generator) -> Vector:
        return rng.uniform(self.lower, self.upper)

    def solve_linear(self, g, h, warm_start=None):
        if not h.is_weighted_l1:
            return super().solve_linear(g, h, warm_start)
        g = np.asarray(g, dtype=float)
        w = np.broadcast_to(h.l1_weights, g.shape)
        # separable: each coordinate attains its minimum at a bound or at zero
        v_lo = g * self.lower + w * np.abs(self.lower)
        v_hi = g * self.upper + w * np.abs(self.upper)
        y = np.where(v_hi < v_lo, self.upper, self.lower)
        best = np.minimum(v_lo, v_hi)
        zero_ok = (self.lower <= 0) & (self.upper >= 0) & (best > 0)
        return np.where(zero_ok, 0.0, y)

    def solve_powered_prox(self, g, center, lam, p, h):
        if p == 2 and h.is_weighted_l1:
            b = lam * np.asarray(center, dtype=float) - np.asarray(g, dtype=float)
            return np.clip(soft_threshold(b, h.l1_weights) / lam, self.lower, self.upper)
        return super().solve_powered_prox(g, center, lam, p, h)

    def __repr__(self) -> str:
        return f"BoxSet(dim={self.dim})"


class ProductSet(FeasibleSetOracle):
    """Cartesian product of block sets acting on concatenated vectors"""

    def __init__(
        self, blocks: Sequence[FeasibleSetOracle], settings: Optional[Settings] = None
    ):
        super().__init__(settings)
        self.blocks: List[FeasibleSetOracle] = list(blocks)
        sizes = [b.dim for b in self.blocks]
        self.offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
        self.dim = int(self.offsets[-1])

    def split(self, x: Vector) -> List[Vector]:
        x = np.asarray(x, dtype=float)
        if x.size != self.dim:
            raise DimensionMismatchError(f"Expected {self.dim} entries, got {x.size}")
        return [x[self.offsets[i] : self.offsets[i + 1]] for i in range(len(self.blocks))]

    def join(self, blocks: Sequence[Vector]) -> Vector:
        return np.concatenate([np.asarray(b, dtype=float) for b in blocks])

    def contains(self, x: Vector, tol: float = 1e-9) -> bool:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            return False
        return all(b.contains(xi, tol) for b, xi in zip(self.blocks, self.split(x)))

    def diam_p(self, p: float) -> float:
        return sum(b.diam_p(p) ** p for b in self.blocks) ** (1.0 / p)

    def project(self, x: Vector) -> Vector:
        return self.join([b.project(xi) for b, xi in zip(self.blocks, self.split(x))])

    def sample(self, rng: np.random.Generator) -> Vector:
        return self.join([b.sample(rng) for b in self.blocks])


# =============================================================================
# LINE SEARCH AND SAMPLING
# =============================================================================


def line_search_alpha(
    gd: float,
    dnorm_p: float,
    hx: float,
    hy: float,
    lam: float,
    p: float,
    settings: Optional[Settings] = None,
) -> float:
    """
    Global minimizer on [0, 1] of
    phi(a) = a gd + a^p (lam/2) dnorm_p + (1 - a) hx + a hy.
    """
    if lam <= 0 or p <= 1:
        raise PreconditionError("line search needs lambda > 0 and p > 1")
    slope = gd + hy - hx
    if dnorm_p <= 0.0:
        return 0.0 if slope >= 0 else 1.0
    if slope >= 0:
        return 0.0
    if p == 2:
        return float(min(1.0, max(0.0, -slope / (lam * dnorm_p))))

    settings = settings or get_settings()
    curvature = 0.5 * p * lam * dnorm_p

    def derivative(a):
        return slope + curvature * a ** (p - 1.0)

    if derivative(1.0) <= settings.BISECTION_DERIV_TOL:
        return 1.0
    return float(bisect(derivative, 0.0, 1.0, xtol=settings.BISECTION_INTERVAL_TOL))


def uniform_ball_sample(dim: int, r: float, rng: np.random.Generator) -> Vector:
    """Uniform sample in {||y||_2 <= r}: Gaussian direction scaled by r U^(1/dim)."""
    if r <= 0:
        raise PreconditionError(f"radius must be positive, got {r}")
    direction = rng.standard_normal(dim)
    direction /= np.linalg.norm(direction)
    return r * rng.uniform() ** (1.0 / dim) * direction
