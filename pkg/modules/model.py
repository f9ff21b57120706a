"""
Composite Problem Model
=======================

This module defines the composite problem min Phi(x) = f(x) + h(x) over a compact
convex set, the smoothness parameters of the p-power descent condition, and the
empirical verifiers used to certify those parameters before a planner trusts them.

Features:
- Smooth and nonsmooth oracle containers with factory helpers
- Smoothness parameters (p, q, lambda) with conjugacy validation
- Sampled estimation of lambda and of Hoelder gradient constants
- One-parameter bound for the p-power function example
- Finite-difference gradient checks and midpoint convexity checks
- Problem instances with a default lower bound on the optimal value
"""

import logging
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable, Dict, Optional, Sequence

import numpy as np

from config.settings import Settings, get_settings
from modules.errors import (
    GradientCheckError,
    InfeasiblePointError,
    OracleError,
    PreconditionError,
    SamplingUnsupportedError,
)

if TYPE_CHECKING:
    from modules.geometry import FeasibleSetOracle

logger = logging.getLogger(__name__)

Vector = np.ndarray


def norm_p_pow(v: Vector, p: float) -> float:
    """Return ||v||_p ** p."""
    return float(np.sum(np.abs(v) ** p))


def conjugate_exponent(p: float) -> float:
    """q with 1/p + 1/q = 1."""
    if p <= 1:
        raise PreconditionError(f"p must exceed 1, got {p}")
    return p / (p - 1.0)


def _rng(seed) -> np.random.Generator:
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class SmoothnessParams:
    """Exponent p, its conjugate q and the constant lambda of the descent condition"""

    p: float
    lam: float
    q: float = field(init=False)

    def __post_init__(self):
        if self.p <= 1:
            raise PreconditionError(f"p must exceed 1, got {self.p}")
        if self.lam <= 0:
            raise PreconditionError(f"lambda must be positive, got {self.lam}")
        object.__setattr__(self, "q", conjugate_exponent(self.p))

    def with_lambda(self, lam: float) -> "SmoothnessParams":
        return SmoothnessParams(p=self.p, lam=lam)

    def to_dict(self) -> Dict[str, float]:
        return {"p": self.p, "q": self.q, "lambda": self.lam}


@dataclass(frozen=True)
class SmoothOracle:
    """Differentiable part f with its gradient"""

    eval: Callable[[Vector], float]
    grad: Callable[[Vector], Vector]
    concave: bool = False
    name: str = "f"

    def __call__(self, x: Vector) -> float:
        return float(self.eval(x))


@dataclass(frozen=True)
class NonsmoothTerm:
    """
    Convex (or, on the smoothing path, concave) nonsmooth part h

    ``bound`` is M, a bound on the 2-norm of subgradients on an enlargement of the
    feasible set. When ``l1_weights`` is set, h(x) = sum_i w_i |(T x)_i| exactly,
    with T = ``l1_operator`` (identity when None); feasible sets use this
    structure to pick closed-form subproblem solvers.
    """

    eval: Callable[[Vector], float]
    subgrad: Callable[[Vector], Vector]
    bound: float = 0.0
    concave: bool = False
    l1_weights: Optional[Vector] = None
    l1_operator: Optional[np.ndarray] = None
    name: str = "h"

    def __call__(self, x: Vector) -> float:
        return float(self.eval(x))

    @property
    def is_weighted_l1(self) -> bool:
        return self.l1_weights is not None and self.l1_operator is None

    @property
    def is_analysis_l1(self) -> bool:
        return self.l1_weights is not None and self.l1_operator is not None


# =============================================================================
# ORACLE FACTORIES
# =============================================================================


def linear_oracle(c: Vector) -> SmoothOracle:
    """f(x) = c^T x (both convex and concave)."""
    c = np.asarray(c, dtype=float)
    return SmoothOracle(
        eval=lambda x: float(c @ x),
        grad=lambda x: c.copy(),
        concave=True,
        name="linear",
    )


def quadratic_oracle(
    Q: np.ndarray, b: Optional[Vector] = None, center: Optional[Vector] = None
) -> SmoothOracle:
    """f(x) = 1/2 (x-c)^T Q (x-c) + b^T x; flagged concave when Q is negative semidefinite."""
    Q = np.asarray(Q, dtype=float)
    n = Q.shape[0]
    b = np.zeros(n) if b is None else np.asarray(b, dtype=float)
    c = np.zeros(n) if center is None else np.asarray(center, dtype=float)
    Qs = 0.5 * (Q + Q.T)
    concave = bool(np.max(np.linalg.eigvalsh(Qs)) <= 1e-12)

    def value(x):
        r = x - c
        return float(0.5 * r @ (Qs @ r) + b @ x)

    def gradient(x):
        return Qs @ (x - c) + b

    return SmoothOracle(eval=value, grad=gradient, concave=concave, name="quadratic")


def power_sum_oracle(p: float) -> SmoothOracle:
    """f(x) = sum_i x_i ** p on the nonnegative orthant."""

    def value(x):
        return float(np.sum(np.abs(x) ** p))

    def gradient(x):
        return p * np.sign(x) * np.abs(x) ** (p - 1.0)

    return SmoothOracle(eval=value, grad=gradient, concave=False, name=f"power_sum_{p}")


def weighted_l1_term(
    weights: Vector, operator: Optional[np.ndarray] = None, name: str = "weighted_l1"
) -> NonsmoothTerm:
    """h(x) = sum_i w_i |(T x)_i| with T = operator (identity when None)."""
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0):
        raise PreconditionError("L1 weights must be nonnegative")
    T = None if operator is None else np.asarray(operator, dtype=float)

    if T is None:

        def value(x):
            return float(np.sum(w * np.abs(x)))

        def subgradient(x):
            return w * np.sign(x)

        bound = float(np.linalg.norm(w))
    else:

        def value(x):
            return float(np.sum(w * np.abs(T @ x)))

        def subgradient(x):
            return T.T @ (w * np.sign(T @ x))

        bound = float(np.linalg.norm(w) * np.linalg.norm(T, 2))

    return NonsmoothTerm(
        eval=value,
        subgrad=subgradient,
        bound=bound,
        l1_weights=w,
        l1_operator=T,
        name=name,
    )


def l1_term(rho: float, dim: int) -> NonsmoothTerm:
    """h(x) = rho ||x||_1."""
    if rho < 0:
        raise PreconditionError(f"rho must be nonnegative, got {rho}")
    return weighted_l1_term(np.full(dim, float(rho)), name=f"l1_{rho}")


def zero_term(dim: int) -> NonsmoothTerm:
    """h = 0, expressed as an L1 term with zero weights."""
    return weighted_l1_term(np.zeros(dim), name="zero")


def power_term(exponent: float, dim: int, scale: float = 1.0, bound: float = 0.0):
    """Concave h(x) = scale * sum_i |x_i| ** exponent for 0 < exponent < 1."""
    if not 0 < exponent < 1:
        raise PreconditionError("power_term needs 0 < exponent < 1")

    def value(x):
        return float(scale * np.sum(np.abs(x) ** exponent))

    def gradient(x):
        with np.errstate(divide="ignore", invalid="ignore"):
            return scale * exponent * np.sign(x) * np.abs(x) ** (exponent - 1.0)

    return NonsmoothTerm(
        eval=value,
        subgrad=gradient,
        bound=bound,
        concave=True,
        name=f"power_{exponent}",
    )


# =============================================================================
# PROBLEM INSTANCE
# =============================================================================


@dataclass(frozen=True)
class ProblemInstance:
    """f + h over a feasible set, with smoothness parameters and a lower bound on Phi*"""

    f: SmoothOracle
    h: NonsmoothTerm
    feasible_set: "FeasibleSetOracle"
    params: SmoothnessParams
    phi_star_lower: Optional[float] = None
    name: str = "problem"

    def __post_init__(self):
        settings = get_settings()
        if self.phi_star_lower is None:
            object.__setattr__(
                self,
                "phi_star_lower",
                default_phi_star_lower(self.f, self.h, self.feasible_set, settings),
            )
        if settings.DEBUG:
            validate_oracle_gradient(self.f, self.feasible_set, settings)

    @property
    def dim(self) -> int:
        return self.feasible_set.dim

    def diam_p(self) -> float:
        return self.feasible_set.diam_p(self.params.p)

    def phi(self, x: Vector) -> float:
        return phi(self, x)

    def phi_gap(self, x0: Vector) -> float:
        """Phi(x0) - phi_star_lower, clipped at zero."""
        return max(phi(self, x0) - float(self.phi_star_lower), 0.0)

    def with_params(self, params: SmoothnessParams) -> "ProblemInstance":
        return ProblemInstance(
            f=self.f,
            h=self.h,
            feasible_set=self.feasible_set,
            params=params,
            phi_star_lower=self.phi_star_lower,
            name=self.name,
        )

    def validate_lower_bound(self, n_samples: int = 1000, rng_seed: int = 0) -> bool:
        """True when phi_star_lower <= Phi(x) on every sampled feasible x."""
        rng = _rng(rng_seed)
        for _ in range(n_samples):
            x = self.feasible_set.sample(rng)
            if phi(self, x) < self.phi_star_lower:
                logger.warning(f"Lower bound {self.phi_star_lower} violated at {x}")
                return False
        return True


def phi(problem: ProblemInstance, x: Vector) -> float:
    """Phi(x) = f(x) + h(x) at a feasible x."""
    x = np.asarray(x, dtype=float)
    if not problem.feasible_set.contains(x):
        raise InfeasiblePointError(f"Point is outside the feasible set of {problem.name}")
    return problem.f(x) + problem.h(x)


def default_phi_star_lower(
    f: SmoothOracle,
    h: NonsmoothTerm,
    feasible_set: "FeasibleSetOracle",
    settings: Optional[Settings] = None,
    rng_seed: int = 0,
) -> float:
    """
    Sampled minimum of Phi over random feasible points minus a relative margin.

    The margin is taken relative to max(|min|, spread of sampled values) so a
    zero sampled minimum still yields a strictly lower value.
    """
    settings = settings or get_settings()
    rng = _rng(rng_seed)
    values = np.empty(settings.PHI_STAR_SAMPLES)
    for i in range(settings.PHI_STAR_SAMPLES):
        x = _sample(feasible_set, rng)
        values[i] = f(x) + h(x)
    lo, hi = float(values.min()), float(values.max())
    scale = max(abs(lo), hi - lo)
    return lo - settings.PHI_STAR_MARGIN * scale


def _sample(feasible_set, rng) -> Vector:
    try:
        return feasible_set.sample(rng)
    except NotImplementedError as e:
        raise SamplingUnsupportedError(
            f"{type(feasible_set).__name__} does not support sampling"
        ) from e


def _sample_pair(feasible_set, p, rng, tol, max_attempts=100):
    for _ in range(max_attempts):
        x = _sample(feasible_set, rng)
        y = _sample(feasible_set, rng)
        if norm_p_pow(y - x, p) ** (1.0 / p) >= tol:
            return x, y
    raise OracleError("Could not draw a non-degenerate pair of feasible points")


# =============================================================================
# SMOOTHNESS ESTIMATION
# =============================================================================


def taylor_remainder(f: SmoothOracle, x: Vector, y: Vector) -> float:
    """f(y) - f(x) - grad f(x)^T (y - x)."""
    return f(y) - f(x) - float(f.grad(x) @ (y - x))


def estimate_lambda(
    f: SmoothOracle,
    feasible_set: "FeasibleSetOracle",
    p: float,
    n_pairs: int,
    rng_seed: int,
    settings: Optional[Settings] = None,
) -> float:
    """
    Largest sampled ratio 2 * remainder / ||y - x||_p^p, floored at LAMBDA_MIN.

    Degenerate pairs are resampled. The returned value satisfies the p-power
    descent inequality on every pair it was computed from.
    """
    if n_pairs < 1:
        raise PreconditionError("n_pairs must be >= 1")
    conjugate_exponent(p)
    settings = settings or get_settings()
    rng = _rng(rng_seed)

    lam_hat = settings.LAMBDA_MIN
    for _ in range(n_pairs):
        x, y = _sample_pair(feasible_set, p, rng, settings.DEGENERATE_PAIR_TOL)
        ratio = 2.0 * taylor_remainder(f, x, y) / norm_p_pow(y - x, p)
        lam_hat = max(lam_hat, ratio)

    logger.debug(f"estimate_lambda({f.name}, p={p}) -> {lam_hat:.6g} on {n_pairs} pairs")
    return float(lam_hat)


def lambda_failure_rate(
    f: SmoothOracle,
    feasible_set: "FeasibleSetOracle",
    p: float,
    lam: float,
    n_pairs: int,
    rng_seed: int,
    tol: float = 1e-12,
) -> float:
    """Fraction of fresh pairs violating f(y) <= f(x) + grad^T(y-x) + lam/2 ||y-x||_p^p."""
    rng = _rng(rng_seed)
    failures = 0
    for _ in range(n_pairs):
        x, y = _sample_pair(feasible_set, p, rng, tol)
        rhs = 0.5 * lam * norm_p_pow(y - x, p)
        if taylor_remainder(f, x, y) > rhs + tol * max(1.0, abs(rhs)):
            failures += 1
    return failures / n_pairs


def estimate_holder_constant(
    f: SmoothOracle,
    feasible_set: "FeasibleSetOracle",
    p: float,
    n_pairs: int,
    rng_seed: int,
    anchors: Optional[Sequence[Vector]] = None,
) -> float:
    """
    Pairwise maximization of ||grad f(x) - grad f(y)||_q^q / ||x - y||_p^p.

    ``anchors`` are extra feasible points paired with every sampled point (for
    example a vertex where the ratio is known to peak).
    """
    q = conjugate_exponent(p)
    rng = _rng(rng_seed)
    anchors = [np.asarray(a, dtype=float) for a in (anchors or [])]
    best = 0.0
    for _ in range(n_pairs):
        x, y = _sample_pair(feasible_set, p, rng, 1e-12)
        candidates = [(x, y)] + [(a, y) for a in anchors]
        for u, v in candidates:
            den = norm_p_pow(u - v, p)
            if den < 1e-300:
                continue
            best = max(best, norm_p_pow(f.grad(u) - f.grad(v), q) / den)
    return best


@dataclass
class HolderReport:
    """Outcome of the Hoelder-continuity and consequence checks"""

    n_pairs: int
    holder_pass: int
    holder_fail: int
    consequence_pass: int
    consequence_fail: int
    worst_holder_margin: float
    worst_consequence_margin: float

    @property
    def passed(self) -> bool:
        return self.holder_fail == 0 and self.consequence_fail == 0

    def to_dict(self) -> Dict[str, float]:
        return {
            "n_pairs": self.n_pairs,
            "holder_pass": self.holder_pass,
            "holder_fail": self.holder_fail,
            "consequence_pass": self.consequence_pass,
            "consequence_fail": self.consequence_fail,
            "worst_holder_margin": self.worst_holder_margin,
            "worst_consequence_margin": self.worst_consequence_margin,
        }


def verify_holder_power(
    f: SmoothOracle,
    feasible_set: "FeasibleSetOracle",
    p: float,
    M: float,
    n_pairs: int,
    rng_seed: int,
    tol: float = 1e-12,
) -> HolderReport:
    """
    Check ||grad f(x) - grad f(y)||_q^q <= M ||x - y||_p^p and the implied
    f(y) <= f(x) + grad f(x)^T (y - x) + (M^(1/q) / p) ||y - x||_p^p on sampled pairs.

    Margins are right-hand side minus left-hand side; negative means violated.
    """
    if M <= 0:
        raise PreconditionError("verify_holder_power needs M > 0")
    q = conjugate_exponent(p)
    rng = _rng(rng_seed)
    counts = {"hp": 0, "hf": 0, "cp": 0, "cf": 0}
    worst_h = math.inf
    worst_c = math.inf
    coef = M ** (1.0 / q) / p

    for _ in range(n_pairs):
        x, y = _sample_pair(feasible_set, p, rng, 1e-12)
        dist = norm_p_pow(y - x, p)

        lhs = norm_p_pow(f.grad(x) - f.grad(y), q)
        margin_h = M * dist - lhs
        worst_h = min(worst_h, margin_h)
        ok = margin_h >= -tol * max(1.0, lhs)
        counts["hp" if ok else "hf"] += 1

        margin_c = coef * dist - taylor_remainder(f, x, y)
        worst_c = min(worst_c, margin_c)
        ok = margin_c >= -tol * max(1.0, abs(f(y)))
        counts["cp" if ok else "cf"] += 1

    return HolderReport(
        n_pairs=n_pairs,
        holder_pass=counts["hp"],
        holder_fail=counts["hf"],
        consequence_pass=counts["cp"],
        consequence_fail=counts["cf"],
        worst_holder_margin=float(worst_h),
        worst_consequence_margin=float(worst_c),
    )


def one_parameter_ratio(k: np.ndarray, p: float) -> np.ndarray:
    """g(k) = (k^p - 1 - p (k - 1)) / |k - 1|^p for k >= 0, k != 1."""
    k = np.asarray(k, dtype=float)
    return (k**p - 1.0 - p * (k - 1.0)) / np.abs(k - 1.0) ** p


def one_parameter_lambda(p: float, k_grid: Optional[np.ndarray] = None) -> float:
    """max(2, 2 * sup g) over a grid of k >= 0 excluding k = 1."""
    if k_grid is None:
        k_grid = np.linspace(0.0, 10.0, 200001)
    k_grid = np.asarray(k_grid, dtype=float)
    k_grid = k_grid[(k_grid >= 0) & (np.abs(k_grid - 1.0) > 1e-4)]
    return max(2.0, 2.0 * float(np.max(one_parameter_ratio(k_grid, p))))


# =============================================================================
# ORACLE CHECKS
# =============================================================================


def check_gradient(
    f: SmoothOracle, points: Sequence[Vector], step: float = 1e-6
) -> float:
    """
    Worst relative error between grad f and central differences over ``points``.

    Errors are measured as ||fd - g|| / max(||g||, ||fd||, 1).
    """
    worst = 0.0
    for x in points:
        x = np.asarray(x, dtype=float)
        g = np.asarray(f.grad(x), dtype=float)
        fd = np.empty_like(x)
        for j in range(x.size):
            e = np.zeros_like(x)
            e[j] = step
            fd[j] = (f(x + e) - f(x - e)) / (2.0 * step)
        scale = max(np.linalg.norm(g), np.linalg.norm(fd), 1.0)
        worst = max(worst, float(np.linalg.norm(fd - g) / scale))
    return worst


def validate_oracle_gradient(
    f: SmoothOracle,
    feasible_set: "FeasibleSetOracle",
    settings: Optional[Settings] = None,
    n_points: int = 5,
    rng_seed: int = 0,
) -> float:
    """Raise GradientCheckError when check_gradient exceeds GRADIENT_CHECK_RTOL."""
    settings = settings or get_settings()
    rng = _rng(rng_seed)
    try:
        points = [feasible_set.sample(rng) for _ in range(n_points)]
    except NotImplementedError:
        logger.debug(f"Skipping gradient check for {f.name}: set cannot sample")
        return 0.0
    err = check_gradient(f, points)
    if err > settings.GRADIENT_CHECK_RTOL:
        raise GradientCheckError(
            f"Gradient of {f.name} differs from finite differences (rel err {err:.3g})"
        )
    return err


def check_convexity(
    h: NonsmoothTerm,
    feasible_set: "FeasibleSetOracle",
    n_pairs: int,
    rng_seed: int,
    tol: float = 1e-10,
) -> int:
    """Number of sampled pairs violating midpoint convexity; 0 when h is concave."""
    if h.concave:
        return 0
    rng = _rng(rng_seed)
    violations = 0
    for _ in range(n_pairs):
        x = _sample(feasible_set, rng)
        y = _sample(feasible_set, rng)
        if h(0.5 * (x + y)) > 0.5 * (h(x) + h(y)) + tol:
            violations += 1
    return violations
