"""
Stationarity Certificates
=========================

Improvement certificates of the linear and p-powered model at a point and the
tests that turn them into epsilon-stationarity proofs.

Features:
- Linear-model improvement Delta_L and its minimizer
- Powered-model improvement Delta_U and its minimizer
- Certificate objects with thresholds, slack and JSON serialization
- Euclidean prox residual (gradient mapping)
- Sampled upper estimate of inf_y grad f(x)^T (y - x) + h(y) - h(x)
"""

import logging
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from config.settings import Settings, get_settings
from modules.errors import InfeasiblePointError, PreconditionError
from modules.model import NonsmoothTerm, ProblemInstance, Vector, conjugate_exponent, norm_p_pow

logger = logging.getLogger(__name__)


class CertificateKind(str, Enum):
    LINEAR = "linear"
    POWERED = "powered"


@dataclass
class StationarityCertificate:
    """
    Evidence that an iterate is epsilon-stationary

    ``passed`` is value <= threshold + slack, where slack absorbs subproblem
    tolerance. Block certificates carry per-block values and thresholds.
    """

    kind: CertificateKind
    value: float
    epsilon: float
    threshold: float
    iterate_index: int = 0
    passed: bool = False
    slack: float = 0.0
    block_values: Optional[List[float]] = None
    block_thresholds: Optional[List[float]] = None
    offending_blocks: List[int] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary for serialization"""
        data = asdict(self)
        data["kind"] = self.kind.value
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "StationarityCertificate":
        data = dict(data)
        data["kind"] = CertificateKind(data["kind"])
        return cls(**data)


def _require_feasible(problem: ProblemInstance, z: Vector) -> Vector:
    z = np.asarray(z, dtype=float)
    if not problem.feasible_set.contains(z):
        raise InfeasiblePointError(f"Point is outside the feasible set of {problem.name}")
    return z


def linear_improvement(g: Vector, z: Vector, y: Vector, h: NonsmoothTerm) -> float:
    """-g^T (y - z) + h(z) - h(y)."""
    return -float(g @ (y - z)) + h(z) - h(y)


def powered_improvement(
    g: Vector, z: Vector, y: Vector, lam: float, p: float, h: NonsmoothTerm
) -> float:
    """-g^T (y - z) - (lam/2) ||y - z||_p^p + h(z) - h(y)."""
    d = y - z
    return -float(g @ d) - 0.5 * lam * norm_p_pow(d, p) + h(z) - h(y)


def delta_L(problem: ProblemInstance, z: Vector) -> Tuple[float, Vector]:
    """Linear-model improvement at z and the linear subproblem minimizer."""
    z = _require_feasible(problem, z)
    g = problem.f.grad(z)
    z_l = problem.feasible_set.solve_linear(g, problem.h, warm_start=z)
    return linear_improvement(g, z, z_l, problem.h), z_l


def delta_U(problem: ProblemInstance, z: Vector) -> Tuple[float, Vector]:
    """Powered-model improvement at z and the powered subproblem minimizer."""
    z = _require_feasible(problem, z)
    g = problem.f.grad(z)
    lam, p = problem.params.lam, problem.params.p
    z_u = problem.feasible_set.solve_powered_prox(g, z, lam, p, problem.h)
    return powered_improvement(g, z, z_u, lam, p, problem.h), z_u


def powered_threshold(eps: float, diam_p: float, lam: float, p: float) -> float:
    """1/2 (eps / (diam_p lam^(1/p)))^q, valid when 0 < eps <= diam_p^p lam."""
    if eps <= 0:
        raise PreconditionError(f"eps must be positive, got {eps}")
    if eps > diam_p**p * lam:
        raise PreconditionError(
            f"powered certificate requires eps <= diam_p**p * lambda "
            f"({eps} > {diam_p ** p * lam})"
        )
    q = conjugate_exponent(p)
    return 0.5 * (eps / (diam_p * lam ** (1.0 / p))) ** q


def check_eps_stationary_L(
    delta_l: float,
    eps: float,
    iterate_index: int = 0,
    settings: Optional[Settings] = None,
) -> StationarityCertificate:
    """Certificate from the linear improvement: threshold eps."""
    if eps <= 0:
        raise PreconditionError(f"eps must be positive, got {eps}")
    slack = (settings or get_settings()).SUBPROBLEM_TOL
    return StationarityCertificate(
        kind=CertificateKind.LINEAR,
        value=float(delta_l),
        epsilon=eps,
        threshold=eps,
        iterate_index=iterate_index,
        passed=bool(delta_l <= eps + slack),
        slack=slack,
    )


def check_eps_stationary_U(
    delta_u: float,
    eps: float,
    diam_p: float,
    lam: float,
    p: float,
    iterate_index: int = 0,
    settings: Optional[Settings] = None,
) -> StationarityCertificate:
    """Certificate from the powered improvement."""
    threshold = powered_threshold(eps, diam_p, lam, p)
    slack = (settings or get_settings()).SUBPROBLEM_TOL
    return StationarityCertificate(
        kind=CertificateKind.POWERED,
        value=float(delta_u),
        epsilon=eps,
        threshold=threshold,
        iterate_index=iterate_index,
        passed=bool(delta_u <= threshold + slack),
        slack=slack,
    )


def prox_residual(
    problem: ProblemInstance, x: Vector, gamma: float
) -> Tuple[Vector, float]:
    """
    Gradient mapping P = (x - x+) / gamma with
    x+ = argmin grad f(x)^T y + ||y - x||^2 / (2 gamma) + h(y); returns (P, ||P||^2).
    """
    if gamma <= 0:
        raise PreconditionError(f"gamma must be positive, got {gamma}")
    x = _require_feasible(problem, x)
    g = problem.f.grad(x)
    x_plus = problem.feasible_set.solve_powered_prox(g, x, 1.0 / gamma, 2.0, problem.h)
    P = (x - x_plus) / gamma
    return P, float(P @ P)


def sampled_psi_lower(
    problem: ProblemInstance,
    x: Vector,
    n_samples: int,
    rng: np.random.Generator,
    include_linear_point: bool = True,
    max_distance: Optional[float] = None,
) -> float:
    """
    min over sampled feasible y of grad f(x)^T (y - x) + h(y) - h(x).

    x itself and, when requested, the linear subproblem minimizer are included
    among the candidates; ``max_distance`` keeps only ||y - x||_2 <= max_distance.
    """
    x = _require_feasible(problem, x)
    g = problem.f.grad(x)
    hx = problem.h(x)
    candidates = [problem.feasible_set.sample(rng) for _ in range(n_samples)]
    if include_linear_point:
        candidates.append(problem.feasible_set.solve_linear(g, problem.h, warm_start=x))

    best = 0.0
    for y in candidates:
        if max_distance is not None and np.linalg.norm(y - x) > max_distance:
            continue
        best = min(best, float(g @ (y - x)) + problem.h(y) - hx)
    return best
