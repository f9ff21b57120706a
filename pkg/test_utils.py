"""
Test utilities for the ncsolve solver toolkit
=============================================

Small seeded instances shared by the test suites, and the quiet test
settings profile. Importing this module selects the test profile for code
that calls ``get_settings()`` without an explicit settings object.
"""

import os
from itertools import product
from typing import Sequence

import numpy as np

os.environ.setdefault("NCSOLVE_ENVIRONMENT", "test")

from config.settings import Settings, get_test_settings  # noqa: E402
from modules.applications import DenseTensor  # noqa: E402
from modules.geometry import BoxSet, L2BallSet  # noqa: E402
from modules.model import (  # noqa: E402
    ProblemInstance,
    SmoothnessParams,
    l1_term,
    linear_oracle,
    quadratic_oracle,
    zero_term,
)
from modules.multiblock import BlockProblem  # noqa: E402

__all__ = [
    "get_test_settings",
    "make_ball_quadratic",
    "make_separable_block_quadratic",
    "make_linear_ball_problem",
    "make_box_quadratic",
    "brute_force_contract",
]


def make_ball_quadratic(
    dim: int = 3,
    rho: float = 0.1,
    seed: int = 0,
    lam: float = 2.0,
    p: float = 2.0,
    settings: Settings = None,
) -> ProblemInstance:
    """1/2 ||x - c||^2 + rho ||x||_1 on the unit ball, c drawn outside the ball."""
    rng = np.random.default_rng(seed)
    c = rng.standard_normal(dim)
    c = 2.0 * c / np.linalg.norm(c)
    return ProblemInstance(
        f=quadratic_oracle(np.eye(dim), center=c),
        h=l1_term(rho, dim),
        feasible_set=L2BallSet(1.0, dim, settings),
        params=SmoothnessParams(p=p, lam=lam),
        phi_star_lower=0.0,
        name="ball_quadratic",
    )


def make_linear_ball_problem(
    c: Sequence[float], rho: float = 0.0, lam: float = 1.0, settings: Settings = None
) -> ProblemInstance:
    """c^T x + rho ||x||_1 on the unit ball; concave f."""
    c = np.asarray(c, dtype=float)
    n = c.size
    return ProblemInstance(
        f=linear_oracle(c),
        h=l1_term(rho, n) if rho > 0 else zero_term(n),
        feasible_set=L2BallSet(1.0, n, settings),
        params=SmoothnessParams(p=2.0, lam=lam),
        phi_star_lower=-float(np.linalg.norm(c)) - 1.0,
        name="linear_ball",
    )


def make_box_quadratic(dim: int = 3, seed: int = 0, lam: float = 2.0) -> ProblemInstance:
    """1/2 ||x - c||^2 on [-1, 1]^n with zero h."""
    rng = np.random.default_rng(seed)
    return ProblemInstance(
        f=quadratic_oracle(np.eye(dim), center=rng.uniform(-2.0, 2.0, dim)),
        h=zero_term(dim),
        feasible_set=BoxSet(-np.ones(dim), np.ones(dim)),
        params=SmoothnessParams(p=2.0, lam=lam),
        phi_star_lower=0.0,
        name="box_quadratic",
    )


def make_separable_block_quadratic(
    dims: Sequence[int] = (2, 3), rho: float = 0.1, seed: int = 0, lam: float = 2.0
) -> BlockProblem:
    """Sum of independent ball quadratics, one per block, with a joint f."""
    rng = np.random.default_rng(seed)
    total = int(sum(dims))
    c = rng.standard_normal(total) * 1.5
    return BlockProblem(
        block_sets=[L2BallSet(1.0, n) for n in dims],
        block_h=[l1_term(rho, n) for n in dims],
        joint_f=quadratic_oracle(np.eye(total), center=c),
        params=SmoothnessParams(p=2.0, lam=lam),
        phi_star_lower=0.0,
        name="separable_blocks",
    )


def brute_force_contract(t: DenseTensor, blocks: Sequence[np.ndarray]) -> float:
    """Explicit loop over every index tuple."""
    total = 0.0
    for idx in product(*(range(n) for n in t.dims)):
        term = t.entries[idx]
        for mode, i in enumerate(idx):
            term *= blocks[mode][i]
        total += term
    return float(total)
