"""
Stochastic Solvers
==================

Stochastic first-order oracles, the mini-batch powered-proximal method with its
batch planner, and the randomized-smoothing conditional-gradient method for
nonsmooth (possibly concave) h.

Features:
- Gaussian and bounded-uniform additive noise oracles calibrated to a q-th moment
- Batch-size and iteration planner with side-condition reporting
- Mini-batch powered-proximal method with exact-certificate shadowing
- Monte Carlo estimates of the ball-smoothed h and its gradient
- Smoothed conditional gradient with its sample-size schedule
- Per-step child random streams keyed by (seed, k)
"""

import hashlib
import json
import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Union

import numpy as np
from scipy.special import gamma as gamma_fn

from config.settings import Settings, get_settings
from modules.deterministic import ceil_count
from modules.errors import InfeasiblePointError, OracleError, PreconditionError
from modules.geometry import line_search_alpha, uniform_ball_sample
from modules.model import (
    NonsmoothTerm,
    ProblemInstance,
    SmoothOracle,
    Vector,
    conjugate_exponent,
    norm_p_pow,
    zero_term,
)
from modules.stationarity import (
    check_eps_stationary_L,
    check_eps_stationary_U,
    delta_U,
    powered_improvement,
)
from modules.trace import IterationTrace, Stopwatch, TraceRow

logger = logging.getLogger(__name__)

Schedule = Union[int, Sequence[int], Callable[[int], int]]


def step_rng(seed: int, k: int) -> np.random.Generator:
    """Child stream for step k of the run seeded with ``seed``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(k)]))


def rng_digest(rng: np.random.Generator) -> str:
    state = json.dumps(rng.bit_generator.state, sort_keys=True, default=str)
    return hashlib.sha256(state.encode("utf-8")).hexdigest()[:16]


def batch_mean(samples: Sequence[Vector]) -> Vector:
    """Mean in sample-index order, shifted by the first sample; identical samples average exactly."""
    stack = np.stack(samples)
    base = stack[0]
    return base + np.mean(stack - base, axis=0)


def batch_size(schedule: Schedule, k: int) -> int:
    if callable(schedule):
        m = schedule(k)
    elif isinstance(schedule, (int, np.integer)):
        m = schedule
    else:
        m = schedule[k - 1]
    if m < 1:
        raise PreconditionError(f"batch size at step {k} must be >= 1, got {m}")
    return int(m)


# =============================================================================
# STOCHASTIC ORACLES
# =============================================================================


class StochasticOracle(ABC):
    """
    Unbiased noisy gradient source with E ||G - grad f||_q^q <= sigma^q

    ``true_grad`` exposes the exact gradient for test-mode shadow certificates.
    """

    def __init__(self, f: SmoothOracle, sigma: float, q: float, dim: int):
        if sigma < 0:
            raise PreconditionError(f"sigma must be nonnegative, got {sigma}")
        self.f = f
        self.sigma = float(sigma)
        self.q = float(q)
        self.dim = int(dim)

    @abstractmethod
    def noise(self, rng: np.random.Generator) -> Vector:
        """Zero-mean perturbation"""

    def sample_grad(self, x: Vector, rng: np.random.Generator) -> Vector:
        return self.f.grad(x) + self.noise(rng)

    def true_grad(self, x: Vector) -> Vector:
        return self.f.grad(x)


class GaussianNoiseOracle(StochasticOracle):
    """i.i.d. Gaussian noise per coordinate with E ||xi||_q^q = sigma^q exactly"""

    def __init__(self, f: SmoothOracle, sigma: float, q: float, dim: int):
        super().__init__(f, sigma, q, dim)
        # E|Z|^q for a standard normal Z
        abs_moment = 2.0 ** (q / 2.0) * gamma_fn((q + 1.0) / 2.0) / math.sqrt(math.pi)
        self.scale = self.sigma / (dim * abs_moment) ** (1.0 / q)

    def noise(self, rng):
        return self.scale * rng.standard_normal(self.dim)


class UniformNoiseOracle(StochasticOracle):
    """i.i.d. uniform noise on [-a, a] with E ||xi||_q^q = sigma^q"""

    def __init__(self, f: SmoothOracle, sigma: float, q: float, dim: int):
        super().__init__(f, sigma, q, dim)
        self.half_width = self.sigma * ((q + 1.0) / dim) ** (1.0 / q)

    def noise(self, rng):
        return rng.uniform(-self.half_width, self.half_width, self.dim)


def make_noise_oracle(model: str, f: SmoothOracle, sigma: float, q: float, dim: int):
    if model == "gaussian":
        return GaussianNoiseOracle(f, sigma, q, dim)
    if model == "uniform":
        return UniformNoiseOracle(f, sigma, q, dim)
    raise PreconditionError(f"Unknown noise model '{model}'")


def empirical_moment(
    oracle: StochasticOracle, x: Vector, n_samples: int, rng: np.random.Generator
) -> float:
    """Sample mean of ||G(x) - grad f(x)||_q^q."""
    g = oracle.true_grad(x)
    return float(
        np.mean([norm_p_pow(oracle.sample_grad(x, rng) - g, oracle.q) for _ in range(n_samples)])
    )


# =============================================================================
# PLANNERS
# =============================================================================


@dataclass
class StochasticPlan:
    """Total oracle calls, batch size and derived iteration count"""

    n_bar: int
    m: int
    n_iters: int
    side_condition_calls: bool
    side_condition_batch: bool
    warnings: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "n_bar": self.n_bar,
            "m": self.m,
            "n_iters": self.n_iters,
            "side_condition_calls": self.side_condition_calls,
            "side_condition_batch": self.side_condition_batch,
            "warnings": list(self.warnings),
        }


def plan_alg3(
    eps: float, sigma: float, lam: float, p: float, diam_p: float, phi_gap: float
) -> StochasticPlan:
    """
    N_bar = ceil((4 sigma)^p lam^(q-1) diam^(pq) gap (1 + (q-1)^(1/q - 1/p))^p / (p eps^(pq)))
    m = ceil(min(max(1, sigma ((q-1) N_bar)^(1/q) / ((lam p)^(1/p) gap^(1/q))), N_bar))

    Side conditions on N_bar are reported, not enforced.
    """
    if p < 2 or abs(p - round(p)) > 1e-12:
        raise PreconditionError(f"mini-batch planner needs an integer p >= 2, got {p}")
    if eps <= 0 or lam <= 0:
        raise PreconditionError("eps and lambda must be positive")
    q = conjugate_exponent(p)
    if sigma > 0 and phi_gap <= 0:
        raise PreconditionError("phi_gap must be positive when sigma > 0")

    factor = (1.0 + (q - 1.0) ** (-1.0 / p + 1.0 / q)) ** p
    n_bar = ceil_count(
        (4.0 * sigma) ** p
        * lam ** (q - 1.0)
        * diam_p ** (p * q)
        * phi_gap
        * factor
        / (p * eps ** (p * q))
    )
    if sigma == 0:
        m = 1
    else:
        raw = sigma * ((q - 1.0) * n_bar) ** (1.0 / q) / ((lam * p) ** (1.0 / p) * phi_gap ** (1.0 / q))
        m = ceil_count(min(max(1.0, raw), float(n_bar)))

    warnings = []
    if sigma > 0:
        cond_calls = n_bar >= sigma**p * (q - 1.0) ** (p / q) / (lam * p * phi_gap ** (p / q))
        cond_batch = n_bar >= (lam * p) ** (q / p) * sigma**q / phi_gap
    else:
        cond_calls = cond_batch = True
    if not cond_calls:
        warnings.append("N_bar below the batch-size lower side condition")
    if not cond_batch:
        warnings.append("N_bar below the batch-size upper side condition")
    for w in warnings:
        logger.warning(f"plan_alg3: {w} (eps={eps})")

    return StochasticPlan(
        n_bar=n_bar,
        m=m,
        n_iters=max(1, n_bar // m),
        side_condition_calls=cond_calls,
        side_condition_batch=cond_batch,
        warnings=warnings,
    )


def minibatch_expectation_bound(
    sigma: float, lam: float, p: float, batches: Sequence[int], phi_gap: float
) -> float:
    """(2 sigma^q / (lam p)^(q/p) * sum_k 1/m_k^(q-1) + gap) / N."""
    q = conjugate_exponent(p)
    n = len(batches)
    noise = 2.0 * sigma**q / (lam * p) ** (q / p) * sum(1.0 / m ** (q - 1.0) for m in batches)
    return (noise + phi_gap) / n


@dataclass
class SmoothingConfig:
    """Ball radius r, subgradient bound M and the per-step sample counts m_k"""

    r: float
    M: float
    batch: Schedule = 1

    def __post_init__(self):
        if self.r <= 0:
            raise PreconditionError(f"smoothing radius must be positive, got {self.r}")
        if self.M < 0:
            raise PreconditionError(f"M must be nonnegative, got {self.M}")

    def m_k(self, k: int) -> int:
        return batch_size(self.batch, k)


@dataclass
class SmoothingPlan:
    n_iters: int
    m: int


def plan_alg4(
    eps: float,
    phi_gap: float,
    diam_p: float,
    diam_2: float,
    lam: float,
    p: float,
    M: float,
) -> SmoothingPlan:
    """N = ceil(4 gap (diam_p^p lam)^(q-1) / eps^q), m = ceil(diam_2^2 M^2 N^2 / gap^2)."""
    scale = diam_p**p * lam
    if not 0 < eps <= scale:
        raise PreconditionError(f"planner requires 0 < eps <= diam_p**p * lambda ({eps} vs {scale})")
    q = conjugate_exponent(p)
    n = ceil_count(4.0 * max(phi_gap, 0.0) * scale ** (q - 1.0) / eps**q)
    m = 1 if phi_gap <= 0 else ceil_count(diam_2**2 * M**2 * n**2 / phi_gap**2)
    return SmoothingPlan(n_iters=n, m=m)


# =============================================================================
# MINI-BATCH POWERED PROXIMAL METHOD
# =============================================================================


def run_alg3(
    problem: ProblemInstance,
    oracle: StochasticOracle,
    x0: Vector,
    n_iters: int,
    m_schedule: Schedule,
    rng_seed: int,
    eps: Optional[float] = None,
    record_exact: bool = True,
    record_timing: bool = False,
    settings: Optional[Settings] = None,
) -> IterationTrace:
    """
    Powered-proximal steps driven by averaged stochastic gradients. Runs all
    ``n_iters`` steps and selects k~ = argmin of the sampled improvement.
    """
    settings = settings or get_settings()
    p, lam = problem.params.p, problem.params.lam
    if p < 2:
        raise PreconditionError("mini-batch method needs p >= 2")
    x = np.array(x0, dtype=float)
    if not problem.feasible_set.contains(x):
        raise InfeasiblePointError("Initial point is outside the feasible set")
    S, h, f = problem.feasible_set, problem.h, problem.f

    logger.info(f"alg3: N={n_iters}, sigma={oracle.sigma}, lambda={lam:.4g}, seed={rng_seed}")
    trace = IterationTrace(
        algorithm="alg3",
        planned_n=n_iters,
        config={"n_iters": n_iters, "rng_seed": rng_seed, "sigma": oracle.sigma, "eps": eps},
    )
    clock = Stopwatch(record_timing)
    iterates = []

    for k in range(1, n_iters + 1):
        rng = step_rng(rng_seed, k)
        m = batch_size(m_schedule, k)
        G = batch_mean([oracle.sample_grad(x, rng) for _ in range(m)])
        y = S.solve_powered_prox(G, x, lam, p, h)
        delta = powered_improvement(G, x, y, lam, p, h)
        exact = delta_U(problem, x)[0] if record_exact else None
        trace.append(
            TraceRow(
                k=k,
                phi=f(x) + h(x),
                cert=delta,
                wall_ns=clock.elapsed(),
                exact_cert=exact,
                rng_digest=rng_digest(rng),
            )
        )
        iterates.append(x)
        x = y

    trace.select_best()
    trace.x_final = x
    trace.x_best = iterates[trace.best_index]
    if eps is not None:
        trace.certificate = check_eps_stationary_U(
            trace.best_row.cert, eps, problem.diam_p(), lam, p, trace.best_row.k, settings
        )
    logger.info(f"alg3 finished: k~={trace.best_row.k}, sampled delta_U={trace.best_row.cert:.3e}")
    return trace


@dataclass
class ReplicationResult:
    """Best sampled certificate per seed with its mean and standard error"""

    rows: List[Dict[str, Any]]

    @property
    def values(self) -> np.ndarray:
        return np.array([r["value"] for r in self.rows])

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    @property
    def stderr(self) -> float:
        v = self.values
        return float(np.std(v, ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0


def replicate_alg3(
    problem: ProblemInstance,
    oracle: StochasticOracle,
    x0: Vector,
    n_iters: int,
    m_schedule: Schedule,
    seeds: Sequence[int],
    settings: Optional[Settings] = None,
) -> ReplicationResult:
    rows = []
    for seed in seeds:
        trace = run_alg3(
            problem, oracle, x0, n_iters, m_schedule, seed, record_exact=False, settings=settings
        )
        rows.append(
            {
                "seed": int(seed),
                "best_k": trace.best_row.k,
                "value": trace.best_row.cert,
                "exact_value": delta_U(problem, trace.x_best)[0],
            }
        )
    return ReplicationResult(rows=rows)


# =============================================================================
# RANDOMIZED SMOOTHING
# =============================================================================


@dataclass
class SmoothedEstimate:
    """Monte Carlo estimate of h_r(x) and grad h_r(x)"""

    value: float
    gradient: Vector
    value_stderr: float

    def __iter__(self):
        yield self.value
        yield self.gradient


def _smoothed_gradients(
    h: NonsmoothTerm, x: Vector, r: float, m: int, rng: np.random.Generator, max_resample: int = 100
) -> List[Vector]:
    grads = []
    for _ in range(m):
        for _ in range(max_resample):
            g = h.subgrad(x + r * uniform_ball_sample(x.size, r=1.0, rng=rng))
            if np.all(np.isfinite(g)):
                grads.append(g)
                break
        else:
            raise OracleError(f"Gradient of {h.name} unavailable after {max_resample} draws")
    return grads


def estimate_h_r(
    h: NonsmoothTerm, x: Vector, r: float, n_samples: int, rng: np.random.Generator
) -> SmoothedEstimate:
    """Sample means of h(x + r xi) and grad h(x + r xi) for xi uniform in the unit ball."""
    x = np.asarray(x, dtype=float)
    values = np.empty(n_samples)
    grads = []
    for i in range(n_samples):
        point = x + r * uniform_ball_sample(x.size, 1.0, rng)
        values[i] = h(point)
        grads.append(h.subgrad(point))
    grads = [g for g in grads if np.all(np.isfinite(g))]
    gradient = batch_mean(grads) if grads else np.zeros_like(x)
    stderr = float(np.std(values, ddof=1) / math.sqrt(n_samples)) if n_samples > 1 else 0.0
    return SmoothedEstimate(value=float(np.mean(values)), gradient=gradient, value_stderr=stderr)


def run_alg4(
    problem: ProblemInstance,
    smoothing: SmoothingConfig,
    x0: Vector,
    n_iters: int,
    rng_seed: int,
    eps: Optional[float] = None,
    record_timing: bool = False,
    settings: Optional[Settings] = None,
) -> IterationTrace:
    """
    Conditional gradient on f + h_r: the linear subproblem uses grad f plus the
    sampled smoothed-h gradient with no h term, and the step size minimizes
    a (c^T d) + a^p (lam/2) ||d||_p^p.
    """
    settings = settings or get_settings()
    x = np.array(x0, dtype=float)
    if not problem.feasible_set.contains(x):
        raise InfeasiblePointError("Initial point is outside the feasible set")
    S, h, f = problem.feasible_set, problem.h, problem.f
    p, lam = problem.params.p, problem.params.lam
    linear_only = zero_term(x.size)

    logger.info(f"alg4: N={n_iters}, r={smoothing.r}, M={smoothing.M}, seed={rng_seed}")
    trace = IterationTrace(
        algorithm="alg4",
        planned_n=n_iters,
        config={"n_iters": n_iters, "rng_seed": rng_seed, "r": smoothing.r, "eps": eps},
    )
    clock = Stopwatch(record_timing)
    iterates = []

    for k in range(1, n_iters + 1):
        rng = step_rng(rng_seed, k)
        G = batch_mean(_smoothed_gradients(h, x, smoothing.r, smoothing.m_k(k), rng))
        c = f.grad(x) + G
        y = S.solve_linear(c, linear_only, warm_start=x)
        d = y - x
        cd = float(c @ d)
        alpha = line_search_alpha(cd, norm_p_pow(d, p), 0.0, 0.0, lam, p, settings)
        trace.append(
            TraceRow(
                k=k,
                phi=f(x) + h(x),
                cert=-cd,
                alpha=alpha,
                wall_ns=clock.elapsed(),
                rng_digest=rng_digest(rng),
            )
        )
        iterates.append(x)
        x = x + alpha * d

    trace.select_best()
    trace.x_final = x
    trace.x_best = iterates[trace.best_index]
    if eps is not None:
        trace.certificate = check_eps_stationary_L(trace.best_row.cert, eps, trace.best_row.k, settings)
    logger.info(f"alg4 finished: k~={trace.best_row.k}, sampled delta_L={trace.best_row.cert:.3e}")
    return trace
