"""
Deterministic Solvers
=====================

Conditional-gradient (linear model) and powered-proximal (p-power model)
first-order methods with line search, certificate-based stopping and the
iteration planners that bound how many steps a certified run needs.

Features:
- Iteration planners for the general and the concave case
- Planner lambda lifting for instances whose sampled lambda is tiny
- Conditional gradient with exact one-dimensional line search
- Full-step conditional gradient for concave f
- Powered-proximal method with the powered certificate
"""

import logging
import math
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Any, Dict, Optional

import numpy as np

from config.settings import Settings, get_settings
from modules.errors import InfeasiblePointError, PreconditionError
from modules.geometry import line_search_alpha
from modules.model import ProblemInstance, Vector, conjugate_exponent, norm_p_pow
from modules.stationarity import (
    check_eps_stationary_L,
    check_eps_stationary_U,
    linear_improvement,
    powered_improvement,
    powered_threshold,
)
from modules.trace import IterationTrace, Stopwatch, TraceRow

logger = logging.getLogger(__name__)


class PlannerMode(str, Enum):
    EXPLICIT_N = "explicit_N"
    EPS_TARGET = "eps_target"


@dataclass
class SolveConfig:
    """Run controls shared by all deterministic and block solvers"""

    eps: float
    max_iters: int = 10000
    planner_mode: PlannerMode = PlannerMode.EPS_TARGET
    record_trace: bool = True
    early_stop: bool = True
    record_timing: bool = False

    def __post_init__(self):
        if self.eps <= 0:
            raise PreconditionError(f"eps must be positive, got {self.eps}")
        if self.max_iters < 1:
            raise PreconditionError("max_iters must be >= 1")
        self.planner_mode = PlannerMode(self.planner_mode)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["planner_mode"] = self.planner_mode.value
        return data


# =============================================================================
# PLANNERS
# =============================================================================


def ceil_count(value: float) -> int:
    """Ceiling floored at 1, ignoring relative rounding noise below 1e-9."""
    if not math.isfinite(value):
        raise PreconditionError(f"Planner value is not finite: {value}")
    return max(1, math.ceil(value - 1e-9 * max(1.0, abs(value))))


def plan_alg1_N(phi_gap: float, diam_p: float, lam: float, p: float, eps: float) -> int:
    """ceil(2 gap (diam_p^p lam)^(q-1) / eps^q), guarded by 0 < eps < diam_p^p lam."""
    scale = diam_p**p * lam
    if not 0 < eps < scale:
        raise PreconditionError(
            f"planner requires 0 < eps < diam_p**p * lambda ({eps} vs {scale})"
        )
    q = conjugate_exponent(p)
    return ceil_count(2.0 * max(phi_gap, 0.0) * scale ** (q - 1.0) / eps**q)


def plan_concave_N(phi_gap: float, eps: float) -> int:
    """ceil(gap / eps) for concave f with full steps."""
    if eps <= 0:
        raise PreconditionError(f"eps must be positive, got {eps}")
    return ceil_count(max(phi_gap, 0.0) / eps)


def planner_lambda(
    lam_hat: float, eps: float, diam_p: float, p: float, safety: float = 2.0
) -> float:
    """
    safety * lam_hat, raised when needed so that eps < diam_p^p * lambda.

    The descent inequality stays valid for any larger lambda.
    """
    lam = safety * lam_hat
    floor = 2.0 * eps / diam_p**p
    if lam <= floor:
        logger.info(f"Lifting planner lambda from {lam:.3g} to {floor:.3g} for eps={eps}")
        lam = floor
    return lam


def _require_feasible(problem: ProblemInstance, x0: Vector) -> Vector:
    x = np.array(x0, dtype=float)
    if not problem.feasible_set.contains(x):
        raise InfeasiblePointError(f"Initial point is outside the feasible set of {problem.name}")
    return x


def _planned_iterations(config: SolveConfig, planned: int) -> int:
    if config.planner_mode is PlannerMode.EXPLICIT_N:
        return config.max_iters
    return min(planned, config.max_iters)


def _finalize(trace: IterationTrace, config: SolveConfig, x: Vector, x_best: Vector):
    trace.select_best()
    trace.x_final = x
    trace.x_best = x_best
    if not config.record_trace:
        kept = [trace.best_row] if trace.best_row is trace.rows[-1] else [trace.best_row, trace.rows[-1]]
        trace.rows = kept
        trace.best_index = 0
    return trace


# =============================================================================
# CONDITIONAL GRADIENT
# =============================================================================


def _run_conditional_gradient(
    problem: ProblemInstance,
    x0: Vector,
    config: SolveConfig,
    n_iters: int,
    full_step: bool,
    algorithm: str,
    settings: Settings,
) -> IterationTrace:
    x = _require_feasible(problem, x0)
    S, h, f = problem.feasible_set, problem.h, problem.f
    p, lam = problem.params.p, problem.params.lam
    slack = settings.SUBPROBLEM_TOL

    logger.info(f"{algorithm}: N={n_iters}, lambda={lam:.4g}, p={p}, eps={config.eps}")
    trace = IterationTrace(algorithm=algorithm, planned_n=n_iters, config=config.to_dict())
    clock = Stopwatch(config.record_timing)
    x_best, best = x, math.inf

    for k in range(1, n_iters + 1):
        g = f.grad(x)
        y = S.solve_linear(g, h, warm_start=x)
        d = y - x
        hx, hy = h(x), h(y)
        gd = float(g @ d)
        delta = linear_improvement(g, x, y, h)
        row = TraceRow(k=k, phi=f(x) + hx, cert=delta, wall_ns=clock.elapsed())
        trace.append(row)
        if delta < best:
            x_best, best = x, delta
        if config.early_stop and delta <= config.eps + slack:
            break
        alpha = 1.0 if full_step else line_search_alpha(gd, norm_p_pow(d, p), hx, hy, lam, p, settings)
        row.alpha = alpha
        x = x + alpha * d
        logger.debug(f"{algorithm} k={k} phi={row.phi:.10g} delta_L={delta:.3e} alpha={alpha:.4g}")

    _finalize(trace, config, x, x_best)
    trace.certificate = check_eps_stationary_L(
        trace.best_row.cert, config.eps, trace.best_row.k, settings
    )
    logger.info(
        f"{algorithm} finished after {len(trace.rows)} rows: delta_L={trace.certificate.value:.3e} "
        f"at k={trace.certificate.iterate_index}, passed={trace.certificate.passed}"
    )
    return trace


def run_alg1(
    problem: ProblemInstance,
    x0: Vector,
    config: SolveConfig,
    settings: Optional[Settings] = None,
) -> IterationTrace:
    """
    Conditional gradient: y = argmin of the linear model, step by exact line
    search on the p-power model, stop when Delta_L <= eps or after N steps.
    """
    settings = settings or get_settings()
    planned = config.max_iters
    if config.planner_mode is PlannerMode.EPS_TARGET:
        planned = plan_alg1_N(
            problem.phi_gap(x0), problem.diam_p(), problem.params.lam, problem.params.p, config.eps
        )
    return _run_conditional_gradient(
        problem, x0, config, _planned_iterations(config, planned), False, "alg1", settings
    )


def run_alg1_concave(
    problem: ProblemInstance,
    x0: Vector,
    config: SolveConfig,
    settings: Optional[Settings] = None,
) -> IterationTrace:
    """Conditional gradient with every step size fixed to one; needs concave f."""
    if not problem.f.concave:
        raise PreconditionError("concave_flag required: f is not flagged concave")
    settings = settings or get_settings()
    planned = plan_concave_N(problem.phi_gap(x0), config.eps)
    return _run_conditional_gradient(
        problem, x0, config, _planned_iterations(config, planned), True, "alg1_concave", settings
    )


# =============================================================================
# POWERED PROXIMAL METHOD
# =============================================================================


def run_alg2(
    problem: ProblemInstance,
    x0: Vector,
    config: SolveConfig,
    settings: Optional[Settings] = None,
) -> IterationTrace:
    """
    x^{k+1} = argmin of the p-power model at x^k; stop when Delta_U clears the
    powered threshold or after N steps.
    """
    settings = settings or get_settings()
    x = _require_feasible(problem, x0)
    S, h, f = problem.feasible_set, problem.h, problem.f
    p, lam = problem.params.p, problem.params.lam
    diam = problem.diam_p()
    threshold = powered_threshold(config.eps, diam, lam, p)
    slack = settings.SUBPROBLEM_TOL

    planned = config.max_iters
    if config.planner_mode is PlannerMode.EPS_TARGET:
        planned = plan_alg1_N(problem.phi_gap(x), diam, lam, p, config.eps)
    n_iters = _planned_iterations(config, planned)

    logger.info(f"alg2: N={n_iters}, lambda={lam:.4g}, p={p}, threshold={threshold:.3e}")
    trace = IterationTrace(algorithm="alg2", planned_n=n_iters, config=config.to_dict())
    clock = Stopwatch(config.record_timing)
    x_best, best = x, math.inf

    for k in range(1, n_iters + 1):
        g = f.grad(x)
        y = S.solve_powered_prox(g, x, lam, p, h)
        delta = powered_improvement(g, x, y, lam, p, h)
        trace.append(TraceRow(k=k, phi=f(x) + h(x), cert=delta, wall_ns=clock.elapsed()))
        if delta < best:
            x_best, best = x, delta
        if config.early_stop and delta <= threshold + slack:
            break
        x = y
        logger.debug(f"alg2 k={k} delta_U={delta:.3e}")

    _finalize(trace, config, x, x_best)
    trace.certificate = check_eps_stationary_U(
        trace.best_row.cert, config.eps, diam, lam, p, trace.best_row.k, settings
    )
    logger.info(
        f"alg2 finished after {len(trace.rows)} rows: delta_U={trace.certificate.value:.3e}, "
        f"passed={trace.certificate.passed}"
    )
    return trace
