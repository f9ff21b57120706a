"""
Multi-Block Solvers
===================

Block-structured composite problems f(x_1, ..., x_d) + sum_i h_i(x_i) over a
product of compact convex sets, solved by block conditional-gradient and block
powered-proximal steps under the Jacobian (all blocks move) or maximum block
improvement (one block moves) rule.

Features:
- Block problem model with per-block gradients, diameters and joint views
- Per-block linear and powered improvements
- Blockwise stationarity certificates with per-block thresholds
- Jacobian and MBI variants of both block methods
- Iteration planner guarded by the smallest block diameter
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from config.settings import Settings, get_settings
from modules.deterministic import PlannerMode, SolveConfig, ceil_count
from modules.errors import DimensionMismatchError, InfeasiblePointError, PreconditionError
from modules.geometry import FeasibleSetOracle, ProductSet, line_search_alpha
from modules.model import (
    NonsmoothTerm,
    ProblemInstance,
    SmoothnessParams,
    SmoothOracle,
    Vector,
    conjugate_exponent,
    default_phi_star_lower,
    norm_p_pow,
    validate_oracle_gradient,
)
from modules.stationarity import (
    CertificateKind,
    StationarityCertificate,
    linear_improvement,
    powered_improvement,
    powered_threshold,
)
from modules.trace import IterationTrace, Stopwatch, TraceRow

logger = logging.getLogger(__name__)


class UpdateRule(str, Enum):
    JACOBIAN = "jacobian"
    MBI = "mbi"


@dataclass
class BlockProblem:
    """
    Composite problem split into d blocks

    ``block_grad(x, i)`` returns the partial gradient for block i at the
    concatenated point x; by default it slices ``joint_f.grad``.
    """

    block_sets: List[FeasibleSetOracle]
    block_h: List[NonsmoothTerm]
    joint_f: SmoothOracle
    params: SmoothnessParams
    block_grad: Optional[Callable[[Vector, int], Vector]] = None
    phi_star_lower: Optional[float] = None
    name: str = "block_problem"
    product: ProductSet = field(init=False, repr=False)

    def __post_init__(self):
        if len(self.block_sets) != len(self.block_h):
            raise DimensionMismatchError("block_sets and block_h must have equal length")
        settings = get_settings()
        self.product = ProductSet(self.block_sets)
        if self.block_grad is None:
            offsets = self.product.offsets
            self.block_grad = lambda x, i: self.joint_f.grad(x)[offsets[i] : offsets[i + 1]]
        if self.phi_star_lower is None:
            self.phi_star_lower = default_phi_star_lower(
                self.joint_f, self.joint_h, self.product, settings
            )
        if settings.DEBUG:
            validate_oracle_gradient(self.joint_f, self.product, settings)

    @classmethod
    def from_problem(cls, problem: ProblemInstance) -> "BlockProblem":
        """Single-block view of an ordinary problem instance."""
        return cls(
            block_sets=[problem.feasible_set],
            block_h=[problem.h],
            joint_f=problem.f,
            params=problem.params,
            block_grad=lambda x, i: problem.f.grad(x),
            phi_star_lower=problem.phi_star_lower,
            name=problem.name,
        )

    @property
    def d(self) -> int:
        return len(self.block_sets)

    @property
    def dim(self) -> int:
        return self.product.dim

    @property
    def diam_over(self) -> float:
        return max(S.diam_p(self.params.p) for S in self.block_sets)

    @property
    def diam_under(self) -> float:
        return min(S.diam_p(self.params.p) for S in self.block_sets)

    @property
    def joint_h(self) -> NonsmoothTerm:
        hs, split = self.block_h, self.product.split
        return NonsmoothTerm(
            eval=lambda x: sum(h(xi) for h, xi in zip(hs, split(x))),
            subgrad=lambda x: np.concatenate([h.subgrad(xi) for h, xi in zip(hs, split(x))]),
            bound=math.sqrt(sum(h.bound**2 for h in hs)),
            name="block_sum",
        )

    def split(self, x: Vector) -> List[Vector]:
        return self.product.split(x)

    def join(self, blocks: Sequence[Vector]) -> Vector:
        return self.product.join(blocks)

    def phi(self, x: Vector) -> float:
        x = np.asarray(x, dtype=float)
        if not self.product.contains(x):
            raise InfeasiblePointError(f"Point is outside the feasible set of {self.name}")
        return self.joint_f(x) + sum(h(xi) for h, xi in zip(self.block_h, self.split(x)))

    def phi_gap(self, x0: Vector) -> float:
        return max(self.phi(x0) - float(self.phi_star_lower), 0.0)

    def as_problem(self) -> ProblemInstance:
        """Joint problem over the product set (used for joint lambda estimation)."""
        return ProblemInstance(
            f=self.joint_f,
            h=self.joint_h,
            feasible_set=self.product,
            params=self.params,
            phi_star_lower=self.phi_star_lower,
            name=self.name,
        )

    def with_lambda(self, lam: float) -> "BlockProblem":
        return BlockProblem(
            block_sets=self.block_sets,
            block_h=self.block_h,
            joint_f=self.joint_f,
            params=self.params.with_lambda(lam),
            block_grad=self.block_grad,
            phi_star_lower=self.phi_star_lower,
            name=self.name,
        )


def _require_feasible(bp: BlockProblem, x: Vector) -> Vector:
    x = np.array(x, dtype=float)
    if not bp.product.contains(x):
        raise InfeasiblePointError(f"Point is not blockwise feasible for {bp.name}")
    return x


def block_delta_L(bp: BlockProblem, x: Vector, i: int) -> Tuple[float, Vector]:
    """Linear improvement of block i at x and the block minimizer."""
    x = _require_feasible(bp, x)
    xi = bp.split(x)[i]
    g = bp.block_grad(x, i)
    y = bp.block_sets[i].solve_linear(g, bp.block_h[i], warm_start=xi)
    return linear_improvement(g, xi, y, bp.block_h[i]), y


def block_delta_U(bp: BlockProblem, x: Vector, i: int) -> Tuple[float, Vector]:
    """Powered improvement of block i at x and the block minimizer."""
    x = _require_feasible(bp, x)
    xi = bp.split(x)[i]
    g = bp.block_grad(x, i)
    lam, p = bp.params.lam, bp.params.p
    y = bp.block_sets[i].solve_powered_prox(g, xi, lam, p, bp.block_h[i])
    return powered_improvement(g, xi, y, lam, p, bp.block_h[i]), y


def block_thresholds(bp: BlockProblem, eps: float, kind: str) -> List[float]:
    if kind == "L":
        if eps <= 0:
            raise PreconditionError(f"eps must be positive, got {eps}")
        return [eps] * bp.d
    if kind != "U":
        raise PreconditionError(f"Unknown certificate kind '{kind}'")
    p, lam = bp.params.p, bp.params.lam
    thresholds = []
    for i, S in enumerate(bp.block_sets):
        try:
            thresholds.append(powered_threshold(eps, S.diam_p(p), lam, p))
        except PreconditionError as e:
            raise PreconditionError(f"block {i}: {e}") from e
    return thresholds


def check_block_stationary(
    bp: BlockProblem,
    deltas: Sequence[float],
    eps: float,
    kind: str,
    iterate_index: int = 0,
    settings: Optional[Settings] = None,
) -> StationarityCertificate:
    """
    Passed when every block clears its own threshold. ``value`` is the largest
    block improvement, ``threshold`` the smallest block threshold.
    """
    if len(deltas) != bp.d:
        raise DimensionMismatchError(f"Expected {bp.d} block improvements, got {len(deltas)}")
    slack = (settings or get_settings()).SUBPROBLEM_TOL
    thresholds = block_thresholds(bp, eps, kind)
    offending = [i for i, (v, t) in enumerate(zip(deltas, thresholds)) if v > t + slack]
    return StationarityCertificate(
        kind=CertificateKind.LINEAR if kind == "L" else CertificateKind.POWERED,
        value=float(max(deltas)),
        epsilon=eps,
        threshold=float(min(thresholds)),
        iterate_index=iterate_index,
        passed=not offending,
        slack=slack,
        block_values=[float(v) for v in deltas],
        block_thresholds=thresholds,
        offending_blocks=offending,
    )


def plan_multiblock_N(
    phi_gap: float, diam_over: float, diam_under: float, lam: float, p: float, eps: float
) -> int:
    """ceil(2 (diam_over^p lam)^(q-1) gap / eps^q), guarded by eps < diam_under^p lam."""
    guard = diam_under**p * lam
    if not 0 < eps < guard:
        raise PreconditionError(
            f"planner requires 0 < eps < diam_under**p * lambda ({eps} vs {guard})"
        )
    q = conjugate_exponent(p)
    return ceil_count(2.0 * (diam_over**p * lam) ** (q - 1.0) * max(phi_gap, 0.0) / eps**q)


def _iterations(bp: BlockProblem, x: Vector, config: SolveConfig) -> int:
    if config.planner_mode is PlannerMode.EXPLICIT_N:
        return config.max_iters
    planned = plan_multiblock_N(
        bp.phi_gap(x), bp.diam_over, bp.diam_under, bp.params.lam, bp.params.p, config.eps
    )
    return min(planned, config.max_iters)


def _finish(trace, bp, config, blocks, x_best, best_deltas, kind, settings):
    trace.select_best()
    trace.x_final = bp.join(blocks)
    trace.x_best = x_best
    trace.certificate = check_block_stationary(
        bp, best_deltas, config.eps, kind, trace.best_row.k, settings
    )
    if not config.record_trace:
        last = trace.rows[-1]
        trace.rows = [trace.best_row] if trace.best_row is last else [trace.best_row, last]
        trace.best_index = 0
    logger.info(
        f"{trace.algorithm} finished after k={trace.rows[-1].k}: "
        f"max block improvement {trace.certificate.value:.3e}, passed={trace.certificate.passed}"
    )
    return trace


def run_alg5(
    bp: BlockProblem,
    x0: Vector,
    rule: UpdateRule,
    config: SolveConfig,
    settings: Optional[Settings] = None,
) -> IterationTrace:
    """
    Block conditional gradient. Jacobian: every block steps by its own line
    search from the same iterate. MBI: only the block with the largest linear
    improvement moves (lowest index on ties).
    """
    settings = settings or get_settings()
    rule = UpdateRule(rule)
    x = _require_feasible(bp, x0)
    blocks = bp.split(x)
    p, lam = bp.params.p, bp.params.lam
    slack = settings.SUBPROBLEM_TOL
    n_iters = _iterations(bp, x, config)

    logger.info(f"alg5[{rule.value}]: d={bp.d}, N={n_iters}, lambda={lam:.4g}, eps={config.eps}")
    trace = IterationTrace(algorithm=f"alg5_{rule.value}", planned_n=n_iters, config=config.to_dict())
    clock = Stopwatch(config.record_timing)
    x_best, best_deltas, best = x, None, math.inf

    for k in range(1, n_iters + 1):
        full = bp.join(blocks)
        hx = [h(xi) for h, xi in zip(bp.block_h, blocks)]
        phi_k = bp.joint_f(full) + sum(hx)
        steps = []
        for i, (S, h, xi) in enumerate(zip(bp.block_sets, bp.block_h, blocks)):
            g = bp.block_grad(full, i)
            y = S.solve_linear(g, h, warm_start=xi)
            d = y - xi
            steps.append((d, float(g @ d), hx[i], h(y), linear_improvement(g, xi, y, h)))
        deltas = [s[4] for s in steps]
        i0 = int(np.argmax(deltas))
        row = TraceRow(
            k=k,
            phi=phi_k,
            cert=max(deltas),
            block=-1 if rule is UpdateRule.JACOBIAN else i0,
            wall_ns=clock.elapsed(),
        )
        trace.append(row)
        if row.cert < best:
            x_best, best_deltas, best = full, deltas, row.cert
        if config.early_stop and all(v <= config.eps + slack for v in deltas):
            break

        movers = range(bp.d) if rule is UpdateRule.JACOBIAN else [i0]
        for i in movers:
            d, gd, hxi, hyi, _ = steps[i]
            alpha = line_search_alpha(gd, norm_p_pow(d, p), hxi, hyi, lam, p, settings)
            blocks[i] = blocks[i] + alpha * d
            if i == i0:
                row.alpha = alpha
        logger.debug(f"alg5 k={k} phi={phi_k:.10g} max delta={row.cert:.3e} i0={i0}")

    return _finish(trace, bp, config, blocks, x_best, best_deltas, "L", settings)


def run_alg6(
    bp: BlockProblem,
    x0: Vector,
    rule: UpdateRule,
    config: SolveConfig,
    settings: Optional[Settings] = None,
) -> IterationTrace:
    """
    Block powered-proximal method. Jacobian: all blocks jump to their powered
    subproblem minimizers. MBI: only the block with the largest powered
    improvement jumps.
    """
    settings = settings or get_settings()
    rule = UpdateRule(rule)
    x = _require_feasible(bp, x0)
    blocks = bp.split(x)
    p, lam = bp.params.p, bp.params.lam
    slack = settings.SUBPROBLEM_TOL
    thresholds = block_thresholds(bp, config.eps, "U")
    n_iters = _iterations(bp, x, config)

    logger.info(f"alg6[{rule.value}]: d={bp.d}, N={n_iters}, lambda={lam:.4g}, eps={config.eps}")
    trace = IterationTrace(algorithm=f"alg6_{rule.value}", planned_n=n_iters, config=config.to_dict())
    clock = Stopwatch(config.record_timing)
    x_best, best_deltas, best = x, None, math.inf

    for k in range(1, n_iters + 1):
        full = bp.join(blocks)
        phi_k = bp.joint_f(full) + sum(h(xi) for h, xi in zip(bp.block_h, blocks))
        targets, deltas = [], []
        for i, (S, h, xi) in enumerate(zip(bp.block_sets, bp.block_h, blocks)):
            g = bp.block_grad(full, i)
            y = S.solve_powered_prox(g, xi, lam, p, h)
            targets.append(y)
            deltas.append(powered_improvement(g, xi, y, lam, p, h))
        i0 = int(np.argmax(deltas))
        jacobian = rule is UpdateRule.JACOBIAN
        row = TraceRow(
            k=k,
            phi=phi_k,
            cert=max(deltas),
            block=-1 if jacobian else i0,
            wall_ns=clock.elapsed(),
            improvement=float(sum(deltas)) if jacobian else deltas[i0],
        )
        trace.append(row)
        if row.cert < best:
            x_best, best_deltas, best = full, deltas, row.cert
        if config.early_stop and all(v <= t + slack for v, t in zip(deltas, thresholds)):
            break

        if jacobian:
            blocks = targets
        else:
            blocks[i0] = targets[i0]
        logger.debug(f"alg6 k={k} phi={phi_k:.10g} max delta={row.cert:.3e} i0={i0}")

    return _finish(trace, bp, config, blocks, x_best, best_deltas, "U", settings)
