"""
Experiment Harness
==================

Run configurations, builtin problem families, single runs with trace output,
planner tables and the two benchmark batches (sparse tensor PCA and penalized
zero-variance discriminant analysis).

Features:
- JSON run configurations validated with pydantic
- Builtin problem families with seeded generators
- Lambda resolution ("auto" = safety factor times sampled estimate, guard-lifted)
- Trace CSV / summary JSON per (run, seed) and a JSON-lines run log
- Concurrent experiment grids with order-fixed report assembly
"""

import asyncio
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Literal, Optional, Sequence, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from config.settings import Settings, get_settings
from modules.applications import (
    SparsePcaInstance,
    ZvdInstance,
    estimate_tau_lipschitz,
    load_tensor_instance,
    make_sparse_pca_instance,
    make_zvd_instance,
    run_bcd_baseline,
    support_size,
)
from modules.deterministic import (
    PlannerMode,
    SolveConfig,
    plan_alg1_N,
    plan_concave_N,
    planner_lambda,
    run_alg1,
    run_alg1_concave,
    run_alg2,
)
from modules.errors import ConfigError, PreconditionError
from modules.geometry import BoxSet, L2BallSet
from modules.model import (
    ProblemInstance,
    SmoothnessParams,
    conjugate_exponent,
    estimate_lambda,
    l1_term,
    power_term,
    quadratic_oracle,
)
from modules.multiblock import BlockProblem, UpdateRule, plan_multiblock_N, run_alg5, run_alg6
from modules.stochastic import (
    SmoothingConfig,
    make_noise_oracle,
    plan_alg3,
    plan_alg4,
    run_alg3,
    run_alg4,
)
from modules.trace import IterationTrace, TraceWriter

logger = logging.getLogger(__name__)

Algorithm = Literal[
    "alg1", "alg1_concave", "alg2", "alg3", "alg4", "alg5", "alg6", "bcd_baseline"
]
BUILTIN_PROBLEMS = (
    "quadratic",
    "concave_quadratic",
    "tensor_pca",
    "tensor_slice",
    "zvd",
    "lq_toy",
)
BLOCK_ALGORITHMS = ("alg5", "alg6", "bcd_baseline")


# =============================================================================
# RUN CONFIGURATION
# =============================================================================


class RunConfig(BaseModel):
    """One run request, usually parsed from a JSON file"""

    problem: str = Field(default="quadratic", description="Builtin problem family")
    problem_params: Dict[str, float] = Field(
        default_factory=dict, description="Generator parameters of the builtin family"
    )
    instance_path: Optional[str] = Field(
        default=None, description="Binary tensor instance to load instead of generating one"
    )
    algorithm: Algorithm = Field(default="alg1", description="Solver id")
    rule: Optional[UpdateRule] = Field(default=None, description="Block updating rule")
    eps: float = Field(default=1e-3, gt=0, description="Target accuracy")
    p: float = Field(default=2.0, gt=1, description="Power of the model function")
    lam: Union[float, Literal["auto"]] = Field(
        default="auto", alias="lambda", description="Smoothness constant or 'auto'"
    )
    N: Union[int, Literal["plan"]] = Field(default="plan", description="Iteration count or 'plan'")
    max_iters: int = Field(default=100000, ge=1, description="Hard cap when N is planned")
    seeds: List[int] = Field(default_factory=lambda: [0], min_length=1)
    x0: Union[Literal["random", "center"], List[float]] = Field(default="random")
    sigma: float = Field(default=0.0, ge=0, description="Noise level of the sampled oracle")
    noise: Literal["gaussian", "uniform"] = Field(default="gaussian")
    batch: Union[int, Literal["plan"]] = Field(default=1, description="Batch size or 'plan'")
    smoothing_radius: float = Field(default=0.1, gt=0)
    lambda_pairs: int = Field(default=1000, ge=1)
    record_timing: bool = False
    output_dir: Optional[str] = None
    stem: Optional[str] = None

    model_config = ConfigDict(populate_by_name=True, extra="forbid")

    @field_validator("problem")
    @classmethod
    def validate_problem(cls, v):
        if v not in BUILTIN_PROBLEMS:
            raise ValueError(f"problem must be one of {BUILTIN_PROBLEMS}")
        return v

    @field_validator("N", "batch")
    @classmethod
    def validate_positive_count(cls, v):
        if isinstance(v, int) and v < 1:
            raise ValueError("must be >= 1 or 'plan'")
        return v

    @model_validator(mode="after")
    def validate_compatibility(self):
        if self.algorithm in ("alg5", "alg6") and self.rule is None:
            raise ValueError(f"rule is required for {self.algorithm}")
        if self.algorithm not in ("alg5", "alg6") and self.rule is not None:
            raise ValueError(f"rule does not apply to {self.algorithm}")
        if self.algorithm in BLOCK_ALGORITHMS and self.problem != "tensor_pca":
            raise ValueError(f"{self.algorithm} needs the tensor_pca problem")
        if self.problem == "tensor_pca" and self.algorithm not in BLOCK_ALGORITHMS:
            raise ValueError("tensor_pca runs with alg5, alg6 or bcd_baseline")
        if self.algorithm == "alg3" and self.p < 2:
            raise ValueError("alg3 needs p >= 2")
        return self

    @property
    def run_stem(self) -> str:
        return self.stem or f"{self.problem}_{self.algorithm}"


def load_run_config(path: str) -> RunConfig:
    """Parse a JSON run configuration; errors name the offending field."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"Cannot read config {path}: {e}") from e
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        fields = "; ".join(
            f"{'.'.join(str(x) for x in err['loc']) or 'config'}: {err['msg']}" for err in e.errors()
        )
        raise ConfigError(f"Invalid config {path}: {fields}") from e


# =============================================================================
# BUILTIN PROBLEMS
# =============================================================================


@dataclass
class BuiltProblem:
    """A generated problem in the views the solvers consume"""

    family: str
    problem: Optional[ProblemInstance] = None
    block: Optional[BlockProblem] = None
    pca: Optional[SparsePcaInstance] = None
    zvd: Optional[ZvdInstance] = None
    default_lam: Optional[float] = None
    smoothing_M: Optional[float] = None


def _param(params: Dict[str, float], key: str, default: float) -> float:
    return float(params.get(key, default))


def build_problem(config: RunConfig, rng_seed: int, settings: Settings) -> BuiltProblem:
    """Instantiate the configured family; lambda is a placeholder until resolved."""
    params = config.problem_params
    p = config.p
    rng = np.random.default_rng(rng_seed)
    name = config.problem

    if name == "quadratic":
        n = int(_param(params, "dim", 5))
        c = rng.standard_normal(n) * _param(params, "center_scale", 2.0)
        problem = ProblemInstance(
            f=quadratic_oracle(np.eye(n), center=c),
            h=l1_term(_param(params, "rho", 0.1), n),
            feasible_set=L2BallSet(_param(params, "radius", 1.0), n, settings),
            params=SmoothnessParams(p=p, lam=1.0),
            phi_star_lower=0.0,
            name="quadratic",
        )
        return BuiltProblem(family=name, problem=problem)

    if name == "concave_quadratic":
        n = int(_param(params, "dim", 5))
        A = rng.standard_normal((n, n))
        Q = A.T @ A / n
        b = rng.standard_normal(n)
        top = float(np.linalg.eigvalsh(Q)[-1])
        problem = ProblemInstance(
            f=quadratic_oracle(-Q, b=b),
            h=l1_term(_param(params, "rho", 0.1), n),
            feasible_set=L2BallSet(1.0, n, settings),
            params=SmoothnessParams(p=p, lam=1.0),
            phi_star_lower=-0.5 * top - float(np.linalg.norm(b)),
            name="concave_quadratic",
        )
        return BuiltProblem(family=name, problem=problem, default_lam=max(top, settings.LAMBDA_MIN))

    if name in ("tensor_pca", "tensor_slice"):
        if config.instance_path:
            pca = load_tensor_instance(config.instance_path)
            if "rho" in params:
                pca.rho = float(params["rho"])
        else:
            pca = make_sparse_pca_instance(
                int(_param(params, "d", 4)),
                int(_param(params, "n", 8)),
                _param(params, "rho", settings.TABLE1_RHO),
                rng_seed,
            )
        if name == "tensor_slice":
            problem = pca.slice_problem(pca.random_start(rng_seed), int(_param(params, "block", 0)))
            return BuiltProblem(family=name, problem=problem, pca=pca)
        lam = estimate_tau_lipschitz(pca.tensor, rng_seed=rng_seed)[1]
        return BuiltProblem(
            family=name,
            block=pca.block_problem(lam=max(lam, settings.LAMBDA_MIN)),
            pca=pca,
            default_lam=max(lam, settings.LAMBDA_MIN),
        )

    if name == "zvd":
        n = int(_param(params, "n", 20))
        zvd = make_zvd_instance(
            n, int(_param(params, "m", 2 * n)), _param(params, "gamma", settings.ZVD_GAMMA), rng_seed
        )
        problem = zvd.problem(settings)
        return BuiltProblem(family=name, problem=problem, zvd=zvd, default_lam=problem.params.lam)

    # lq_toy: 1/2 ||x - c||^2 + s sum |x_i|^a on a box bounded away from zero
    n = int(_param(params, "dim", 3))
    lo, hi, a = _param(params, "lower", 0.5), _param(params, "upper", 1.5), _param(params, "a", 0.5)
    scale = _param(params, "scale", 1.0)
    r = config.smoothing_radius
    if r >= lo:
        raise ConfigError("smoothing_radius must stay below the box lower bound for lq_toy")
    M = math.sqrt(n) * scale * a * (lo - r) ** (a - 1.0)
    problem = ProblemInstance(
        f=quadratic_oracle(np.eye(n), center=rng.uniform(lo, hi, n)),
        h=power_term(a, n, scale=scale, bound=M),
        feasible_set=BoxSet(np.full(n, lo), np.full(n, hi), settings),
        params=SmoothnessParams(p=p, lam=1.0),
        phi_star_lower=0.0,
        name="lq_toy",
    )
    return BuiltProblem(family="lq_toy", problem=problem, smoothing_M=M)


def resolve_lambda(config: RunConfig, built: BuiltProblem, seed: int, settings: Settings) -> float:
    """
    Numeric lambda is used as given. "auto" uses the family default when one
    exists (raised to clear the planner guard), otherwise the safety factor times
    the sampled estimate.
    """
    if config.lam != "auto":
        return float(config.lam)
    eps, p = config.eps, config.p
    if built.block is not None:
        diam = built.block.diam_under
        return max(built.default_lam, 2.0 * eps / diam**p)
    problem = built.problem
    diam = problem.diam_p()
    if built.default_lam is not None:
        return max(built.default_lam, 2.0 * eps / diam**p)
    lam_hat = estimate_lambda(
        problem.f, problem.feasible_set, p, config.lambda_pairs, seed, settings
    )
    return planner_lambda(lam_hat, eps, diam, p, settings.LAMBDA_SAFETY_FACTOR)


def _start_point(config: RunConfig, built: BuiltProblem, seed: int) -> np.ndarray:
    if isinstance(config.x0, list):
        return np.asarray(config.x0, dtype=float)
    if built.pca is not None and built.block is not None:
        return np.concatenate(built.pca.random_start(seed))
    S = built.problem.feasible_set
    if config.x0 == "center":
        return S.center()
    return S.sample(np.random.default_rng(seed))


# =============================================================================
# SINGLE RUNS
# =============================================================================


@dataclass
class RunOutcome:
    seed: int
    trace: IterationTrace
    paths: Dict[str, Path] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.trace.certificate is None or self.trace.certificate.passed


def _solve_config(config: RunConfig, max_iters: Optional[int] = None) -> SolveConfig:
    explicit = isinstance(config.N, int)
    return SolveConfig(
        eps=config.eps,
        max_iters=config.N if explicit else (max_iters or config.max_iters),
        planner_mode=PlannerMode.EXPLICIT_N if explicit else PlannerMode.EPS_TARGET,
        record_timing=config.record_timing,
    )


def execute_run(config: RunConfig, seed: int, settings: Optional[Settings] = None) -> IterationTrace:
    """Build the problem for ``seed``, resolve lambda and run the configured solver."""
    settings = settings or get_settings()
    built = build_problem(config, seed, settings)
    lam = resolve_lambda(config, built, seed, settings)
    x0 = _start_point(config, built, seed)
    algo = config.algorithm
    logger.info(f"Run {config.run_stem} seed={seed}: {algo}, lambda={lam:.4g}, eps={config.eps}")

    if algo == "bcd_baseline":
        n_iters = config.N if isinstance(config.N, int) else config.max_iters
        return run_bcd_baseline(built.pca, built.block.split(x0), n_iters)
    if algo in ("alg5", "alg6"):
        bp = built.block.with_lambda(lam)
        runner = run_alg5 if algo == "alg5" else run_alg6
        return runner(bp, x0, config.rule, _solve_config(config), settings)

    problem = built.problem.with_params(SmoothnessParams(p=config.p, lam=lam))
    if algo == "alg1":
        return run_alg1(problem, x0, _solve_config(config), settings)
    if algo == "alg1_concave":
        return run_alg1_concave(problem, x0, _solve_config(config), settings)
    if algo == "alg2":
        return run_alg2(problem, x0, _solve_config(config), settings)

    gap, diam = problem.phi_gap(x0), problem.diam_p()
    if algo == "alg3":
        oracle = make_noise_oracle(
            config.noise, problem.f, config.sigma, conjugate_exponent(config.p), problem.dim
        )
        n_iters = config.N if isinstance(config.N, int) else None
        batch = config.batch if isinstance(config.batch, int) else None
        if n_iters is None or batch is None:
            plan = plan_alg3(config.eps, config.sigma, lam, config.p, diam, gap)
            n_iters = n_iters or min(plan.n_iters, config.max_iters)
            batch = batch or plan.m
        return run_alg3(
            problem, oracle, x0, n_iters, batch, seed, eps=config.eps,
            record_timing=config.record_timing, settings=settings,
        )

    M = built.smoothing_M if built.smoothing_M is not None else problem.h.bound
    n_iters = config.N if isinstance(config.N, int) else None
    batch = config.batch if isinstance(config.batch, int) else None
    if n_iters is None or batch is None:
        plan = plan_alg4(config.eps, gap, diam, problem.feasible_set.diam_p(2.0), lam, config.p, M)
        n_iters = n_iters or min(plan.n_iters, config.max_iters)
        batch = batch or plan.m
    smoothing = SmoothingConfig(r=config.smoothing_radius, M=M, batch=batch)
    return run_alg4(
        problem, smoothing, x0, n_iters, seed, eps=config.eps,
        record_timing=config.record_timing, settings=settings,
    )


def run_config(
    config: RunConfig, output_dir: str, settings: Optional[Settings] = None
) -> List[RunOutcome]:
    """Execute every seed, writing one trace CSV and summary JSON per seed."""
    settings = settings or get_settings()
    writer = TraceWriter(output_dir)
    outcomes = []
    for seed in config.seeds:
        trace = execute_run(config, seed, settings)
        paths = writer.write_trace(trace, f"{config.run_stem}_seed{seed}")
        outcome = RunOutcome(seed=seed, trace=trace, paths=paths)
        if settings.RUN_LOG_ENABLED:
            writer.log_run(
                {
                    "stem": config.run_stem,
                    "algorithm": trace.algorithm,
                    "seed": seed,
                    "best_k": trace.best_row.k,
                    "value": trace.best_row.cert,
                    "passed": outcome.passed,
                    "iterations": trace.n_iterations,
                }
            )
        outcomes.append(outcome)
    return outcomes


# =============================================================================
# PLANNER TABLES
# =============================================================================


def plan_table(kind: str, eps_values: Sequence[float], **params) -> pd.DataFrame:
    """
    Planned counts per eps. Guard violations are reported in the ``error``
    column of their row.
    """
    planners: Dict[str, Callable[[float], Dict[str, Any]]] = {
        "alg1": lambda e: {
            "N": plan_alg1_N(params["phi_gap"], params["diam_p"], params["lam"], params["p"], e)
        },
        "concave": lambda e: {"N": plan_concave_N(params["phi_gap"], e)},
        "alg3": lambda e: plan_alg3(
            e, params["sigma"], params["lam"], params["p"], params["diam_p"], params["phi_gap"]
        ).to_dict(),
        "alg4": lambda e: vars(
            plan_alg4(
                e, params["phi_gap"], params["diam_p"], params.get("diam_2", params["diam_p"]),
                params["lam"], params["p"], params["M"],
            )
        ),
        "multiblock": lambda e: {
            "N": plan_multiblock_N(
                params["phi_gap"], params["diam_over"], params["diam_under"],
                params["lam"], params["p"], e,
            )
        },
    }
    if kind not in planners:
        raise ConfigError(f"Unknown planner '{kind}'. Available: {', '.join(planners)}")
    rows = []
    for eps in eps_values:
        row: Dict[str, Any] = {"planner": kind, "eps": eps}
        try:
            row.update(planners[kind](eps))
            row["error"] = ""
        except (PreconditionError, KeyError) as e:
            row["error"] = str(e)
        rows.append(row)
    return pd.DataFrame(rows)


# =============================================================================
# EXPERIMENT BATCHES
# =============================================================================


@dataclass
class ExperimentReport:
    """Per-(instance, method) rows of a benchmark batch"""

    style: str
    rows: List[Dict[str, Any]] = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows)

    def summary(self) -> pd.DataFrame:
        frame = self.to_frame()
        frame["passed"] = frame["passed"].fillna(False).astype(bool)
        value = "val" if self.style == "table1" else "obj_val"
        return frame.groupby("method", sort=False).agg(
            runs=("instance", "count"),
            mean_value=(value, "mean"),
            mean_iterations=("iterations", "mean"),
            passed=("passed", "sum"),
        )

    def write_csv(self, output_dir: str, name: Optional[str] = None) -> Path:
        return TraceWriter(output_dir).write_frame(self.to_frame(), name or f"{self.style}.csv")


class ExperimentRunner:
    """Runs independent grid cells concurrently and assembles them in cell order"""

    def __init__(self, settings: Optional[Settings] = None):
        self.settings = settings or get_settings()
        self.semaphore = asyncio.Semaphore(self.settings.MAX_WORKERS)

    async def _run_cell(self, fn: Callable[..., List[Dict[str, Any]]], *args):
        async with self.semaphore:
            return await asyncio.to_thread(fn, *args)

    async def run_grid(
        self, fn: Callable[..., List[Dict[str, Any]]], cells: Sequence[tuple]
    ) -> List[Dict[str, Any]]:
        results = await asyncio.gather(*(self._run_cell(fn, *cell) for cell in cells))
        return [row for rows in results for row in rows]

    async def table1(
        self, d: int, n: int, n_instances: int, seed: int, rho: Optional[float] = None
    ) -> ExperimentReport:
        rho = self.settings.TABLE1_RHO if rho is None else rho
        cells = [(i, seed + i, d, n, rho) for i in range(n_instances)]
        return ExperimentReport("table1", await self.run_grid(self._table1_cell, cells))

    async def table2(
        self, n: int, m: int, n_instances: int, seed: int, gamma: Optional[float] = None
    ) -> ExperimentReport:
        gamma = self.settings.ZVD_GAMMA if gamma is None else gamma
        cells = [(i, seed + i, n, m, gamma) for i in range(n_instances)]
        return ExperimentReport("table2", await self.run_grid(self._table2_cell, cells))

    def _table1_cell(self, idx: int, inst_seed: int, d: int, n: int, rho: float):
        s = self.settings
        pca = make_sparse_pca_instance(d, n, rho, inst_seed)
        start = pca.random_start(inst_seed)
        bp = pca.block_problem(lam=s.TABLE1_LAMBDA)
        config = SolveConfig(
            eps=s.TABLE1_EPS, max_iters=s.TABLE1_MAX_ITERS, planner_mode=PlannerMode.EXPLICIT_N
        )
        traces = {
            "BCD": run_bcd_baseline(pca, start, s.TABLE1_MAX_ITERS),
            "alg6": run_alg6(bp, bp.join(start), UpdateRule.JACOBIAN, config, s),
            "alg5": run_alg5(bp, bp.join(start), UpdateRule.JACOBIAN, config, s),
        }
        rows = []
        for method, trace in traces.items():
            blocks = bp.split(trace.x_final)
            iterations = trace.rows[-1].k
            rows.append(
                {
                    "instance": idx,
                    "seed": inst_seed,
                    "method": method,
                    "val": pca.value(blocks),
                    "support": sum(support_size(b, s.SUPPORT_THRESHOLD) for b in blocks),
                    "iterations": iterations,
                    "cert": trace.certificate.value if trace.certificate else trace.rows[-1].cert,
                    "passed": bool(trace.certificate.passed) if trace.certificate else None,
                    "zero_solution": bool(np.all(np.abs(trace.x_final) <= s.SUPPORT_THRESHOLD)),
                    "hit_cap": iterations >= s.TABLE1_MAX_ITERS,
                }
            )
        logger.info(f"table1 instance {idx} done")
        return rows

    def _table2_cell(self, idx: int, inst_seed: int, n: int, m: int, gamma: float):
        s = self.settings
        zvd = make_zvd_instance(n, m, gamma, inst_seed)
        problem = zvd.problem(s)
        x0 = problem.feasible_set.sample(np.random.default_rng(inst_seed))
        config = SolveConfig(
            eps=s.TABLE2_EPS, max_iters=s.TABLE2_MAX_ITERS, planner_mode=PlannerMode.EXPLICIT_N
        )
        trace = run_alg1_concave(problem, x0, config, s)
        return [
            {
                "instance": idx,
                "seed": inst_seed,
                "method": "alg1_concave",
                "obj_val": problem.phi(trace.x_final),
                "iterations": trace.rows[-1].k,
                "cert": trace.certificate.value,
                "passed": trace.certificate.passed,
                "monotone": trace.monotone(s.DESCENT_TOL),
                "support": support_size(zvd.operator @ trace.x_final, s.SUPPORT_THRESHOLD),
            }
        ]


def run_table1(
    d: int = 4, n: int = 8, n_instances: int = 10, seed: int = 0,
    settings: Optional[Settings] = None, rho: Optional[float] = None,
) -> ExperimentReport:
    """Sparse tensor PCA batch: BCD baseline, block powered-prox and block CG (Jacobian)."""
    settings = settings or get_settings()
    if n > settings.DESK_TENSOR_MAX_N:
        logger.warning(f"Tensor side {n} exceeds the desk default {settings.DESK_TENSOR_MAX_N}")
    return asyncio.run(ExperimentRunner(settings).table1(d, n, n_instances, seed, rho))


def run_table2(
    n: int = 20, m: Optional[int] = None, n_instances: int = 10, seed: int = 0,
    settings: Optional[Settings] = None, gamma: Optional[float] = None,
) -> ExperimentReport:
    """Penalized-LDA batch: full-step conditional gradient on concave instances."""
    settings = settings or get_settings()
    m = 2 * n if m is None else m
    return asyncio.run(ExperimentRunner(settings).table2(n, m, n_instances, seed, gamma))
