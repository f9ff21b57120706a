"""
Application Problems
====================

Two benchmark families wired to the solvers: sparse rank-one tensor PCA as a
block problem over unit balls, and penalized zero-variance discriminant
analysis as a concave quadratic with an analysis-L1 penalty over the unit ball.

Features:
- Dense tensors with full and partial multilinear contractions
- Spectral-norm and gradient-Lipschitz estimates for the tensor form
- Seeded instance generators for both families
- Jacobian block baseline on unit spheres
- Closed-form and dual solvers for the penalized-LDA linear subproblem
- Binary tensor container with a JSON metadata sidecar
"""

import json
import logging
import math
import struct
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from config.settings import Settings, get_settings
from modules.errors import DimensionMismatchError, PreconditionError, SolverError
from modules.geometry import L2BallSet, ball_analysis_l1_linear_argmin, ball_l1_linear_argmin
from modules.model import (
    ProblemInstance,
    SmoothnessParams,
    SmoothOracle,
    Vector,
    l1_term,
    quadratic_oracle,
    weighted_l1_term,
)
from modules.multiblock import BlockProblem
from modules.trace import IterationTrace, TraceRow

logger = logging.getLogger(__name__)

TENSOR_MAGIC = b"NCST"
TENSOR_FORMAT_VERSION = 1


# =============================================================================
# DENSE TENSORS
# =============================================================================


@dataclass(frozen=True)
class DenseTensor:
    """Order-d real tensor stored densely in row-major mode order"""

    entries: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "entries", np.asarray(self.entries, dtype=float))
        if self.entries.ndim < 1:
            raise DimensionMismatchError("A tensor needs at least one mode")

    @classmethod
    def from_flat(cls, dims: Sequence[int], flat: Sequence[float]) -> "DenseTensor":
        flat = np.asarray(flat, dtype=float)
        if flat.size != int(np.prod(dims)):
            raise DimensionMismatchError(f"{flat.size} entries do not fill dims {tuple(dims)}")
        return cls(flat.reshape(tuple(dims)))

    @property
    def order(self) -> int:
        return self.entries.ndim

    @property
    def dims(self) -> Tuple[int, ...]:
        return self.entries.shape

    @property
    def frobenius_norm(self) -> float:
        return float(np.linalg.norm(self.entries))


def _check_blocks(t: DenseTensor, blocks: Sequence[Vector]) -> None:
    if len(blocks) != t.order:
        raise DimensionMismatchError(f"Expected {t.order} blocks, got {len(blocks)}")
    for j, (n, b) in enumerate(zip(t.dims, blocks)):
        if np.asarray(b).shape != (n,):
            raise DimensionMismatchError(f"Block {j} has shape {np.shape(b)}, expected ({n},)")


def _contract_except(t: DenseTensor, blocks: Sequence[Vector], keep: Sequence[int]) -> np.ndarray:
    # descending order keeps the axis index of every not-yet-contracted mode stable
    res = t.entries
    for j in reversed(range(t.order)):
        if j in keep:
            continue
        res = np.tensordot(res, blocks[j], axes=([j], [0]))
    return res


def tensor_contract_full(t: DenseTensor, blocks: Sequence[Vector]) -> float:
    """A(x_1, ..., x_d)."""
    _check_blocks(t, blocks)
    return float(_contract_except(t, blocks, ()))


def tensor_partial_gradient(t: DenseTensor, blocks: Sequence[Vector], i: int) -> Vector:
    """A(x_1, ..., x_{i-1}, ., x_{i+1}, ..., x_d)."""
    _check_blocks(t, blocks)
    return np.asarray(_contract_except(t, blocks, (i,)), dtype=float)


def tensor_pair_matrix(t: DenseTensor, blocks: Sequence[Vector], i: int, j: int) -> np.ndarray:
    """Matrix A(x^{-ij}) with rows indexed by mode i and columns by mode j (i < j)."""
    _check_blocks(t, blocks)
    return np.asarray(_contract_except(t, blocks, (i, j)), dtype=float)


def _unit(rng: np.random.Generator, n: int) -> Vector:
    v = rng.standard_normal(n)
    return v / np.linalg.norm(v)


def estimate_tau_lipschitz(
    t: DenseTensor,
    n_trials: int = 10,
    rng_seed: int = 0,
    max_sweeps: int = 500,
    tol: float = 1e-13,
) -> Tuple[float, float]:
    """
    tau = max over mode pairs (i, j) and unit fillings of ||A(x^{-ij})||_2, found
    by alternating an exact SVD of the pair matrix with normalized partial
    gradients for the remaining modes. Returns (tau, L = tau d (d - 1)).
    """
    d = t.order
    if d < 2:
        raise PreconditionError("tau needs a tensor of order >= 2")
    rng = np.random.default_rng(rng_seed)
    tau = 0.0
    for i, j in combinations(range(d), 2):
        others = [l for l in range(d) if l not in (i, j)]
        for _ in range(n_trials if others else 1):
            blocks = [_unit(rng, n) for n in t.dims]
            sigma_prev = -math.inf
            for _ in range(max_sweeps):
                U, s, Vt = np.linalg.svd(tensor_pair_matrix(t, blocks, i, j))
                sigma = float(s[0])
                blocks[i], blocks[j] = U[:, 0], Vt[0]
                for l in others:
                    g = tensor_partial_gradient(t, blocks, l)
                    ng = np.linalg.norm(g)
                    if ng > 0:
                        blocks[l] = g / ng
                if not others or abs(sigma - sigma_prev) <= tol * max(1.0, sigma):
                    break
                sigma_prev = sigma
            tau = max(tau, sigma)
    L = tau * d * (d - 1)
    logger.debug(f"estimate_tau_lipschitz: tau={tau:.6g}, L={L:.6g}")
    return tau, L


# =============================================================================
# SPARSE TENSOR PCA
# =============================================================================


def support_size(x: Vector, threshold: Optional[float] = None) -> int:
    """Number of entries with magnitude above the support threshold."""
    threshold = get_settings().SUPPORT_THRESHOLD if threshold is None else threshold
    return int(np.count_nonzero(np.abs(np.asarray(x)) > threshold))


@dataclass
class SparsePcaInstance:
    """min -A(x_1, ..., x_d) + rho sum_i ||x_i||_1 subject to ||x_i||_2 <= 1"""

    tensor: DenseTensor
    rho: float
    seed: Optional[int] = None

    def __post_init__(self):
        if self.rho < 0:
            raise PreconditionError(f"rho must be nonnegative, got {self.rho}")

    @property
    def d(self) -> int:
        return self.tensor.order

    @property
    def dims(self) -> Tuple[int, ...]:
        return self.tensor.dims

    def objective_oracle(self) -> Tuple[SmoothOracle, callable]:
        offsets = np.concatenate([[0], np.cumsum(self.dims)]).astype(int)
        t = self.tensor

        def split(x):
            return [x[offsets[i] : offsets[i + 1]] for i in range(len(self.dims))]

        def block_grad(x, i):
            return -tensor_partial_gradient(t, split(x), i)

        f = SmoothOracle(
            eval=lambda x: -tensor_contract_full(t, split(x)),
            grad=lambda x: np.concatenate([block_grad(x, i) for i in range(t.order)]),
            name="neg_multilinear",
        )
        return f, block_grad

    def block_problem(self, lam: Optional[float] = None) -> BlockProblem:
        """Block view; lambda defaults to tau d (d - 1)."""
        if lam is None:
            lam = max(estimate_tau_lipschitz(self.tensor)[1], get_settings().LAMBDA_MIN)
        f, block_grad = self.objective_oracle()
        return BlockProblem(
            block_sets=[L2BallSet(1.0, n) for n in self.dims],
            block_h=[l1_term(self.rho, n) for n in self.dims],
            joint_f=f,
            params=SmoothnessParams(p=2.0, lam=lam),
            block_grad=block_grad,
            phi_star_lower=-self.tensor.frobenius_norm,
            name=f"sparse_pca_d{self.d}",
        )

    def slice_problem(
        self, fixed: Sequence[Vector], i: int = 0, lam: float = 1.0
    ) -> ProblemInstance:
        """Single-block problem in x_i with the other blocks frozen at ``fixed``."""
        fixed = [np.asarray(b, dtype=float) for b in fixed]
        t = self.tensor

        def blocks_with(x):
            blocks = list(fixed)
            blocks[i] = x
            return blocks

        f = SmoothOracle(
            eval=lambda x: -tensor_contract_full(t, blocks_with(x)),
            grad=lambda x: -tensor_partial_gradient(t, blocks_with(x), i),
            concave=True,
            name=f"tensor_slice_{i}",
        )
        n = self.dims[i]
        return ProblemInstance(
            f=f,
            h=l1_term(self.rho, n),
            feasible_set=L2BallSet(1.0, n),
            params=SmoothnessParams(p=2.0, lam=lam),
            phi_star_lower=-t.frobenius_norm,
            name=f"tensor_slice_{i}",
        )

    def random_start(self, rng_seed: int) -> List[Vector]:
        """Unit-norm starting blocks shared by all methods for one instance."""
        rng = np.random.default_rng(rng_seed)
        return [_unit(rng, n) for n in self.dims]

    def value(self, blocks: Sequence[Vector]) -> float:
        """Val = A(x_1, ..., x_d)."""
        return tensor_contract_full(self.tensor, blocks)


def make_sparse_pca_instance(d: int, n: int, rho: float, rng_seed: int) -> SparsePcaInstance:
    """Order-d tensor of side n with i.i.d. standard Gaussian entries."""
    if d < 2 or n < 1:
        raise PreconditionError("sparse PCA instances need d >= 2 and n >= 1")
    rng = np.random.default_rng(rng_seed)
    return SparsePcaInstance(
        tensor=DenseTensor(rng.standard_normal((n,) * d)), rho=rho, seed=rng_seed
    )


def run_bcd_baseline(
    instance: SparsePcaInstance,
    x0: Sequence[Vector],
    max_iters: int,
    tol: float = 1e-10,
) -> IterationTrace:
    """
    Jacobian block baseline on unit spheres: every block maximizes
    b^T y - rho ||y||_1 over the ball, then is renormalized onto the sphere.
    A zero block solution keeps the previous block. Stops when no block moves
    by more than ``tol`` or after ``max_iters`` steps.
    """
    blocks = [np.array(b, dtype=float) for b in x0]
    if any(abs(np.linalg.norm(b) - 1.0) > 1e-8 for b in blocks):
        raise PreconditionError("baseline needs unit-norm starting blocks")
    t, rho = instance.tensor, instance.rho

    trace = IterationTrace(algorithm="bcd_baseline", planned_n=max_iters, config={"rho": rho})
    for k in range(1, max_iters + 1):
        val = tensor_contract_full(t, blocks)
        phi_k = -val + rho * sum(float(np.sum(np.abs(b))) for b in blocks)
        new_blocks = []
        for i, b in enumerate(blocks):
            y = ball_l1_linear_argmin(tensor_partial_gradient(t, blocks, i), rho)
            ny = np.linalg.norm(y)
            new_blocks.append(b if ny == 0 else y / ny)
        change = max(float(np.linalg.norm(nb - b)) for nb, b in zip(new_blocks, blocks))
        trace.append(TraceRow(k=k, phi=phi_k, cert=change))
        blocks = new_blocks
        if change <= tol:
            break

    trace.select_best()
    trace.x_final = np.concatenate(blocks)
    trace.x_best = trace.x_final
    trace.config["val"] = tensor_contract_full(t, blocks)
    trace.config["hit_cap"] = trace.rows[-1].cert > tol
    return trace


# =============================================================================
# PENALIZED ZERO-VARIANCE DISCRIMINANT ANALYSIS
# =============================================================================


@dataclass
class ZvdInstance:
    """
    min -1/2 x^T N^T B N x + gamma sum_i sigma_i |(D N x)_i| over ||x||_2 <= 1

    N is m x n with orthonormal columns (N^T N = I); D is m x m orthogonal.
    """

    B: np.ndarray
    N: np.ndarray
    D: np.ndarray
    sigma_weights: np.ndarray
    gamma: float
    seed: Optional[int] = None
    Q: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        B, N, D = (np.asarray(a, dtype=float) for a in (self.B, self.N, self.D))
        m, n = N.shape
        if B.shape != (m, m) or D.shape != (m, m) or np.shape(self.sigma_weights) != (m,):
            raise DimensionMismatchError("ZVD blocks have inconsistent shapes")
        if not np.allclose(B, B.T, atol=1e-10):
            raise PreconditionError("B must be symmetric")
        if m and np.min(np.linalg.eigvalsh(B)) < -1e-8 * max(1.0, np.abs(B).max()):
            raise PreconditionError("B must be positive semidefinite")
        if not np.allclose(N.T @ N, np.eye(n), atol=1e-8):
            raise PreconditionError("N must have orthonormal columns")
        if not np.allclose(D.T @ D, np.eye(m), atol=1e-8):
            raise PreconditionError("D must be orthogonal")
        if self.gamma < 0 or np.any(np.asarray(self.sigma_weights) < 0):
            raise PreconditionError("gamma and sigma weights must be nonnegative")
        self.B, self.N, self.D = B, N, D
        self.sigma_weights = np.asarray(self.sigma_weights, dtype=float)
        self.Q = N.T @ B @ N

    @property
    def n(self) -> int:
        return self.N.shape[1]

    @property
    def operator(self) -> np.ndarray:
        return self.D @ self.N

    @property
    def weights(self) -> np.ndarray:
        return self.gamma * self.sigma_weights

    @property
    def top_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.Q)[-1]) if self.n else 0.0

    def problem(self, settings: Optional[Settings] = None) -> ProblemInstance:
        settings = settings or get_settings()
        lam = max(self.top_eigenvalue, settings.LAMBDA_MIN)
        return ProblemInstance(
            f=quadratic_oracle(-self.Q),
            h=weighted_l1_term(self.weights, self.operator, name="zvd_penalty"),
            feasible_set=L2BallSet(1.0, self.n),
            params=SmoothnessParams(p=2.0, lam=lam),
            phi_star_lower=-0.5 * self.top_eigenvalue,
            name=f"zvd_n{self.n}",
        )


def make_zvd_instance(n: int, m: int, gamma: float, rng_seed: int) -> ZvdInstance:
    """B = C^T C, N and D from QR of Gaussian matrices, sigma = |Gaussian|."""
    if m < n:
        raise PreconditionError(f"ZVD instances need m >= n, got m={m}, n={n}")
    rng = np.random.default_rng(rng_seed)
    C = rng.standard_normal((m, m))
    N, _ = np.linalg.qr(rng.standard_normal((m, n)))
    D, _ = np.linalg.qr(rng.standard_normal((m, m)))
    sigma = np.abs(rng.standard_normal(m))
    return ZvdInstance(B=C.T @ C, N=N, D=D, sigma_weights=sigma, gamma=gamma, seed=rng_seed)


def zvd_subproblem(instance: ZvdInstance, grad_at_x: Vector, method: str = "auto") -> Vector:
    """argmin over the unit ball of g^T x + gamma sum_i sigma_i |(D N x)_i|."""
    x, _ = ball_analysis_l1_linear_argmin(
        grad_at_x, instance.weights, instance.operator, 1.0, method
    )
    return x


# =============================================================================
# INSTANCE SERIALIZATION
# =============================================================================


def save_tensor_instance(instance: SparsePcaInstance, path: str) -> Tuple[Path, Path]:
    """
    Binary container: magic, format version, order, dims (uint32), seed (int64),
    then entries as little-endian float64. Metadata goes to a JSON sidecar.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    t = instance.tensor
    seed = -1 if instance.seed is None else int(instance.seed)
    header = TENSOR_MAGIC + struct.pack(
        f"<II{t.order}Iq", TENSOR_FORMAT_VERSION, t.order, *t.dims, seed
    )
    with open(path, "wb") as f:
        f.write(header)
        f.write(t.entries.astype("<f8").tobytes(order="C"))

    sidecar = path.with_suffix(".json")
    with open(sidecar, "w", encoding="utf-8") as f:
        json.dump(
            {
                "kind": "sparse_pca",
                "format_version": TENSOR_FORMAT_VERSION,
                "dims": list(t.dims),
                "seed": instance.seed,
                "rho": instance.rho,
            },
            f,
            indent=2,
        )
    logger.info(f"Saved tensor instance {t.dims} to {path}")
    return path, sidecar


def load_tensor_instance(path: str) -> SparsePcaInstance:
    path = Path(path)
    data = path.read_bytes()
    if data[:4] != TENSOR_MAGIC:
        raise SolverError(f"{path} is not a tensor instance file")
    version, order = struct.unpack_from("<II", data, 4)
    if version != TENSOR_FORMAT_VERSION:
        raise SolverError(f"Unsupported tensor format version {version}")
    offset = 12
    dims = struct.unpack_from(f"<{order}I", data, offset)
    offset += 4 * order
    (seed,) = struct.unpack_from("<q", data, offset)
    offset += 8
    entries = np.frombuffer(data, dtype="<f8", offset=offset).astype(float)

    rho = 0.0
    sidecar = path.with_suffix(".json")
    if sidecar.exists():
        with open(sidecar, "r", encoding="utf-8") as f:
            rho = float(json.load(f).get("rho", 0.0))
    return SparsePcaInstance(
        tensor=DenseTensor.from_flat(dims, entries),
        rho=rho,
        seed=None if seed < 0 else int(seed),
    )
