"""五类合成测试问题：LASSO、NNLS、L1LR、RR、EN

每个问题由 ProblemSpec 和种子完全确定。随机数使用 numpy 的 PCG64，
按用途拆分为三个独立流：矩阵、向量、标签。
"""

import logging
import math
from dataclasses import dataclass, asdict
from enum import Enum
from typing import Any, Dict, Optional, Tuple

import numpy as np
from scipy import sparse
from scipy.special import expit

from core.errors import ConfigError
from core.problem.oracle import OracleProblem, Vector
from utils.constants import POWER_ITERATION_MAX, POWER_ITERATION_TOL

logger = logging.getLogger(__name__)


class ProblemKind(str, Enum):
    LASSO = "LASSO"
    NNLS = "NNLS"
    L1LR = "L1LR"
    RR = "RR"
    EN = "EN"


# 桌面规模的默认维度 (rows, cols)
DEFAULT_SHAPES: Dict[ProblemKind, Tuple[int, int]] = {
    ProblemKind.LASSO: (100, 100),
    ProblemKind.NNLS: (200, 200),
    ProblemKind.L1LR: (100, 200),
    ProblemKind.RR: (100, 100),
    ProblemKind.EN: (200, 100),
}

NNLS_SPARSITY = 0.01
LASSO_LAMBDA = 4.0
L1LR_LAMBDA = 5.0
L1LR_NONZEROS = 10
RIDGE_FACTOR = 1e-3


@dataclass(frozen=True)
class ProblemSpec:
    """问题实例描述

    lambda1/lambda2 为 None 时按问题类型取默认值（RR/EN 的 lambda2 依赖 σ_max(A)，
    只能在生成矩阵后确定）。
    """
    kind: ProblemKind
    rows: Optional[int] = None
    cols: Optional[int] = None
    lambda1: Optional[float] = None
    lambda2: Optional[float] = None
    seed: int = 0
    sparsity: float = NNLS_SPARSITY

    def __post_init__(self):
        object.__setattr__(self, "kind", ProblemKind(self.kind))
        default_rows, default_cols = DEFAULT_SHAPES[self.kind]
        if self.rows is None:
            object.__setattr__(self, "rows", default_rows)
        if self.cols is None:
            object.__setattr__(self, "cols", default_cols)
        if self.rows < 1 or self.cols < 1:
            raise ConfigError(f"无效的问题维度: {self.rows}x{self.cols}")
        if not 0.0 < self.sparsity <= 1.0:
            raise ConfigError(f"NNLS 稀疏度必须在 (0, 1] 内: {self.sparsity}")
        if self.kind in (ProblemKind.RR, ProblemKind.EN) and self.lambda2 is not None and self.lambda2 <= 0:
            raise ConfigError(f"{self.kind.value} 需要 lambda2 > 0")
        if self.lambda1 is not None and self.lambda1 < 0:
            raise ConfigError(f"lambda1 不能为负: {self.lambda1}")

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["kind"] = self.kind.value
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ProblemSpec":
        return cls(**data)


def shrinkage(x: Vector, tau: float) -> Vector:
    """软阈值 (|x| - tau)_+ sgn(x)"""
    return np.sign(x) * np.maximum(np.abs(x) - tau, 0.0)


def logistic_pieces(z: Vector) -> Tuple[float, Vector]:
    """返回 (Σ log(1 + e^z), 逐元素 logistic(z))，大参数下不溢出"""
    return float(np.logaddexp(0.0, z).sum()), expit(z)


def spectral_norm(A, rng: np.random.Generator) -> float:
    """幂迭代估计 σ_max(A)"""
    v = rng.standard_normal(A.shape[1])
    v /= np.linalg.norm(v)
    sigma = 0.0
    for _ in range(POWER_ITERATION_MAX):
        w = A.T @ (A @ v)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v = w / norm
        estimate = math.sqrt(norm)
        if abs(estimate - sigma) <= POWER_ITERATION_TOL * estimate:
            return estimate
        sigma = estimate
    logger.warning(f"幂迭代未在 {POWER_ITERATION_MAX} 次内收敛，σ_max ≈ {sigma:.6g}")
    return sigma


def _least_squares(A, b: Vector):
    def value(x: Vector) -> float:
        r = A @ x - b
        return 0.5 * float(r @ r)

    def gradient(x: Vector) -> Vector:
        return A.T @ (A @ x - b)

    return value, gradient


def _l1(lam: float):
    def value(x: Vector) -> float:
        return lam * float(np.abs(x).sum())

    def prox(x: Vector, tau: float) -> Vector:
        return shrinkage(x, tau * lam)

    return value, prox


def _ridge(lam: float):
    def value(x: Vector) -> float:
        return 0.5 * lam * float(x @ x)

    def prox(x: Vector, tau: float) -> Vector:
        return x / (1.0 + tau * lam)

    return value, prox


def _elastic_net(lam1: float, lam2: float):
    def value(x: Vector) -> float:
        return lam1 * float(np.abs(x).sum()) + 0.5 * lam2 * float(x @ x)

    def prox(x: Vector, tau: float) -> Vector:
        return shrinkage(x, tau * lam1) / (1.0 + tau * lam2)

    return value, prox


def _nonnegative_indicator(x: Vector) -> float:
    return 0.0 if np.all(x >= 0.0) else np.inf


def _nonnegative_projection(x: Vector, tau: float) -> Vector:
    return np.maximum(x, 0.0)


def _streams(seed: int) -> Tuple[np.random.Generator, np.random.Generator, np.random.Generator]:
    """矩阵、向量、标签三个独立的随机流"""
    children = np.random.SeedSequence(seed).spawn(3)
    return tuple(np.random.Generator(np.random.PCG64(child)) for child in children)


def _sparse_matrix(rows: int, cols: int, density: float, rng: np.random.Generator):
    """均匀无放回地选取非零位置，非零元服从 N(0,1)"""
    total = rows * cols
    nonzeros = max(1, int(round(density * total)))
    flat = rng.choice(total, size=nonzeros, replace=False)
    values = rng.standard_normal(nonzeros)
    return sparse.coo_matrix((values, np.divmod(flat, cols)), shape=(rows, cols)).tocsr()


def make_problem(spec: ProblemSpec) -> Tuple[OracleProblem, Vector]:
    """按配方生成问题实例和起点 x0"""
    matrix_rng, vector_rng, label_rng = _streams(spec.seed)
    m, n = spec.rows, spec.cols
    kind = spec.kind

    if kind == ProblemKind.NNLS:
        A = _sparse_matrix(m, n, spec.sparsity, matrix_rng)
    else:
        A = matrix_rng.standard_normal((m, n))
    sigma = spectral_norm(A, matrix_rng)
    lipschitz = sigma ** 2
    mu_psi = 0.0

    if kind == ProblemKind.LASSO:
        b = 3.0 * vector_rng.standard_normal(m)
        x0 = vector_rng.standard_normal(n)
        lam1 = LASSO_LAMBDA if spec.lambda1 is None else spec.lambda1
        f, grad = _least_squares(A, b)
        psi, prox = _l1(lam1)
    elif kind == ProblemKind.NNLS:
        b = vector_rng.standard_normal(m)
        # 起点须可行
        x0 = np.abs(vector_rng.standard_normal(n))
        f, grad = _least_squares(A, b)
        psi, prox = _nonnegative_indicator, _nonnegative_projection
    elif kind == ProblemKind.L1LR:
        x0 = np.zeros(n)
        support = vector_rng.choice(n, size=min(L1LR_NONZEROS, n), replace=False)
        x0[support] = 15.0 * vector_rng.standard_normal(support.size)
        _, prob_one = logistic_pieces(A @ x0)
        y = (label_rng.random(m) < prob_one).astype(float)
        lam1 = L1LR_LAMBDA if spec.lambda1 is None else spec.lambda1
        lipschitz = 0.25 * sigma ** 2

        def f(x: Vector) -> float:
            z = A @ x
            softplus, _ = logistic_pieces(z)
            return softplus - float(y @ z)

        def grad(x: Vector) -> Vector:
            _, logistic = logistic_pieces(A @ x)
            return A.T @ (logistic - y)

        psi, prox = _l1(lam1)
    elif kind == ProblemKind.RR:
        b = 5.0 * vector_rng.standard_normal(m)
        x0 = vector_rng.standard_normal(n)
        lam2 = RIDGE_FACTOR * lipschitz if spec.lambda2 is None else spec.lambda2
        f, grad = _least_squares(A, b)
        psi, prox = _ridge(lam2)
        mu_psi = lam2
    else:
        b = vector_rng.standard_normal(m)
        x0 = vector_rng.standard_normal(n)
        lam1 = 1.5 * math.sqrt(2.0 * math.log(n)) if spec.lambda1 is None else spec.lambda1
        lam2 = RIDGE_FACTOR * lipschitz if spec.lambda2 is None else spec.lambda2
        f, grad = _least_squares(A, b)
        psi, prox = _elastic_net(lam1, lam2)
        mu_psi = lam2

    logger.debug(f"已生成 {kind.value} 实例 {m}x{n}, seed={spec.seed}, L_f={lipschitz:.6g}, mu_psi={mu_psi:.6g}")
    problem = OracleProblem(
        dimension=n,
        smooth=f,
        smooth_gradient=grad,
        regularizer=psi,
        proximal=prox,
        mu_f=0.0,
        mu_psi=mu_psi,
        lipschitz_hint=lipschitz if lipschitz > 0 else None,
        name=kind.value,
    )
    return problem, x0
