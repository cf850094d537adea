"""测试公共夹具"""

from pathlib import Path

import numpy as np
import pytest

from core.problem.oracle import OracleProblem
from core.problem.problems import ProblemKind, ProblemSpec, make_problem

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture
def data_dir() -> Path:
    return DATA_DIR


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240601)


@pytest.fixture
def small_lasso():
    prob, x0 = make_problem(ProblemSpec(ProblemKind.LASSO, rows=20, cols=30, seed=3))
    return prob, x0


@pytest.fixture
def small_ridge():
    """条件数适中的小规模岭回归，μ = lambda2"""
    prob, x0 = make_problem(ProblemSpec(ProblemKind.RR, rows=30, cols=30, seed=5, lambda2=1.0))
    return prob, x0


def _ridge_hessian(prob: OracleProblem) -> np.ndarray:
    n = prob.dimension
    base = prob.smooth_gradient(np.zeros(n))
    columns = [prob.smooth_gradient(np.eye(n)[i]) - base for i in range(n)]
    return np.column_stack(columns)


@pytest.fixture
def ridge_optimum():
    """二次问题的精确解：由梯度差分恢复 AᵀA，再解线性方程"""
    def solve(prob: OracleProblem):
        n = prob.dimension
        hessian = _ridge_hessian(prob)
        base = prob.smooth_gradient(np.zeros(n))
        x_star = np.linalg.solve(hessian + prob.mu_psi * np.eye(n), -base)
        value = prob.f_value(x_star) + prob.psi_value(x_star)
        return value, x_star
    return solve


@pytest.fixture
def smooth_lipschitz():
    """二次光滑部分的精确 Lipschitz 常数"""
    def compute(prob: OracleProblem) -> float:
        return float(np.linalg.eigvalsh(_ridge_hessian(prob)).max())
    return compute
