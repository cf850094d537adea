"""单纯形约束的内层二次规划

最小化 d(λ) = (s/2)⟨λ, Qλ⟩ - ⟨B, λ⟩，λ 属于 p 维单纯形。
用带动量的投影快速梯度法求解，返回遇到的最好迭代点，
因此输出的对偶值永远不会比热启动点差。
"""

import math
from dataclasses import dataclass

import numpy as np

from core.errors import SimplexError
from core.problem.oracle import Vector
from utils.constants import SIMPLEX_TOLERANCE


@dataclass(frozen=True)
class SimplexQP:
    gram: np.ndarray
    payload: Vector
    scale: float

    def __post_init__(self):
        if not self.scale > 0:
            raise SimplexError(f"QP 缩放系数必须为正: {self.scale}")

    @property
    def size(self) -> int:
        return self.payload.shape[0]


@dataclass(frozen=True)
class InnerSolution:
    weights: Vector
    dual_value: float
    iterations: int = 0


def project_simplex(v: Vector) -> Vector:
    """欧氏投影到单纯形：排序、累加、求阈值

    投影对整体平移不变。先平移到最大分量为 0，最后归一化，输出之和恒为 1。
    """
    v = np.asarray(v, dtype=float)
    shifted = v - v.max()
    u = np.sort(shifted)[::-1]
    cssv = np.cumsum(u) - 1.0
    ind = np.arange(1, v.size + 1)
    rho = np.count_nonzero(u - cssv / ind > 0)
    theta = cssv[rho - 1] / rho
    projected = np.maximum(shifted - theta, 0.0)
    # 最大分量恒为 -theta > 0，和不会为 0
    return projected / projected.sum()


def dual_value(qp: SimplexQP, weights: Vector) -> float:
    return float(0.5 * qp.scale * (weights @ (qp.gram @ weights)) - qp.payload @ weights)


def in_simplex(weights: Vector, tolerance: float = SIMPLEX_TOLERANCE) -> bool:
    return bool(weights.min() >= -tolerance and abs(weights.sum() - 1.0) <= tolerance)


def solve(qp: SimplexQP, warm_start: Vector, max_iterations: int, tolerance: float) -> InnerSolution:
    """投影快速梯度法，热启动，返回最好迭代点"""
    warm_start = np.asarray(warm_start, dtype=float)
    if warm_start.shape != (qp.size,) or not in_simplex(warm_start):
        raise SimplexError(f"热启动点不在 {qp.size} 维单纯形内")

    best = warm_start.copy()
    best_value = dual_value(qp, best)
    if qp.size == 1:
        ones = np.ones(1)
        return InnerSolution(weights=ones, dual_value=dual_value(qp, ones))
    if max_iterations <= 0:
        return InnerSolution(weights=best, dual_value=best_value)

    # 迹是最大特征值的上界
    lipschitz = qp.scale * float(np.trace(qp.gram))
    if lipschitz <= 0.0:
        # Q = 0 时目标是线性的，最优点是单纯形的某个顶点
        vertex = np.zeros(qp.size)
        vertex[int(np.argmax(qp.payload))] = 1.0
        value = dual_value(qp, vertex)
        if value <= best_value:
            return InnerSolution(weights=vertex, dual_value=value)
        return InnerSolution(weights=best, dual_value=best_value)

    lam = warm_start.copy()
    y = warm_start.copy()
    t = 1.0
    iteration = 0
    for iteration in range(1, max_iterations + 1):
        gradient = qp.scale * (qp.gram @ y) - qp.payload
        lam_next = project_simplex(y - gradient / lipschitz)
        mapping_norm = lipschitz * float(np.linalg.norm(y - lam_next))
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        y = lam_next + ((t - 1.0) / t_next) * (lam_next - lam)
        lam, t = lam_next, t_next

        value = dual_value(qp, lam)
        if value < best_value:
            best, best_value = lam.copy(), value
        if mapping_norm <= tolerance:
            break

    return InnerSolution(weights=best, dual_value=best_value, iterations=iteration)
