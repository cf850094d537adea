"""求解器公共配置与收敛轨迹"""

import logging
import math
from dataclasses import dataclass, field, fields, astuple
from typing import Any, Callable, Dict, List, Optional

import numpy as np

from core.errors import ConfigError, InvariantViolation
from core.model.bundle import ReplacementStrategy
from core.problem.oracle import OracleCounter
from utils.constants import (INNER_TOLERANCE, MAX_DOUBLINGS, MAX_ITERATIONS, NEWTON_ITERATIONS,
                             RATIO_DOWN, RATIO_UP)

logger = logging.getLogger(__name__)

# 停止判据：给定当前目标值，返回是否停止
StopRule = Callable[[float], bool]


@dataclass
class SolverConfig:
    """GMM / AGMM 共用的参数"""
    bundle_size: int = 1
    replacement: ReplacementStrategy = ReplacementStrategy.CYCLIC
    L0: Optional[float] = None
    r_u: float = RATIO_UP
    r_d: float = RATIO_DOWN
    max_iterations: int = MAX_ITERATIONS
    inner_iterations: Optional[int] = None
    inner_tolerance: float = INNER_TOLERANCE
    newton_iterations: int = NEWTON_ITERATIONS
    max_doublings: int = MAX_DOUBLINGS
    strict: bool = False

    def __post_init__(self):
        self.replacement = ReplacementStrategy(self.replacement)
        if self.bundle_size < 1:
            raise ConfigError(f"bundle 大小必须 >= 1: {self.bundle_size}")
        if not self.r_u > 1.0 or not 0.0 < self.r_d <= 1.0:
            raise ConfigError(f"搜索比例需满足 r_u > 1 >= r_d > 0: r_u={self.r_u}, r_d={self.r_d}")
        if self.L0 is not None and not self.L0 > 0:
            raise ConfigError(f"L0 必须为正: {self.L0}")
        if self.max_iterations < 0:
            raise ConfigError(f"迭代预算不能为负: {self.max_iterations}")
        if self.newton_iterations < 0:
            raise ConfigError(f"Newton 预算不能为负: {self.newton_iterations}")

    def initial_lipschitz(self, hint: Optional[float]) -> float:
        if self.L0 is not None:
            return self.L0
        return hint if hint is not None else 1.0


@dataclass
class TraceRow:
    iteration: int
    objective: float
    objective_best: float
    relative_error: float
    relative_error_best: float
    guarantee: float
    psi_star: float
    lipschitz: float
    step: float
    bundle_size: int
    gradient_calls: int
    prox_calls: int
    objective_calls: int
    restart: int

    def values(self) -> tuple:
        return astuple(self)


TRACE_COLUMNS = tuple(f.name for f in fields(TraceRow))


def make_row(iteration: int, objective: float, best: float, guarantee: float, lipschitz: float,
             step: float, bundle_size: int, counter: Optional[OracleCounter],
             psi_star: float = math.nan, restart: bool = False) -> TraceRow:
    calls = counter.snapshot() if counter is not None else {}
    return TraceRow(
        iteration=iteration,
        objective=objective,
        objective_best=best,
        relative_error=math.nan,
        relative_error_best=math.nan,
        guarantee=guarantee,
        psi_star=psi_star,
        lipschitz=lipschitz,
        step=step,
        bundle_size=bundle_size,
        gradient_calls=calls.get("gradient_calls", 0),
        prox_calls=calls.get("prox_calls", 0),
        objective_calls=calls.get("objective_calls", 0),
        restart=int(restart),
    )


@dataclass
class ConvergenceTrace:
    """逐次迭代的记录和元数据"""
    metadata: Dict[str, Any] = field(default_factory=dict)
    rows: List[TraceRow] = field(default_factory=list)

    def append(self, row: TraceRow) -> None:
        if self.rows and row.iteration <= self.rows[-1].iteration:
            raise ValueError(f"迭代序号必须严格递增: {self.rows[-1].iteration} -> {row.iteration}")
        self.rows.append(row)

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def last(self) -> TraceRow:
        return self.rows[-1]

    @property
    def iterations(self) -> int:
        return self.rows[-1].iteration if self.rows else 0

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(row, name) for row in self.rows], dtype=float)

    def objectives(self) -> np.ndarray:
        return self.column("objective")

    def attach_reference(self, optimum: float) -> None:
        """以参考最优值填充相对误差列"""
        if not self.rows:
            return
        initial_gap = self.rows[0].objective - optimum
        for row in self.rows:
            if initial_gap > 0:
                row.relative_error = (row.objective - optimum) / initial_gap
                row.relative_error_best = (row.objective_best - optimum) / initial_gap
            else:
                row.relative_error = row.relative_error_best = 0.0
        self.metadata["reference_optimum"] = optimum

    def iterations_to(self, epsilon: float) -> Optional[int]:
        """首次相对误差低于 epsilon 的迭代序号"""
        for row in self.rows:
            if row.relative_error < epsilon:
                return row.iteration
        return None


def report_violation(config: SolverConfig, message: str) -> None:
    """不变量被破坏：严格模式抛出异常，否则记录警告"""
    if config.strict:
        raise InvariantViolation(message)
    logger.warning(message)
