"""重启包装器：已知增长参数 μ 的固定阈值重启，以及自适应重启

包装器只依赖内层方法的约定：单调且无界的收敛保证 A_k、每次迭代给出
F(x_k)、并且 F(x_k) <= F(x_0)。GmmScheme 和 AgmmScheme 都满足。
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, List, Optional, Protocol, Sequence, Tuple

import numpy as np

from core.errors import ConfigError
from core.problem.oracle import OracleProblem, Vector, composite_value
from core.solvers.trace import ConvergenceTrace, StopRule, TraceRow, report_violation
from utils.constants import (INNER_RUN_CAP, MAX_ITERATIONS, RESTART_DECREASE, RESTART_ESCALATION,
                             RESTART_OUTER_BUDGET)

logger = logging.getLogger(__name__)

# 与参考最优值比较时的相对容差
REFERENCE_SLACK = 1e-6


class RestartMode(str, Enum):
    SOFT = "soft"
    HARD = "hard"


class InnerScheme(Protocol):
    prob: OracleProblem
    config: object

    @property
    def guarantee(self) -> float: ...

    @property
    def objective(self) -> float: ...

    @property
    def iterate(self) -> Vector: ...

    @property
    def lipschitz(self) -> float: ...

    @property
    def iteration(self) -> int: ...

    @property
    def trace(self) -> ConvergenceTrace: ...

    def step(self) -> TraceRow: ...

    def restart(self, anchor: Vector, soft: bool, objective: Optional[float] = None,
                mark: bool = True) -> None: ...


@dataclass
class RestartConfig:
    decrease_factor: float = RESTART_DECREASE
    escalation: float = RESTART_ESCALATION
    mode: RestartMode = RestartMode.SOFT
    growth: Optional[float] = None
    outer_budget: int = RESTART_OUTER_BUDGET
    max_iterations: int = MAX_ITERATIONS
    inner_cap: int = INNER_RUN_CAP
    project_start: bool = True

    def __post_init__(self):
        self.mode = RestartMode(self.mode)
        if not 0.0 < self.decrease_factor < 1.0:
            raise ConfigError(f"重启下降因子 D 必须在 (0, 1) 内: {self.decrease_factor}")
        if not self.escalation > 1.0:
            raise ConfigError(f"阈值放大因子 s 必须大于 1: {self.escalation}")
        if self.growth is not None and self.growth < 0:
            raise ConfigError(f"增长参数不能为负: {self.growth}")
        if self.outer_budget < 1:
            raise ConfigError(f"外层预算必须为正: {self.outer_budget}")

    @property
    def soft(self) -> bool:
        return self.mode == RestartMode.SOFT


@dataclass
class WrapperState:
    anchor: Vector
    threshold: float = 0.0
    objective_history: List[float] = field(default_factory=list)
    guarantees: List[float] = field(default_factory=list)
    thresholds: List[float] = field(default_factory=list)
    segment_ends: List[int] = field(default_factory=list)
    backtracks: int = 0
    total_inner_iterations: int = 0


def initial_stop_criterion(trace_values: Sequence[float], D: float) -> bool:
    """F(x_m) - F(x_k) <= D/(1-D) (F(x_0) - F(x_m))，m = ceil(k/2)"""
    k = len(trace_values) - 1
    if k < 1:
        return False
    m = math.ceil(k / 2)
    return bool(trace_values[m] - trace_values[k] <= D / (1.0 - D) * (trace_values[0] - trace_values[m]))


def geometric_check(prev_gap: float, curr_gap: float, D: float) -> bool:
    return bool(curr_gap <= D / (1.0 - D) * prev_gap)


def _begin(prob: OracleProblem, scheme: InnerScheme, config: RestartConfig) -> WrapperState:
    """r0 = prox(x0, 1/L0)"""
    anchor = scheme.iterate
    if config.project_start:
        anchor = scheme.prob.prox(anchor, 1.0 / scheme.lipschitz)
        scheme.restart(anchor, soft=False, objective=composite_value(scheme.prob, anchor), mark=False)
    state = WrapperState(anchor=np.array(anchor, dtype=float))
    state.objective_history.append(scheme.objective)
    return state


def _run_segment(scheme: InnerScheme, wrapper: WrapperState, config: RestartConfig, threshold: float,
                 criterion: Optional[Callable[[List[float]], bool]],
                 stop: Optional[StopRule]) -> Tuple[bool, bool]:
    """运行一段内层迭代，返回 (停止判据满足, 总预算用尽)"""
    values = [scheme.objective]
    steps = 0
    while True:
        if wrapper.total_inner_iterations >= config.max_iterations:
            return False, True
        scheme.step()
        steps += 1
        wrapper.total_inner_iterations += 1
        values.append(scheme.objective)
        if stop is not None and stop(scheme.objective):
            return True, False
        if steps >= config.inner_cap:
            logger.warning(f"内层运行达到 {config.inner_cap} 次迭代上限，强制重启")
            return False, False
        if scheme.guarantee >= threshold and (criterion is None or criterion(values)):
            return False, False


def _close_segment(scheme: InnerScheme, wrapper: WrapperState) -> None:
    previous = wrapper.objective_history[-1]
    wrapper.anchor = np.array(scheme.iterate, dtype=float)
    wrapper.objective_history.append(scheme.objective)
    wrapper.guarantees.append(scheme.guarantee)
    wrapper.thresholds.append(wrapper.threshold)
    wrapper.segment_ends.append(scheme.iteration)
    if scheme.objective > previous + 1e-12 * (1.0 + abs(previous)):
        report_violation(scheme.config, f"重启段结束时目标值上升: {previous:.17g} -> {scheme.objective:.17g}")


def _check_contraction(scheme: InnerScheme, wrapper: WrapperState, mu: float, reference: float) -> None:
    """F(r_{j+1}) - F* <= (F(r_j) - F*) / (μ U_{j+1})"""
    before, after = wrapper.objective_history[-2], wrapper.objective_history[-1]
    guarantee = wrapper.guarantees[-1]
    bound = (before - reference) / (mu * guarantee)
    tolerance = REFERENCE_SLACK * (1.0 + abs(reference))
    if after - reference > bound + tolerance:
        report_violation(scheme.config, f"重启段收缩不满足: F(r+)-F*={after - reference:.6g} > {bound:.6g}")


def _finish(scheme: InnerScheme, wrapper: WrapperState, config: RestartConfig, strategy: str,
            converged: bool, mu: Optional[float], reference: Optional[float]) -> ConvergenceTrace:
    trace = scheme.trace
    segments = []
    start = 0
    for end, objective, guarantee, threshold in zip(wrapper.segment_ends, wrapper.objective_history[1:],
                                                    wrapper.guarantees, wrapper.thresholds):
        segments.append({"start": start, "end": end, "objective": objective,
                         "guarantee": guarantee, "threshold": threshold})
        start = end
    trace.metadata.update({
        "restart": config.mode.value,
        "restart_strategy": strategy,
        "D": config.decrease_factor,
        "s": config.escalation,
        "backtracks": wrapper.backtracks,
        "segments": segments,
        "converged": converged,
    })
    if mu is not None and mu > 0 and wrapper.guarantees:
        # F(r_J) - F* <= (F(r_0) - F(r_J)) / (C_J - 1)，C_J = μ^J Π U_j
        log_c = sum(math.log(mu * u) for u in wrapper.guarantees if u > 0)
        if log_c > 0:
            gap = wrapper.objective_history[0] - wrapper.objective_history[-1]
            certified = gap / math.expm1(log_c) if log_c < 700 else 0.0
            trace.metadata["certified_gap"] = certified
            if reference is not None:
                observed = wrapper.objective_history[-1] - reference
                if observed > certified + REFERENCE_SLACK * (1.0 + abs(reference)):
                    report_violation(scheme.config, f"终止时的精度界不满足: {observed:.6g} > {certified:.6g}")
    logger.info(f"{strategy} 重启结束: {len(wrapper.guarantees)} 段, {wrapper.total_inner_iterations} 次内层迭代, "
                f"回溯 {wrapper.backtracks} 次, F={scheme.objective:.12g}")
    return trace


def run_known_mu(prob: OracleProblem, inner_scheme: InnerScheme, mu: float, config: RestartConfig,
                 stop: Optional[StopRule] = None, reference: Optional[float] = None) -> ConvergenceTrace:
    """每当保证达到 Ū = 1/(μD) 就重启"""
    if not mu > 0:
        raise ConfigError(f"已知增长参数重启需要 mu > 0: {mu}")
    D = config.decrease_factor
    wrapper = _begin(prob, inner_scheme, config)
    wrapper.threshold = 1.0 / (mu * D)
    logger.info(f"已知 μ={mu:.6g} 重启，阈值 Ū={wrapper.threshold:.6g}")

    converged = stop is not None and stop(inner_scheme.objective)
    for _ in range(config.outer_budget):
        if converged:
            break
        converged, exhausted = _run_segment(inner_scheme, wrapper, config, wrapper.threshold, None, stop)
        _close_segment(inner_scheme, wrapper)
        if reference is not None:
            _check_contraction(inner_scheme, wrapper, mu, reference)
        if converged or exhausted:
            break
        inner_scheme.restart(wrapper.anchor, config.soft, inner_scheme.objective)
    return _finish(inner_scheme, wrapper, config, "known_mu", converged, mu, reference)


def run_adaptive(prob: OracleProblem, inner_scheme: InnerScheme, config: RestartConfig,
                 stop: Optional[StopRule] = None, reference: Optional[float] = None) -> ConvergenceTrace:
    """不需要 μ 的自适应重启

    第一段用阈值 0 加初始停止判据，之后以第一段的保证 U_1 为阈值；
    相邻两段的下降量不满足几何条件时，阈值乘以 s。
    config.growth 只用于运行时检查，不影响迭代。
    """
    D, s = config.decrease_factor, config.escalation
    mu = config.growth
    wrapper = _begin(prob, inner_scheme, config)

    converged = stop is not None and stop(inner_scheme.objective)
    exhausted = False
    if not converged:
        converged, exhausted = _run_segment(inner_scheme, wrapper, config, 0.0,
                                            lambda values: initial_stop_criterion(values, D), stop)
        _close_segment(inner_scheme, wrapper)
        wrapper.threshold = wrapper.guarantees[-1]
        logger.info(f"自适应重启首段 {inner_scheme.iteration} 次迭代，U1={wrapper.threshold:.6g}")
        if mu and reference is not None:
            _check_contraction(inner_scheme, wrapper, mu, reference)

    for _ in range(config.outer_budget - 1):
        if converged or exhausted:
            break
        inner_scheme.restart(wrapper.anchor, config.soft, inner_scheme.objective)
        converged, exhausted = _run_segment(inner_scheme, wrapper, config, wrapper.threshold, None, stop)
        _close_segment(inner_scheme, wrapper)
        if mu and reference is not None:
            _check_contraction(inner_scheme, wrapper, mu, reference)
        history = wrapper.objective_history
        if len(history) >= 3:
            prev_gap = history[-3] - history[-2]
            curr_gap = history[-2] - history[-1]
            if not geometric_check(prev_gap, curr_gap, D):
                wrapper.threshold *= s
                wrapper.backtracks += 1
                logger.info(f"几何下降条件不满足，阈值放大到 {wrapper.threshold:.6g}")
    return _finish(inner_scheme, wrapper, config, "adaptive", converged, mu, reference)
