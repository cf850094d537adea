"""加速梯度记忆法 AGMM

估计函数 ψ_k(x) = A_k W_k(x) + (1/2)||x - x0||^2（强凸时带 μ 项），
其最优值 ψ_k* 必须始终不低于 F(x_k)。μ = 0 时即为非强凸版本；
bundle 大小为 1 时退化为 ACGM（两个受保护槽位、不做 Newton 迭代）。

bundle 布局：0 号槽位放聚合条目 (h_k, g_k)，1 号槽位放新条目，
其余槽位为历史条目，按替换策略维护。
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from core.errors import ConfigError, LipschitzSearchError
from core.model.bundle import Bundle
from core.model.qp_inner import SimplexQP, dual_value, solve
from core.problem.oracle import (OracleProblem, Vector, complete_step, composite_value,
                                 descent_condition, forward_step)
from core.solvers.trace import (ConvergenceTrace, SolverConfig, StopRule, TraceRow, make_row,
                                report_violation)
from utils.constants import AGMM_INNER_ITERATIONS, QUAD_GUARD

logger = logging.getLogger(__name__)

ESTIMATE_SLACK = 1e-9


def sigma(A: float, mu: float) -> float:
    """σ(A) = A / (1 + μA)"""
    return A / (1.0 + mu * A)


@dataclass
class EstimateState:
    guarantee: float
    agg_scalar: float
    agg_gradient: Vector
    minimizer: Vector
    anchor: Vector
    mu: float
    psi_star: float = math.nan

    @classmethod
    def initial(cls, x0: Vector, mu: float, objective: float = math.nan) -> "EstimateState":
        return cls(guarantee=0.0, agg_scalar=0.0, agg_gradient=np.zeros_like(x0),
                   minimizer=x0.copy(), anchor=x0.copy(), mu=mu, psi_star=objective)


@dataclass(frozen=True)
class MiddleResult:
    weights: Vector
    guarantee: float
    psi_star: float = math.nan
    newton_steps: int = 0


@dataclass
class AgmmState:
    iterate: Vector
    objective: float
    lipschitz: float
    estimate: EstimateState
    bundle: Bundle
    has_estimate: bool = False
    iteration: int = 0
    best: float = np.inf
    step: float = 0.0
    restart_pending: bool = False
    trace: ConvergenceTrace = field(default_factory=ConvergenceTrace)


def acceleration_coefficient(L: float, A: float, mu_f: float, mu_psi: float) -> float:
    """(L - μf)a² - (γ + Aμ)a - Aγ = 0 的正根，γ = 1 + μA"""
    if L <= mu_f:
        raise ConfigError(f"Lipschitz 估计 L={L} 必须大于 mu_f={mu_f}")
    mu = mu_f + mu_psi
    gamma = 1.0 + mu * A
    linear = gamma + A * mu
    curvature = L - mu_f
    return (linear + math.sqrt(linear * linear + 4.0 * curvature * A * gamma)) / (2.0 * curvature)


def test_point(x: Vector, v: Vector, A: float, a: float, mu: float) -> Vector:
    gamma = 1.0 + mu * A
    gamma_next = 1.0 + mu * (A + a)
    weight_x = A * gamma_next
    weight_v = a * gamma
    return (weight_x * x + weight_v * v) / (weight_x + weight_v)


def model_entry(prob: OracleProblem, x_next: Vector, y: Vector, L: float, x0: Vector,
                objective: Optional[float] = None) -> Tuple[float, Vector]:
    """以 x0 为强凸项中心的新模型条目 (h̄, ḡ)"""
    if objective is None:
        objective = composite_value(prob, x_next)
    mu = prob.mu
    curvature = L - prob.mu_f
    extended = L + prob.mu_psi
    g = curvature * y - extended * x_next + mu * x0
    h = (objective - 0.5 * curvature * (y @ y) + 0.5 * extended * (x_next @ x_next)
         - 0.5 * mu * (x0 @ x0))
    return float(h), g


def psi_star(weights: Vector, qp: SimplexQP) -> float:
    """ψ* = ⟨C, λ⟩ - (σ(A)/2)⟨λ, Qλ⟩"""
    return -dual_value(qp, weights)


def newton_middle(gram: np.ndarray, payload: Vector, f_next: float, mu: float, warm: Vector,
                  A0: float, newton_budget: int, inner_budget: int,
                  tolerance: float = 0.0) -> MiddleResult:
    """用 Newton 法增大 A，同时保持 ψ*(A) >= F(x_next)"""
    weights_valid, A_valid = warm, A0
    value_valid = psi_star(warm, SimplexQP(gram, payload, sigma(A0, mu)))
    A = A0
    steps = 0
    for _ in range(newton_budget):
        solution = solve(SimplexQP(gram, payload, sigma(A, mu)), warm, inner_budget, tolerance)
        weights = solution.weights
        value = -solution.dual_value
        if value < f_next:
            break
        weights_valid, A_valid, value_valid = weights, A, value
        quad = float(weights @ (gram @ weights))
        if quad < QUAD_GUARD:
            break
        A = A + 2.0 * (1.0 + mu * A) ** 2 * (value - f_next) / quad
        steps += 1
    return MiddleResult(weights=weights_valid, guarantee=A_valid, psi_star=value_valid,
                        newton_steps=steps)


def init_state(prob: OracleProblem, x0: Vector, config: SolverConfig, capacity: int,
               metadata: Optional[dict] = None) -> AgmmState:
    L0 = config.initial_lipschitz(prob.lipschitz_hint)
    x0 = np.array(x0, dtype=float)
    objective = composite_value(prob, x0)
    state = AgmmState(
        iterate=x0,
        objective=objective,
        lipschitz=L0,
        estimate=EstimateState.initial(x0, prob.mu, objective),
        bundle=Bundle(prob.dimension, capacity, config.replacement),
        best=objective,
        trace=ConvergenceTrace(metadata=dict(metadata or {})),
    )
    state.trace.append(make_row(0, objective, objective, 0.0, L0, 0.0, 0, prob.counter,
                                psi_star=objective))
    return state


def _accelerated_search(prob: OracleProblem, state: AgmmState, config: SolverConfig):
    """系数、测试点和 x_{k+1} 随每次回溯一起重算"""
    estimate = state.estimate
    L = state.lipschitz * config.r_d
    for _ in range(config.max_doublings + 1):
        if L > prob.mu_f:
            a = acceleration_coefficient(L, estimate.guarantee, prob.mu_f, prob.mu_psi)
            y = test_point(state.iterate, estimate.minimizer, estimate.guarantee, a, prob.mu)
            forward = forward_step(prob, y, L)
            if descent_condition(prob, y, forward, L):
                return L, a, y, complete_step(prob, y, L, forward)
        L *= config.r_u
    raise LipschitzSearchError(f"AGMM Lipschitz 搜索在 {config.max_doublings} 次放大后失败 (L={L:.3g})")


def agmm_step(prob: OracleProblem, state: AgmmState, config: SolverConfig,
              inner_iterations: int = AGMM_INNER_ITERATIONS,
              newton_iterations: Optional[int] = None) -> AgmmState:
    if newton_iterations is None:
        newton_iterations = config.newton_iterations
    estimate = state.estimate
    mu = prob.mu
    L, a, y, result = _accelerated_search(prob, state, config)
    x_next = result.point
    f_next = result.objective_at_point
    h_bar, g_bar = model_entry(prob, x_next, y, L, estimate.anchor, f_next)
    bundle = state.bundle
    A_prev = estimate.guarantee

    middle_path = state.has_estimate
    if not middle_path:
        # 第一步是普通梯度步，λ = 1
        bundle.overwrite_slot(0, h_bar, g_bar)
        A_next = a
        weights = np.ones(1)
        payload = bundle.linear_payload(estimate.anchor)
        value = psi_star(weights, SimplexQP(bundle.gram, payload, sigma(A_next, mu)))
        state.has_estimate = True
    else:
        if bundle.capacity < 2:
            raise ConfigError("AGMM 在 k >= 1 时需要至少两个槽位")
        bundle.overwrite_slot(0, estimate.agg_scalar, estimate.agg_gradient)
        bundle.overwrite_slot(1, h_bar, g_bar)
        payload = bundle.linear_payload(estimate.anchor)
        warm = np.zeros(bundle.count)
        warm[0], warm[1] = A_prev, a
        warm /= A_prev + a
        A_start = A_prev + a
        warm_value = psi_star(warm, SimplexQP(bundle.gram, payload, sigma(A_start, mu)))
        if warm_value < f_next - ESTIMATE_SLACK * (1.0 + abs(f_next)):
            report_violation(config, f"AGMM 第 {state.iteration + 1} 步热启动不可行: "
                                     f"ψ̄*={warm_value:.17g} < F={f_next:.17g}")
        middle = newton_middle(bundle.gram, payload, f_next, mu, warm, A_start,
                               newton_iterations, inner_iterations, config.inner_tolerance)
        weights, A_next, value = middle.weights, middle.guarantee, middle.psi_star

    h, g = bundle.aggregate(weights)
    if middle_path and bundle.capacity > 2:
        # 新条目迁入可替换区域，下一轮 1 号槽位会被改写
        bundle.insert(h_bar, g_bar, protected={0, 1})

    if value < f_next - ESTIMATE_SLACK * (1.0 + abs(f_next)):
        report_violation(config, f"AGMM 第 {state.iteration + 1} 步估计序列性质被破坏: "
                                 f"ψ*={value:.17g} < F={f_next:.17g}")
    if A_next < A_prev + a * (1.0 - 1e-12):
        report_violation(config, f"AGMM 第 {state.iteration + 1} 步保证未增长: {A_prev} + {a} > {A_next}")

    estimate.guarantee = A_next
    estimate.agg_scalar = h
    estimate.agg_gradient = g
    estimate.minimizer = estimate.anchor - sigma(A_next, mu) * g
    estimate.psi_star = value

    state.iterate = x_next
    state.objective = f_next
    state.lipschitz = L
    state.step = a
    state.iteration += 1
    state.best = min(state.best, f_next)
    state.trace.append(make_row(state.iteration, f_next, state.best, A_next, L, a, bundle.count,
                                prob.counter, psi_star=value, restart=state.restart_pending))
    state.restart_pending = False
    logger.debug(f"AGMM k={state.iteration} F={f_next:.12g} L={L:.4g} a={a:.4g} A={A_next:.6g} "
                 f"ψ*={value:.12g} p={bundle.count}")
    return state


class AgmmScheme:
    """AGMM 的可重启包装，满足重启包装器的内层方法约定"""
    method = "AGMM"

    def __init__(self, prob: OracleProblem, x0: Vector, config: SolverConfig,
                 metadata: Optional[dict] = None):
        self.prob = prob if prob.counter is not None else prob.with_counter()
        self.config = config
        self.inner_iterations = config.inner_iterations or AGMM_INNER_ITERATIONS
        # m = 1 即 ACGM：只保留聚合条目和新条目，不做 Newton 迭代
        self.newton_iterations = 0 if config.bundle_size == 1 else config.newton_iterations
        capacity = max(config.bundle_size, 2)
        meta = {"method": self.method, "m": config.bundle_size,
                "replacement": config.replacement.value}
        meta.update(metadata or {})
        self.state = init_state(self.prob, x0, config, capacity, meta)

    @property
    def trace(self) -> ConvergenceTrace:
        return self.state.trace

    @property
    def guarantee(self) -> float:
        return self.state.estimate.guarantee

    @property
    def objective(self) -> float:
        return self.state.objective

    @property
    def iterate(self) -> Vector:
        return self.state.iterate

    @property
    def iteration(self) -> int:
        return self.state.iteration

    @property
    def lipschitz(self) -> float:
        return self.state.lipschitz

    def step(self) -> TraceRow:
        agmm_step(self.prob, self.state, self.config, self.inner_iterations, self.newton_iterations)
        return self.state.trace.last

    def restart(self, anchor: Vector, soft: bool, objective: Optional[float] = None,
                mark: bool = True) -> None:
        """以 anchor 为新的 x0 重启，A = 0, v = anchor

        软重启保留 bundle，把所有条目和聚合条目的强凸项中心换到新 anchor；
        硬重启清空 bundle，下一步重新做普通梯度步。
        """
        state = self.state
        estimate = state.estimate
        anchor = np.array(anchor, dtype=float)
        objective = composite_value(self.prob, anchor) if objective is None else objective
        if soft and state.has_estimate:
            mu = estimate.mu
            if mu > 0:
                shift = mu * (anchor - estimate.anchor)
                offset = 0.5 * mu * (estimate.anchor @ estimate.anchor - anchor @ anchor)
                state.bundle.recenter(shift, offset)
                estimate.agg_gradient = estimate.agg_gradient + shift
                estimate.agg_scalar += offset
        else:
            state.bundle.clear()
            state.has_estimate = False
            estimate.agg_scalar = 0.0
            estimate.agg_gradient = np.zeros_like(anchor)
        estimate.anchor = anchor.copy()
        estimate.minimizer = anchor.copy()
        estimate.guarantee = 0.0
        estimate.psi_star = objective
        state.iterate = anchor
        state.objective = objective
        state.restart_pending = mark

    def run(self, budget: int, stop: Optional[StopRule] = None) -> bool:
        if stop is not None and stop(self.objective):
            return True
        for _ in range(budget):
            self.step()
            if stop is not None and stop(self.objective):
                return True
        return False


def run(prob: OracleProblem, x0: Vector, config: SolverConfig,
        stop: Optional[StopRule] = None) -> ConvergenceTrace:
    scheme = AgmmScheme(prob, x0, config)
    converged = scheme.run(config.max_iterations, stop)
    scheme.trace.metadata["converged"] = converged
    logger.info(f"AGMM(m={config.bundle_size}, mu={prob.mu:.3g}) 结束: {scheme.iteration} 次迭代, "
                f"F={scheme.objective:.12g}, 收敛={converged}")
    return scheme.trace
