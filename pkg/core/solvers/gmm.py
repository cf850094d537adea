"""梯度记忆法 GMM（不动点版本）

每次迭代先做 Lipschitz 回溯得到回退点 T_L(x_k)，把新条目写入受保护的
0 号槽位，再在模型上搜索更大的步长；搜索失败时退回近端梯度步。
"""

import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from core.errors import LipschitzSearchError
from core.model.bundle import Bundle
from core.model.qp_inner import SimplexQP, solve
from core.problem.oracle import (OracleProblem, ProxStepResult, Vector, complete_step,
                                 composite_value, descent_condition, forward_step, slack)
from core.solvers.trace import (ConvergenceTrace, SolverConfig, StopRule, TraceRow, make_row,
                                report_violation)
from utils.constants import GMM_INNER_ITERATIONS, MAX_DOUBLINGS

logger = logging.getLogger(__name__)


@dataclass
class GmmState:
    iterate: Vector
    objective: float
    lipschitz: float
    step_size: float
    bundle: Bundle
    guarantee: float = 0.0
    iteration: int = 0
    best: float = np.inf
    restart_pending: bool = False
    trace: ConvergenceTrace = field(default_factory=ConvergenceTrace)


@dataclass(frozen=True)
class StepSearchResult:
    point: Vector
    step: float
    weights: Optional[Vector]
    objective: float
    trials: int

    @property
    def accepted(self) -> bool:
        return self.weights is not None


def lipschitz_search(prob: OracleProblem, x: Vector, L_start: float, r_u: float, r_d: float,
                     max_doublings: int = MAX_DOUBLINGS) -> Tuple[float, ProxStepResult]:
    """从 r_d * L_start 开始，按 r_u 放大直到下降条件成立"""
    L = L_start * r_d
    f_center = None
    for _ in range(max_doublings + 1):
        forward = forward_step(prob, x, L, f_center)
        f_center = forward.f_center
        if descent_condition(prob, x, forward, L):
            return L, complete_step(prob, x, L, forward)
        L *= r_u
    raise LipschitzSearchError(f"Lipschitz 搜索在 {max_doublings} 次放大后仍未满足下降条件 (L={L:.3g})")


def step_size_search(prob: OracleProblem, state: GmmState, fallback: ProxStepResult, tau: float,
                     r_u: float, r_d: float, inner_iterations: int = GMM_INNER_ITERATIONS,
                     tolerance: float = 0.0) -> StepSearchResult:
    """在模型上搜索步长 a > tau，失败时返回回退点"""
    bundle = state.bundle
    payload = bundle.linear_payload(state.iterate)
    gram = bundle.gram
    warm = np.zeros(bundle.count)
    warm[0] = 1.0

    a = state.step_size / r_d
    trials = 0
    while a > tau:
        solution = solve(SimplexQP(gram, payload, a), warm, inner_iterations, tolerance)
        candidate = state.iterate - a * (bundle.gradients @ solution.weights)
        objective = composite_value(prob, candidate)
        trials += 1
        if objective <= -solution.dual_value + slack(solution.dual_value):
            return StepSearchResult(candidate, a, solution.weights, objective, trials)
        warm = solution.weights
        a /= r_u

    return StepSearchResult(fallback.point, tau, None, fallback.objective_at_point, trials)


def init_state(prob: OracleProblem, x0: Vector, config: SolverConfig,
               metadata: Optional[dict] = None) -> GmmState:
    L0 = config.initial_lipschitz(prob.lipschitz_hint)
    x0 = np.array(x0, dtype=float)
    objective = composite_value(prob, x0)
    state = GmmState(
        iterate=x0,
        objective=objective,
        lipschitz=L0,
        step_size=1.0 / L0,
        bundle=Bundle(prob.dimension, config.bundle_size, config.replacement),
        best=objective,
        trace=ConvergenceTrace(metadata=dict(metadata or {})),
    )
    state.trace.append(make_row(0, objective, objective, 0.0, L0, 0.0, 0, prob.counter))
    return state


def gmm_step(prob: OracleProblem, state: GmmState, config: SolverConfig,
             inner_iterations: int = GMM_INNER_ITERATIONS) -> GmmState:
    L, fallback = lipschitz_search(prob, state.iterate, state.lipschitz, config.r_u, config.r_d,
                                   config.max_doublings)
    tau = fallback.fallback_step

    bundle = state.bundle
    # 上一轮的新条目迁入可替换区域
    if bundle.count >= 1 and bundle.capacity > 1:
        h_prev, g_prev = bundle.entry(0)
        bundle.insert(h_prev, g_prev, protected={0})
    bundle.overwrite_slot(0, fallback.scalar_bound, fallback.mapping)

    if bundle.count == 1:
        search = StepSearchResult(fallback.point, tau, None, fallback.objective_at_point, 0)
    else:
        search = step_size_search(prob, state, fallback, tau, config.r_u, config.r_d,
                                  inner_iterations, config.inner_tolerance)

    if search.objective > state.objective + 1e-12 * (1.0 + abs(state.objective)):
        report_violation(config, f"GMM 第 {state.iteration + 1} 步目标值上升: "
                                 f"{state.objective:.17g} -> {search.objective:.17g}")

    state.iterate = search.point
    state.objective = search.objective
    state.lipschitz = L
    state.step_size = search.step
    state.guarantee += search.step
    state.iteration += 1
    state.best = min(state.best, search.objective)
    state.trace.append(make_row(state.iteration, state.objective, state.best, state.guarantee, L,
                                search.step, bundle.count, prob.counter,
                                restart=state.restart_pending))
    state.restart_pending = False
    logger.debug(f"GMM k={state.iteration} F={state.objective:.12g} L={L:.4g} a={search.step:.4g} "
                 f"tau={tau:.4g} trials={search.trials} p={bundle.count}")
    return state


class GmmScheme:
    """GMM 的可重启包装，满足重启包装器的内层方法约定"""
    method = "GMM"

    def __init__(self, prob: OracleProblem, x0: Vector, config: SolverConfig,
                 metadata: Optional[dict] = None):
        self.prob = prob if prob.counter is not None else prob.with_counter()
        self.config = config
        self.inner_iterations = config.inner_iterations or GMM_INNER_ITERATIONS
        meta = {"method": self.method, "m": config.bundle_size,
                "replacement": config.replacement.value}
        meta.update(metadata or {})
        self.state = init_state(self.prob, x0, config, meta)

    @property
    def trace(self) -> ConvergenceTrace:
        return self.state.trace

    @property
    def guarantee(self) -> float:
        return self.state.guarantee

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
        gmm_step(self.prob, self.state, self.config, self.inner_iterations)
        return self.state.trace.last

    def restart(self, anchor: Vector, soft: bool, objective: Optional[float] = None,
                mark: bool = True) -> None:
        """从 anchor 重新开始累积保证；硬重启清空 bundle"""
        state = self.state
        state.iterate = np.array(anchor, dtype=float)
        state.objective = composite_value(self.prob, state.iterate) if objective is None else objective
        state.guarantee = 0.0
        state.restart_pending = mark
        if not soft:
            state.bundle.clear()

    def run(self, budget: int, stop: Optional[StopRule] = None) -> bool:
        """迭代至预算用尽或停止判据满足，返回是否因判据停止"""
        if stop is not None and stop(self.objective):
            return True
        for _ in range(budget):
            self.step()
            if stop is not None and stop(self.objective):
                return True
        return False


def run(prob: OracleProblem, x0: Vector, config: SolverConfig,
        stop: Optional[StopRule] = None) -> ConvergenceTrace:
    scheme = GmmScheme(prob, x0, config)
    converged = scheme.run(config.max_iterations, stop)
    scheme.trace.metadata["converged"] = converged
    logger.info(f"GMM(m={config.bundle_size}) 结束: {scheme.iteration} 次迭代, "
                f"F={scheme.objective:.12g}, 收敛={converged}")
    return scheme.trace
