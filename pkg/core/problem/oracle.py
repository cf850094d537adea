"""复合问题预言机与复合梯度映射"""

from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Optional

import numpy as np

from core.errors import ConfigError
from utils.constants import MACHINE_EPS, SLACK_FACTOR

Vector = np.ndarray


def slack(reference: float) -> float:
    """运行时不等式检查的相对容差"""
    return SLACK_FACTOR * MACHINE_EPS * (1.0 + abs(reference))


@dataclass
class OracleCounter:
    """预言机调用计数"""
    gradient_calls: int = 0
    prox_calls: int = 0
    objective_calls: int = 0

    def snapshot(self) -> Dict[str, int]:
        return {
            "gradient_calls": self.gradient_calls,
            "prox_calls": self.prox_calls,
            "objective_calls": self.objective_calls,
        }


@dataclass(frozen=True)
class OracleProblem:
    """复合目标 F = f + Ψ

    构造后不可变，可在线程间共享。计数器只挂在求解器私有的副本上
    （见 with_counter）。
    """
    dimension: int
    smooth: Callable[[Vector], float]
    smooth_gradient: Callable[[Vector], Vector]
    regularizer: Callable[[Vector], float]
    proximal: Callable[[Vector, float], Vector]
    mu_f: float = 0.0
    mu_psi: float = 0.0
    lipschitz_hint: Optional[float] = None
    name: str = "problem"
    counter: Optional[OracleCounter] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.dimension < 1:
            raise ConfigError(f"问题维度必须为正整数: {self.dimension}")
        if self.mu_f < 0 or self.mu_psi < 0:
            raise ConfigError(f"强凸参数不能为负: mu_f={self.mu_f}, mu_psi={self.mu_psi}")
        if self.lipschitz_hint is not None and self.lipschitz_hint <= 0:
            raise ConfigError(f"Lipschitz 常数必须为正: {self.lipschitz_hint}")

    @property
    def mu(self) -> float:
        return self.mu_f + self.mu_psi

    def f_value(self, x: Vector) -> float:
        return float(self.smooth(x))

    def f_gradient(self, x: Vector) -> Vector:
        if self.counter is not None:
            self.counter.gradient_calls += 1
        return np.asarray(self.smooth_gradient(x), dtype=float)

    def psi_value(self, x: Vector) -> float:
        return float(self.regularizer(x))

    def prox(self, x: Vector, tau: float) -> Vector:
        if self.counter is not None:
            self.counter.prox_calls += 1
        return np.asarray(self.proximal(x, tau), dtype=float)

    def count_objective(self) -> None:
        if self.counter is not None:
            self.counter.objective_calls += 1

    def with_counter(self) -> "OracleProblem":
        """返回带独立计数器的副本"""
        return replace(self, counter=OracleCounter())

    def with_convexity(self, mu_f: float, mu_psi: float) -> "OracleProblem":
        return replace(self, mu_f=mu_f, mu_psi=mu_psi)


@dataclass(frozen=True)
class ForwardStep:
    """一次试探的前向-近端步，只包含下降条件需要的量"""
    point: Vector
    gradient: Vector
    f_center: float
    f_point: float


@dataclass(frozen=True)
class ProxStepResult:
    """一次复合梯度映射的完整结果"""
    point: Vector
    mapping: Vector
    scalar_bound: float
    objective_at_point: float
    step_inverse: float
    gradient: Vector
    f_center: float
    f_point: float

    @property
    def fallback_step(self) -> float:
        return 1.0 / self.step_inverse


def composite_value(prob: OracleProblem, x: Vector) -> float:
    """F(x) = f(x) + Ψ(x)，不可行点返回 +inf"""
    prob.count_objective()
    psi = prob.psi_value(x)
    if not np.isfinite(psi):
        return np.inf
    return prob.f_value(x) + psi


def forward_step(prob: OracleProblem, x: Vector, L: float,
                 f_center: Optional[float] = None) -> ForwardStep:
    """T_L(x) = prox(x - ∇f(x)/L, 1/L)，一次梯度调用和一次 prox 调用"""
    gradient = prob.f_gradient(x)
    if f_center is None:
        f_center = prob.f_value(x)
    point = prob.prox(x - gradient / L, 1.0 / L)
    return ForwardStep(point=point, gradient=gradient, f_center=f_center,
                       f_point=prob.f_value(point))


def complete_step(prob: OracleProblem, x: Vector, L: float, forward: ForwardStep) -> ProxStepResult:
    """由已接受的前向步构造复合梯度映射和标量下界"""
    prob.count_objective()
    objective = forward.f_point + prob.psi_value(forward.point)
    step_inverse = L + prob.mu_psi
    mapping = step_inverse * (x - forward.point)
    scalar_bound = objective + mapping @ mapping / (2.0 * step_inverse) - mapping @ x
    return ProxStepResult(
        point=forward.point,
        mapping=mapping,
        scalar_bound=float(scalar_bound),
        objective_at_point=float(objective),
        step_inverse=step_inverse,
        gradient=forward.gradient,
        f_center=forward.f_center,
        f_point=forward.f_point,
    )


def prox_grad_step(prob: OracleProblem, x: Vector, L: float) -> ProxStepResult:
    return complete_step(prob, x, L, forward_step(prob, x, L))


def descent_condition(prob: OracleProblem, x: Vector, result, L: float) -> bool:
    """局部上界条件 f(T) <= f(x) + <∇f(x), T-x> + L/2 ||T-x||^2

    result 可以是 ForwardStep 或 ProxStepResult。
    """
    d = result.point - x
    upper = result.f_center + result.gradient @ d + 0.5 * L * (d @ d)
    return bool(result.f_point <= upper + SLACK_FACTOR * MACHINE_EPS * abs(result.f_center))


def lower_bound_value(result: ProxStepResult, x_center: Vector, y: Vector, mu: float) -> float:
    """F(y) 的下界 h + <g, y> + mu/2 ||y - x_center||^2"""
    diff = y - x_center
    return float(result.scalar_bound + result.mapping @ y + 0.5 * mu * (diff @ diff))
