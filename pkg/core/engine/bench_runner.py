"""基准实验执行引擎

负责：解析实验配置、计算参考最优值、分派求解器、写轨迹文件、汇总结果。
每个实验从头到尾在一个线程里执行，批量实验用线程池并行。
"""

import itertools
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from core.errors import ConfigError
from core.model.bundle import ReplacementStrategy
from core.problem.oracle import OracleProblem, Vector, composite_value
from core.problem.problems import ProblemKind, ProblemSpec, make_problem
from core.solvers import agmm, gmm
from core.solvers.restart import RestartConfig, RestartMode, run_adaptive, run_known_mu
from core.solvers.trace import ConvergenceTrace, SolverConfig, StopRule
from storage.reference_storage import load_reference, reference_key, save_reference
from storage.trace_storage import format_value, save_summary, save_trace, trace_file_name
from utils.constants import (EPSILON, MAX_ITERATIONS, NEWTON_ITERATIONS, RATIO_DOWN, RATIO_UP,
                             REFERENCE_BUDGET, REFERENCE_BUNDLE, RESTART_DECREASE,
                             RESTART_ESCALATION, SUMMARY_FILE, THREADS_ENV, TRACE_FILE_SUFFIX)

logger = logging.getLogger(__name__)


class Method(str, Enum):
    GM = "GM"
    GMM = "GMM"
    ACGM = "ACGM"
    AGMM = "AGMM"
    AGMM_SC = "AGMM_SC"
    R_AGMM_KNOWN = "R_AGMM_KNOWN"
    R_AGMM_ADAPTIVE = "R_AGMM_ADAPTIVE"


# bundle 大小固定为 1 的方法
SINGLE_ENTRY_METHODS = {Method.GM, Method.ACGM}
RESTART_METHODS = {Method.R_AGMM_KNOWN, Method.R_AGMM_ADAPTIVE}


def _optional(convert: Callable[[Any], Any]) -> Callable[[Any], Any]:
    def parse(value: Any) -> Any:
        if value is None or (isinstance(value, str) and value.strip().lower() in ("", "none", "null")):
            return None
        return convert(value)
    return parse


def _boolean(value: Any) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ValueError(value)


def _integer(value: Any) -> int:
    number = float(value)
    if not number.is_integer():
        raise ValueError(value)
    return int(number)


# 配置键 -> (RunConfig 字段, 转换函数)
_PROBLEM_KEYS: Dict[str, Callable[[Any], Any]] = {
    "problem": lambda v: ProblemKind(str(v).strip().upper()),
    "rows": _optional(_integer),
    "cols": _optional(_integer),
    "seed": _integer,
    "lambda1": _optional(float),
    "lambda2": _optional(float),
}
_RUN_KEYS: Dict[str, Tuple[str, Callable[[Any], Any]]] = {
    "method": ("method", lambda v: Method(str(v).strip().upper())),
    "m": ("m", _integer),
    "replacement": ("replacement", lambda v: ReplacementStrategy(str(v).strip().lower())),
    "restart": ("restart", lambda v: RestartMode(str(v).strip().lower())),
    "D": ("D", float),
    "s": ("s", float),
    "mu_f": ("mu_f", _optional(float)),
    "mu_psi": ("mu_psi", _optional(float)),
    "L0": ("L0", _optional(float)),
    "ru": ("r_u", float),
    "rd": ("r_d", float),
    "eps": ("epsilon", float),
    "max_iters": ("max_iterations", _integer),
    "inner_iters": ("inner_iterations", _optional(_integer)),
    "newton_iters": ("newton_iterations", _integer),
    "ref_budget": ("reference_budget", _integer),
    "out": ("output", _optional(Path)),
    "reference_cache": ("reference_cache", _boolean),
    "strict": ("strict", _boolean),
}


@dataclass
class RunConfig:
    """一次实验的完整配置"""
    problem: ProblemSpec
    method: Method = Method.GMM
    m: int = 1
    replacement: ReplacementStrategy = ReplacementStrategy.CYCLIC
    restart: RestartMode = RestartMode.SOFT
    D: float = RESTART_DECREASE
    s: float = RESTART_ESCALATION
    mu_f: Optional[float] = None
    mu_psi: Optional[float] = None
    L0: Optional[float] = None
    r_u: float = RATIO_UP
    r_d: float = RATIO_DOWN
    epsilon: float = EPSILON
    max_iterations: int = MAX_ITERATIONS
    inner_iterations: Optional[int] = None
    newton_iterations: int = NEWTON_ITERATIONS
    reference_budget: int = REFERENCE_BUDGET
    output: Optional[Path] = None
    reference_cache: bool = True
    strict: bool = False

    def __post_init__(self):
        self.method = Method(self.method)
        self.replacement = ReplacementStrategy(self.replacement)
        self.restart = RestartMode(self.restart)
        if self.m < 1:
            raise ConfigError(f"bundle 大小 m 必须 >= 1: {self.m}")
        if self.method in SINGLE_ENTRY_METHODS and self.m != 1:
            base = "GMM" if self.method == Method.GM else "AGMM"
            raise ConfigError(f"{self.method.value} 固定 m = 1，要使用更大的 bundle 请改用 {base}")
        if not 0.0 < self.epsilon < 1.0:
            raise ConfigError(f"eps 必须在 (0, 1) 内: {self.epsilon}")
        if self.max_iterations < 1:
            raise ConfigError(f"max-iters 必须为正: {self.max_iterations}")
        if self.reference_budget < 1:
            raise ConfigError(f"ref-budget 必须为正: {self.reference_budget}")
        if self.inner_iterations is not None and self.inner_iterations < 0:
            raise ConfigError(f"inner-iters 不能为负: {self.inner_iterations}")
        for name in ("mu_f", "mu_psi"):
            value = getattr(self, name)
            if value is not None and value < 0:
                raise ConfigError(f"{name} 不能为负: {value}")
        # 其余参数的范围由 SolverConfig / RestartConfig 校验
        self.solver_config()
        self.restart_config()

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, Any]) -> "RunConfig":
        """由扁平的键值映射构造，值可以是字符串；未知键报错"""
        problem_args: Dict[str, Any] = {}
        run_args: Dict[str, Any] = {}
        for raw_key, value in mapping.items():
            key = raw_key.replace('-', '_')
            try:
                if key in _PROBLEM_KEYS:
                    converted = _PROBLEM_KEYS[key](value)
                    problem_args["kind" if key == "problem" else key] = converted
                elif key in _RUN_KEYS:
                    name, convert = _RUN_KEYS[key]
                    run_args[name] = convert(value)
                else:
                    known = ", ".join(sorted(list(_PROBLEM_KEYS) + list(_RUN_KEYS)))
                    raise ConfigError(f"未知配置项 '{raw_key}'，可用的键: {known}")
            except (TypeError, ValueError) as e:
                raise ConfigError(f"配置项 {raw_key} 的值无效: {value!r} ({e})") from e
        if "kind" not in problem_args:
            raise ConfigError("缺少配置项 problem（LASSO / NNLS / L1LR / RR / EN）")
        return cls(problem=ProblemSpec(**problem_args), **run_args)

    def solver_config(self, bundle_size: Optional[int] = None) -> SolverConfig:
        return SolverConfig(
            bundle_size=self.m if bundle_size is None else bundle_size,
            replacement=self.replacement,
            L0=self.L0,
            r_u=self.r_u,
            r_d=self.r_d,
            max_iterations=self.max_iterations,
            inner_iterations=self.inner_iterations,
            newton_iterations=self.newton_iterations,
            strict=self.strict,
        )

    def restart_config(self, growth: Optional[float] = None, project_start: bool = False) -> RestartConfig:
        return RestartConfig(
            decrease_factor=self.D,
            escalation=self.s,
            mode=self.restart,
            growth=growth,
            max_iterations=self.max_iterations,
            project_start=project_start,
        )

    def metadata(self) -> Dict[str, Any]:
        data = {
            "problem": self.problem.kind.value,
            "rows": self.problem.rows,
            "cols": self.problem.cols,
            "seed": self.problem.seed,
            "method": self.method.value,
            "m": self.m,
            "replacement": self.replacement.value,
            "epsilon": self.epsilon,
            "max_iterations": self.max_iterations,
        }
        if self.method in RESTART_METHODS:
            data.update({"restart": self.restart.value, "D": self.D, "s": self.s})
        return data


def expand_configs(mapping: Mapping[str, Any]) -> List[RunConfig]:
    """method、m、seed 可以是逗号分隔的列表，展开成笛卡儿积

    GM / ACGM 只生成 m = 1 的一次实验。
    """
    def split(key: str) -> List[Any]:
        value = mapping.get(key)
        if isinstance(value, str) and ',' in value:
            return [item.strip() for item in value.split(',') if item.strip()]
        if isinstance(value, (list, tuple)):
            return list(value)
        return [value]

    configs: List[RunConfig] = []
    seen = set()
    for method, m, seed in itertools.product(split("method"), split("m"), split("seed")):
        entry = dict(mapping)
        entry.update({"method": method, "m": m, "seed": seed})
        if str(method).strip().upper() in {item.value for item in SINGLE_ENTRY_METHODS}:
            entry["m"] = 1
        config = RunConfig.from_mapping(entry)
        key = (config.method, config.m, config.problem.seed)
        if key in seen:
            continue
        seen.add(key)
        configs.append(config)
    return configs


def relative_error_stop(initial: float, optimum: float, epsilon: float) -> StopRule:
    """(F - F*) / (F(x0) - F*) < epsilon 时停止"""
    gap = initial - optimum
    if not gap > 0:
        return lambda value: True
    return lambda value: (value - optimum) / gap < epsilon


def reference_optimum(prob: OracleProblem, x0: Vector, budget: int = REFERENCE_BUDGET,
                      strict: bool = False) -> Tuple[float, Vector]:
    """长时间运行带自适应重启的 AGMM (m = 16, MRS)，返回遇到的最好 F 和对应的点"""
    if budget < 1:
        raise ConfigError(f"参考预算必须 >= 1: {budget}")
    x0 = np.array(x0, dtype=float)
    start_value = composite_value(prob, x0)
    config = SolverConfig(bundle_size=REFERENCE_BUNDLE, replacement=ReplacementStrategy.MAX_NORM,
                          max_iterations=budget, strict=strict)
    scheme = agmm.AgmmScheme(prob.with_convexity(0.0, 0.0), x0, config, {"purpose": "reference"})
    best = {"value": start_value, "point": x0.copy()}

    def track(value: float) -> bool:
        if value < best["value"]:
            best["value"] = value
            best["point"] = scheme.iterate.copy()
        return False

    restart_config = RestartConfig(mode=RestartMode.SOFT, max_iterations=budget,
                                   project_start=not math.isfinite(start_value))
    run_adaptive(scheme.prob, scheme, restart_config, stop=track)
    logger.info(f"参考最优值 F*={best['value']:.17g}（{budget} 次迭代）")
    return best["value"], best["point"]


def _solve_reference(config: RunConfig, prob: OracleProblem, x0: Vector,
                     reference_path: Optional[Path]) -> float:
    key = reference_key(config.problem.to_dict(), config.reference_budget)
    if config.reference_cache:
        cached = load_reference(key, reference_path)
        if cached is not None:
            return cached
    value, _ = reference_optimum(prob, x0, config.reference_budget, config.strict)
    if config.reference_cache:
        save_reference(key, value, reference_path)
    return value


def _resolve_convexity(config: RunConfig, prob: OracleProblem) -> OracleProblem:
    mu_f = prob.mu_f if config.mu_f is None else config.mu_f
    mu_psi = prob.mu_psi if config.mu_psi is None else config.mu_psi
    return prob.with_convexity(mu_f, mu_psi)


def _dispatch(config: RunConfig, prob: OracleProblem, x0: Vector, stop: StopRule,
              reference: float) -> ConvergenceTrace:
    """按方法分派求解器"""
    method = config.method
    metadata = config.metadata()
    strong = _resolve_convexity(config, prob)

    if method in (Method.GM, Method.GMM):
        scheme = gmm.GmmScheme(strong, x0, config.solver_config(), metadata)
        converged = scheme.run(config.max_iterations, stop)
        scheme.trace.metadata["converged"] = converged
        return scheme.trace

    if method == Method.AGMM_SC and not strong.mu > 0:
        raise ConfigError(f"AGMM_SC 需要 μ > 0，但 {strong.name} 实例的 μ = 0；"
                          f"请用 --mu-f / --mu-psi 指定强凸参数，或改用 AGMM")
    if method == Method.R_AGMM_KNOWN and not strong.mu > 0:
        raise ConfigError(f"R_AGMM_KNOWN 需要已知的 μ > 0，请用 --mu-f / --mu-psi 指定，或改用 R_AGMM_ADAPTIVE")

    if method in (Method.ACGM, Method.AGMM_SC):
        scheme = agmm.AgmmScheme(strong, x0, config.solver_config(), metadata)
        converged = scheme.run(config.max_iterations, stop)
        scheme.trace.metadata["converged"] = converged
        return scheme.trace

    plain = prob.with_convexity(0.0, 0.0)
    scheme = agmm.AgmmScheme(plain, x0, config.solver_config(), metadata)
    if method == Method.AGMM:
        converged = scheme.run(config.max_iterations, stop)
        scheme.trace.metadata["converged"] = converged
        return scheme.trace

    project_start = not math.isfinite(scheme.objective)
    if method == Method.R_AGMM_KNOWN:
        return run_known_mu(plain, scheme, strong.mu, config.restart_config(strong.mu, project_start), stop,
                            reference)
    growth = strong.mu if strong.mu > 0 else None
    return run_adaptive(plain, scheme, config.restart_config(growth, project_start), stop,
                        reference if growth is not None else None)


def _trace_path(config: RunConfig, metadata: Dict[str, Any]) -> Optional[Path]:
    if config.output is None:
        return None
    output = Path(config.output)
    if output.suffix == TRACE_FILE_SUFFIX:
        return output
    return output / trace_file_name(metadata)


def run_experiment(config: RunConfig, reference: Optional[float] = None,
                   reference_path: Optional[Path] = None) -> ConvergenceTrace:
    """生成实例、取得参考最优值、运行求解器并写出轨迹"""
    started = time.perf_counter()
    prob, x0 = make_problem(config.problem)
    if reference is None:
        reference = _solve_reference(config, prob, x0, reference_path)
    initial = composite_value(prob, x0)
    stop = relative_error_stop(initial, reference, config.epsilon)

    logger.info(f"开始实验: {config.method.value}(m={config.m}) on {prob.name} "
                f"{config.problem.rows}x{config.problem.cols}, seed={config.problem.seed}")
    trace = _dispatch(config, prob, x0, stop, reference)
    trace.attach_reference(reference)
    trace.metadata.update(config.metadata())
    trace.metadata["wall_time"] = time.perf_counter() - started

    converged = bool(trace.metadata.get("converged"))
    logger.info(f"实验结束: {config.method.value}(m={config.m}) {trace.iterations} 次迭代, "
                f"相对误差 {trace.last.relative_error:.3g}, {'已收敛' if converged else '预算用尽'}")

    path = _trace_path(config, trace.metadata)
    if path is not None:
        save_trace(trace, path)
    return trace


def worker_count(jobs: int) -> int:
    """并行线程数，受环境变量 MEMGRAD_THREADS 限制"""
    limit = os.cpu_count() or 1
    raw = os.environ.get(THREADS_ENV)
    if raw:
        try:
            limit = max(1, int(raw))
        except ValueError:
            logger.warning(f"忽略无效的 {THREADS_ENV}={raw!r}")
    return max(1, min(jobs, limit))


def run_batch(configs: Sequence[RunConfig], reference_path: Optional[Path] = None) -> List[ConvergenceTrace]:
    """并行运行一批实验，结果顺序与输入一致

    同一问题实例的参考最优值只计算一次。
    """
    if not configs:
        return []
    workers = worker_count(len(configs))

    unique: Dict[str, RunConfig] = {}
    for config in configs:
        key = reference_key(config.problem.to_dict(), config.reference_budget)
        unique.setdefault(key, config)

    def solve_reference(config: RunConfig) -> float:
        prob, x0 = make_problem(config.problem)
        return _solve_reference(config, prob, x0, reference_path)

    with ThreadPoolExecutor(max_workers=min(workers, len(unique))) as pool:
        references = dict(zip(unique, pool.map(solve_reference, unique.values())))

    def execute(config: RunConfig) -> ConvergenceTrace:
        key = reference_key(config.problem.to_dict(), config.reference_budget)
        return run_experiment(config, references[key], reference_path)

    logger.info(f"批量运行 {len(configs)} 个实验，{workers} 个线程")
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(execute, configs))


SUMMARY_COLUMNS = ("problem", "method", "m", "runs", "converged", "iterations",
                   "gradient_calls", "prox_calls", "objective_calls")


@dataclass
class SummaryTable:
    columns: Tuple[str, ...] = SUMMARY_COLUMNS
    rows: List[Dict[str, Any]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def text(self) -> str:
        """对齐的文本表，未全部收敛的组在迭代数后加 *"""
        cells = [list(self.columns)]
        for row in self.rows:
            line = []
            for name in self.columns:
                value = row[name]
                if name == "iterations":
                    text = f"{value:g}" + ("" if row["converged"] == row["runs"] else "*")
                else:
                    text = format_value(value) if not isinstance(value, float) else f"{value:g}"
                line.append(text)
            cells.append(line)
        widths = [max(len(line[i]) for line in cells) for i in range(len(self.columns))]
        return "\n".join("  ".join(text.rjust(width) for text, width in zip(line, widths)).rstrip()
                         for line in cells)

    def save(self, filepath: Path) -> bool:
        return save_summary(self.columns, self.rows, filepath)


def _stopping_row(trace: ConvergenceTrace, epsilon: float):
    reached = trace.iterations_to(epsilon)
    if reached is None:
        return trace.last, False
    for row in trace.rows:
        if row.iteration == reached:
            return row, True
    return trace.last, False


def summarize(traces: Sequence[ConvergenceTrace]) -> SummaryTable:
    """按 (问题, 方法, m) 分组，报告达到 ε 所需迭代数和预言机调用总数

    未收敛的实验按迭代预算计。
    """
    groups: Dict[Tuple[str, str, int], List[ConvergenceTrace]] = {}
    for trace in traces:
        meta = trace.metadata
        key = (str(meta.get("problem", "")), str(meta.get("method", "")), int(meta.get("m", 1)))
        groups.setdefault(key, []).append(trace)

    table = SummaryTable()
    for (problem, method, m), members in groups.items():
        iterations = []
        converged = 0
        totals = {"gradient_calls": 0, "prox_calls": 0, "objective_calls": 0}
        for trace in members:
            epsilon = trace.metadata.get("epsilon", EPSILON)
            row, reached = _stopping_row(trace, epsilon)
            if reached:
                converged += 1
                iterations.append(row.iteration)
            else:
                iterations.append(int(trace.metadata.get("max_iterations", trace.iterations)))
            for name in totals:
                totals[name] += getattr(row, name)
        table.rows.append({
            "problem": problem,
            "method": method,
            "m": m,
            "runs": len(members),
            "converged": converged,
            "iterations": float(np.mean(iterations)),
            **totals,
        })
    return table


def write_summary(table: SummaryTable, output: Optional[Path]) -> Optional[Path]:
    """把汇总表写到输出目录下的 summary.csv"""
    if output is None:
        return None
    output = Path(output)
    directory = output.parent if output.suffix == TRACE_FILE_SUFFIX else output
    path = directory / SUMMARY_FILE
    return path if table.save(path) else None
