"""命令行入口

退出码：0 全部收敛，2 有实验用尽迭代预算，1 配置错误。
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from config.settings import load_key_values, settings
from core.engine.bench_runner import expand_configs, run_batch, summarize, write_summary
from core.errors import ConfigError, MemgradError
from storage.reference_storage import clear_references
from storage.trace_storage import load_trace
from utils.constants import APP_NAME, SUMMARY_FILE, TRACE_FILE_SUFFIX
from utils.log_stream import clear_log, setup_logging, shutdown_logging

logger = logging.getLogger(__name__)

EXIT_CONVERGED = 0
EXIT_CONFIG_ERROR = 1
EXIT_BUDGET_EXHAUSTED = 2

_CLI_KEYS = ("problem", "rows", "cols", "seed", "method", "m", "replacement", "restart", "D", "s",
             "mu_f", "mu_psi", "L0", "ru", "rd", "eps", "max_iters", "inner_iters", "newton_iters",
             "ref_budget", "out")


class _ArgumentParser(argparse.ArgumentParser):
    """参数错误按配置错误处理，而不是直接退出"""

    def error(self, message: str):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(prog="memgrad", description=f"{APP_NAME}：运行梯度记忆法基准实验")
    problem = parser.add_argument_group("问题实例")
    problem.add_argument("--problem", type=str.upper, choices=["LASSO", "NNLS", "L1LR", "RR", "EN"])
    problem.add_argument("--rows", type=int)
    problem.add_argument("--cols", type=int)
    problem.add_argument("--seed", type=str, help="随机种子，可用逗号分隔多个")

    solver = parser.add_argument_group("求解器")
    solver.add_argument("--method", type=str,
                        help="GM, GMM, ACGM, AGMM, AGMM_SC, R_AGMM_KNOWN, R_AGMM_ADAPTIVE，可用逗号分隔多个")
    solver.add_argument("--m", type=str, help="bundle 大小，可用逗号分隔多个")
    solver.add_argument("--replacement", choices=["crs", "mrs"])
    solver.add_argument("--restart", choices=["soft", "hard"])
    solver.add_argument("--D", type=float, help="重启下降因子")
    solver.add_argument("--s", type=float, help="自适应重启的阈值放大因子")
    solver.add_argument("--mu-f", type=float)
    solver.add_argument("--mu-psi", type=float)
    solver.add_argument("--L0", type=float)
    solver.add_argument("--ru", type=float)
    solver.add_argument("--rd", type=float)
    solver.add_argument("--eps", type=float)
    solver.add_argument("--max-iters", type=int)
    solver.add_argument("--inner-iters", type=int)
    solver.add_argument("--newton-iters", type=int)
    solver.add_argument("--ref-budget", type=int)

    output = parser.add_argument_group("输入输出")
    output.add_argument("--config", type=Path, help="key = value 格式的配置文件")
    output.add_argument("--out", type=str, help="轨迹输出目录或 .csv 文件")
    output.add_argument("--log-level", default=None, help="DEBUG / INFO / WARNING")
    output.add_argument("--no-log-file", action="store_true", help="不写日志文件")
    output.add_argument("--strict", action="store_true", help="不变量被破坏时抛出异常")
    output.add_argument("--no-reference-cache", action="store_true", help="不读写参考最优值缓存")

    maintenance = parser.add_argument_group("维护", "给出任一维护选项时只做维护，不运行实验")
    maintenance.add_argument("--save-settings", action="store_true",
                             help="把 --config 和命令行给出的实验参数写入设置文件")
    maintenance.add_argument("--reset-settings", action="store_true", help="设置文件恢复默认值")
    maintenance.add_argument("--clear-cache", action="store_true", help="清空参考最优值缓存")
    maintenance.add_argument("--clear-log", action="store_true", help="清空日志文件")
    maintenance.add_argument("--summarize", type=Path, metavar="DIR", help="汇总目录下已保存的轨迹")
    return parser


def explicit_values(args: argparse.Namespace) -> Dict[str, Any]:
    """--config 文件和命令行显式给出的实验参数，命令行优先"""
    values: Dict[str, Any] = {}
    if args.config is not None:
        values.update(load_key_values(args.config))
    for key in _CLI_KEYS:
        value = getattr(args, key)
        if value is not None:
            values[key] = value
    if args.no_reference_cache:
        values["reference_cache"] = False
    return values


def collect_mapping(args: argparse.Namespace) -> Dict[str, Any]:
    """默认值 < 设置文件 < --config 文件 < 命令行"""
    mapping: Dict[str, Any] = settings.run_defaults()
    mapping.update(explicit_values(args))
    if args.strict:
        mapping["strict"] = True
    return mapping


def wants_maintenance(args: argparse.Namespace) -> bool:
    return bool(args.save_settings or args.reset_settings or args.clear_cache or args.clear_log
                or args.summarize is not None)


def summarize_directory(directory: Path) -> int:
    """重新汇总目录下的轨迹文件，打印表格并写回 summary.csv"""
    directory = Path(directory)
    files = sorted(path for path in directory.glob(f"*{TRACE_FILE_SUFFIX}") if path.name != SUMMARY_FILE)
    traces = [trace for trace in (load_trace(path) for path in files) if trace is not None]
    if not traces:
        raise ConfigError(f"目录中没有可读取的轨迹: {directory}")
    table = summarize(traces)
    print(table.text())
    write_summary(table, directory)
    if all(trace.metadata.get("converged") for trace in traces):
        return EXIT_CONVERGED
    return EXIT_BUDGET_EXHAUSTED


def run_maintenance(args: argparse.Namespace) -> int:
    """按 重置 > 保存 > 清缓存 > 清日志 > 汇总 的顺序执行维护选项"""
    ok = True
    if args.reset_settings:
        settings.reset()
        ok = settings.save() and ok
    if args.save_settings:
        settings.update_run_defaults(explicit_values(args))
        ok = settings.save() and ok
    if args.clear_cache:
        ok = clear_references() and ok
    if args.clear_log:
        if clear_log(settings.get("logging.log_dir"), settings.get("logging.log_filename")):
            logger.info("日志文件已清空")
    if not ok:
        return EXIT_CONFIG_ERROR
    if args.summarize is not None:
        return summarize_directory(args.summarize)
    return EXIT_CONVERGED


def setup_application(args: argparse.Namespace) -> bool:
    """设置应用程序"""
    level = args.log_level or settings.get("logging.level", "INFO")
    enabled = settings.get("logging.enabled", True) and not args.no_log_file
    setup_logging(level, settings.get("logging.log_dir"), settings.get("logging.log_filename"), enabled)
    logger.info("=" * 50)
    logger.info(f"启动 {APP_NAME}")
    logger.info("=" * 50)
    return True


def cleanup_application() -> None:
    """清理应用程序"""
    logger.info("运行结束")
    logger.info("=" * 50)
    shutdown_logging()


def main(argv: Optional[List[str]] = None) -> int:
    """主函数"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except ConfigError as e:
        parser.print_usage(sys.stderr)
        print(f"参数错误: {e}", file=sys.stderr)
        return EXIT_CONFIG_ERROR

    if not setup_application(args):
        return EXIT_CONFIG_ERROR
    try:
        if wants_maintenance(args):
            try:
                return run_maintenance(args)
            except ConfigError as e:
                logger.error(f"配置错误: {e}")
                return EXIT_CONFIG_ERROR

        try:
            configs = expand_configs(collect_mapping(args))
            traces = run_batch(configs)
        except ConfigError as e:
            logger.error(f"配置错误: {e}")
            return EXIT_CONFIG_ERROR
        except MemgradError as e:
            logger.error(f"运行失败: {e}")
            return EXIT_CONFIG_ERROR

        table = summarize(traces)
        print(table.text())
        write_summary(table, configs[0].output if configs else None)

        if all(trace.metadata.get("converged") for trace in traces):
            return EXIT_CONVERGED
        logger.warning("部分实验在迭代预算内未达到目标精度")
        return EXIT_BUDGET_EXHAUSTED
    finally:
        cleanup_application()


if __name__ == "__main__":
    sys.exit(main())
