"""收敛轨迹的 CSV 保存/加载

轨迹文件：一行表头，UTF-8，LF 换行，浮点数保留 17 位有效数字。
元数据写到同名的 .json 文件里。
"""

import csv
import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from core.solvers.trace import TRACE_COLUMNS, ConvergenceTrace, TraceRow
from utils.constants import FLOAT_FORMAT, TRACE_FILE_SUFFIX

logger = logging.getLogger(__name__)

_INT_COLUMNS = {"iteration", "bundle_size", "gradient_calls", "prox_calls", "objective_calls", "restart"}


def format_value(value: Any) -> str:
    """整数原样输出，浮点数用全精度十进制"""
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return FLOAT_FORMAT.format(value)
    return str(value)


def trace_file_name(metadata: Dict[str, Any]) -> str:
    """由元数据生成文件名，例如 lasso_GMM_m16_crs_seed0.csv"""
    parts = [
        str(metadata.get("problem", "problem")),
        str(metadata.get("method", "method")),
        f"m{metadata.get('m', 1)}",
        str(metadata.get("replacement", "crs")),
    ]
    if metadata.get("restart"):
        parts.append(str(metadata["restart"]))
    parts.append(f"seed{metadata.get('seed', 0)}")
    return "_".join(parts) + TRACE_FILE_SUFFIX


def _json_safe(value: Any) -> Any:
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    if isinstance(value, dict):
        return {key: _json_safe(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(item) for item in value]
    return value


def save_trace(trace: ConvergenceTrace, filepath: Path) -> bool:
    """保存轨迹 CSV 和元数据 JSON"""
    filepath = Path(filepath)
    try:
        filepath.parent.mkdir(parents=True, exist_ok=True)
        with open(filepath, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(TRACE_COLUMNS)
            for row in trace.rows:
                writer.writerow([format_value(value) for value in row.values()])
        with open(filepath.with_suffix(".json"), "w", encoding="utf-8") as f:
            json.dump(_json_safe(trace.metadata), f, ensure_ascii=False, indent=2)
        logger.info(f"轨迹已保存到: {filepath}")
        return True
    except Exception as e:
        logger.error(f"保存轨迹失败: {e}")
        return False


def load_trace(filepath: Path) -> Optional[ConvergenceTrace]:
    """从 CSV 加载轨迹，表头不匹配或读取失败时返回 None"""
    filepath = Path(filepath)
    try:
        with open(filepath, "r", encoding="utf-8", newline="") as f:
            reader = csv.DictReader(f)
            if tuple(reader.fieldnames or ()) != TRACE_COLUMNS:
                logger.error(f"轨迹文件表头不匹配: {filepath}")
                return None
            rows = []
            for record in reader:
                values = {name: int(record[name]) if name in _INT_COLUMNS else float(record[name])
                          for name in TRACE_COLUMNS}
                rows.append(TraceRow(**values))
        metadata: Dict[str, Any] = {}
        meta_file = filepath.with_suffix(".json")
        if meta_file.exists():
            with open(meta_file, "r", encoding="utf-8") as f:
                metadata = json.load(f)
        logger.info(f"已从文件加载轨迹: {filepath}")
        return ConvergenceTrace(metadata=metadata, rows=rows)
    except Exception as e:
        logger.error(f"加载轨迹失败: {e}")
        return None


def save_summary(columns: Sequence[str], rows: List[Dict[str, Any]], filepath: Path) -> bool:
    """保存汇总表 CSV"""
    filepath = Path(filepath)
    try:
        filepath.parent.mkdir(parents=True, exist_ok=True)
        with open(filepath, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(columns)
            for row in rows:
                writer.writerow([format_value(row.get(name, "")) for name in columns])
        logger.info(f"汇总表已保存到: {filepath}")
        return True
    except Exception as e:
        logger.error(f"保存汇总表失败: {e}")
        return False
