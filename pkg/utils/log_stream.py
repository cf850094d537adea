"""日志输出：控制台加带时间戳的日志文件"""

import logging
import os
import sys
from pathlib import Path
from typing import Optional

from utils.constants import LOG_DIR, LOG_FILENAME, LOG_TIME_FORMAT

_FILE_HANDLER_NAME = "memgrad-file"
_CONSOLE_HANDLER_NAME = "memgrad-console"


class TimestampFormatter(logging.Formatter):
    """每一行都加上 [时间戳] 前缀，空行跳过"""

    def __init__(self):
        super().__init__(datefmt=LOG_TIME_FORMAT)

    def format(self, record: logging.LogRecord) -> str:
        text = super().format(record)
        timestamp = self.formatTime(record, self.datefmt)
        return "\n".join(f"[{timestamp}] {line}" for line in text.split("\n") if line)


def get_log_file_path(log_dir: str = LOG_DIR, filename: str = LOG_FILENAME) -> Path:
    """获取完整的日志文件路径"""
    log_path = Path(log_dir)
    log_path.mkdir(parents=True, exist_ok=True)
    return log_path / filename


def _drop_handler(root: logging.Logger, name: str) -> None:
    for handler in list(root.handlers):
        if handler.get_name() == name:
            root.removeHandler(handler)
            handler.close()


def setup_logging(level: str = "INFO", log_dir: str = LOG_DIR, filename: str = LOG_FILENAME,
                  enabled: bool = True) -> Optional[Path]:
    """配置根日志器，返回日志文件路径（未启用文件日志时返回 None）

    重复调用会替换之前安装的处理器。
    """
    root = logging.getLogger()
    root.setLevel(getattr(logging, str(level).upper(), logging.INFO))

    _drop_handler(root, _CONSOLE_HANDLER_NAME)
    console = logging.StreamHandler(sys.stderr)
    console.set_name(_CONSOLE_HANDLER_NAME)
    console.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root.addHandler(console)

    _drop_handler(root, _FILE_HANDLER_NAME)
    if not enabled:
        return None
    try:
        log_file_path = get_log_file_path(log_dir, filename)
        file_handler = logging.FileHandler(log_file_path, mode="a", encoding="utf-8")
    except OSError as e:
        # 日志文件打不开时只保留控制台输出
        root.warning(f"[日志写入失败] {e}")
        return None
    file_handler.set_name(_FILE_HANDLER_NAME)
    file_handler.setFormatter(TimestampFormatter())
    root.addHandler(file_handler)
    return log_file_path


def shutdown_logging() -> None:
    root = logging.getLogger()
    for name in (_FILE_HANDLER_NAME, _CONSOLE_HANDLER_NAME):
        _drop_handler(root, name)


def clear_log(log_dir: str = LOG_DIR, filename: str = LOG_FILENAME) -> bool:
    """清空日志文件"""
    try:
        log_file_path = get_log_file_path(log_dir, filename)
        if os.path.exists(log_file_path):
            with open(log_file_path, 'w', encoding='utf-8') as f:
                f.write("")
            return True
    except Exception as e:
        logging.getLogger(__name__).error(f"[清空日志失败] {e}")
    return False
