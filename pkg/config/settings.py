"""应用配置"""

import copy
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict

from core.errors import ConfigError
from utils.constants import (EPSILON, LOG_DIR, LOG_FILENAME, MAX_ITERATIONS, NEWTON_ITERATIONS,
                             RATIO_DOWN, RATIO_UP, REFERENCE_BUDGET, RESTART_DECREASE,
                             RESTART_ESCALATION, SETTINGS_FILE, STORAGE_DIR)

logger = logging.getLogger(__name__)

# 参与实验配置的分区，键名与命令行参数一致（- 换成 _）
RUN_SECTIONS = ("problem", "solver", "restart", "bench")


def get_settings_path() -> Path:
    """获取设置文件路径"""
    if hasattr(sys, '_MEIPASS'):  # PyInstaller打包后的环境
        base_dir = Path(sys.executable).parent
    else:
        base_dir = Path.cwd()
    return base_dir / STORAGE_DIR / SETTINGS_FILE


def load_key_values(filepath: Path) -> Dict[str, str]:
    """读取 key = value 格式的实验配置文件

    # 开头的行和空行忽略，行尾 # 之后的内容视为注释。
    """
    filepath = Path(filepath)
    if not filepath.exists():
        raise ConfigError(f"配置文件不存在: {filepath}")
    values: Dict[str, str] = {}
    with open(filepath, 'r', encoding='utf-8') as f:
        for number, raw in enumerate(f, start=1):
            line = raw.split('#', 1)[0].strip()
            if not line:
                continue
            if '=' not in line:
                raise ConfigError(f"{filepath}:{number} 缺少 '=': {raw.strip()}")
            key, value = line.split('=', 1)
            key = key.strip().replace('-', '_')
            if not key:
                raise ConfigError(f"{filepath}:{number} 键名为空")
            values[key] = value.strip()
    return values


class Settings:
    """应用设置"""

    def __init__(self):
        self._settings = self._load_default_settings()
        self.load()

    def _load_default_settings(self) -> Dict[str, Any]:
        """加载默认设置"""
        return {
            "problem": {
                "problem": "lasso",
                "rows": None,
                "cols": None,
                "seed": 0,
                "mu_f": None,
                "mu_psi": None,
            },
            "solver": {
                "method": "GMM",
                "m": 1,
                "replacement": "crs",
                "L0": None,
                "ru": RATIO_UP,
                "rd": RATIO_DOWN,
                "eps": EPSILON,
                "max_iters": MAX_ITERATIONS,
                "inner_iters": None,
                "newton_iters": NEWTON_ITERATIONS,
            },
            "restart": {
                "restart": "soft",
                "D": RESTART_DECREASE,
                "s": RESTART_ESCALATION,
            },
            "bench": {
                "ref_budget": REFERENCE_BUDGET,
                "out": "results",
                "reference_cache": True,
            },
            "logging": {
                "log_dir": LOG_DIR,
                "log_filename": LOG_FILENAME,
                "enabled": True,
                "level": "INFO",
            },
            "version": "1.0.0"
        }

    def load(self) -> bool:
        """从文件加载设置"""
        try:
            settings_file = get_settings_path()
            if settings_file.exists():
                with open(settings_file, 'r', encoding='utf-8') as f:
                    loaded_settings = json.load(f)

                # 合并设置，保留默认值
                self._merge_settings(self._settings, loaded_settings)
                logger.info(f"已加载设置文件: {settings_file}")
                return True
            else:
                logger.debug("未找到设置文件，使用默认设置")
                return False
        except Exception as e:
            logger.warning(f"加载设置失败: {e}")
            return False

    def save(self) -> bool:
        """保存设置到文件"""
        try:
            settings_file = get_settings_path()
            settings_file.parent.mkdir(parents=True, exist_ok=True)
            with open(settings_file, 'w', encoding='utf-8') as f:
                json.dump(self._settings, f, ensure_ascii=False, indent=2)
            logger.info(f"已保存设置到: {settings_file}")
            return True
        except Exception as e:
            logger.error(f"保存设置失败: {e}")
            return False

    def reset(self) -> None:
        self._settings = self._load_default_settings()

    def _merge_settings(self, target: Dict[str, Any], source: Dict[str, Any]) -> None:
        """递归合并设置"""
        for key, value in source.items():
            if key in target and isinstance(target[key], dict) and isinstance(value, dict):
                self._merge_settings(target[key], value)
            else:
                target[key] = value

    def get(self, key: str, default=None) -> Any:
        """获取设置值"""
        keys = key.split('.')
        value = self._settings

        for k in keys:
            if isinstance(value, dict) and k in value:
                value = value[k]
            else:
                return default

        return value

    def set(self, key: str, value: Any) -> None:
        """设置值"""
        keys = key.split('.')
        settings = self._settings

        # 导航到目标字典
        for k in keys[:-1]:
            if k not in settings:
                settings[k] = {}
            settings = settings[k]

        settings[keys[-1]] = value

    def run_defaults(self) -> Dict[str, Any]:
        """把实验相关分区压平成一个字典，作为 RunConfig 的底层默认值"""
        flat: Dict[str, Any] = {}
        for section in RUN_SECTIONS:
            flat.update(copy.deepcopy(self._settings.get(section, {})))
        return flat

    def update_run_defaults(self, values: Dict[str, Any]) -> None:
        """把实验参数写回各自的分区，未知键报错"""
        for raw_key, value in values.items():
            key = raw_key.replace('-', '_')
            for section in RUN_SECTIONS:
                if key in self._settings.get(section, {}):
                    self.set(f"{section}.{key}", value)
                    break
            else:
                raise ConfigError(f"设置中没有实验参数 '{raw_key}'")


# 全局设置实例
settings = Settings()
