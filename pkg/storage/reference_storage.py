"""参考最优值缓存"""

import json
import logging
import sys
import threading
from pathlib import Path
from typing import Any, Dict, Optional

from utils.constants import REFERENCE_FILE, STORAGE_DIR

logger = logging.getLogger(__name__)

# 批量实验在多个线程里共享同一个缓存文件
_cache_lock = threading.Lock()


def get_reference_path() -> Path:
    """获取缓存文件路径"""
    if hasattr(sys, '_MEIPASS'):  # PyInstaller打包后的环境
        base_dir = Path(sys.executable).parent
    else:
        base_dir = Path.cwd()
    return base_dir / STORAGE_DIR / REFERENCE_FILE


def reference_key(spec: Dict[str, Any], budget: int) -> str:
    """问题参数和参考预算共同决定缓存键"""
    return json.dumps({"spec": spec, "budget": budget}, sort_keys=True)


def _read_cache(path: Path) -> Dict[str, float]:
    if not path.exists():
        return {}
    with open(path, 'r', encoding='utf-8') as f:
        return json.load(f)


def load_reference(key: str, path: Optional[Path] = None) -> Optional[float]:
    """读取缓存的参考最优值，没有或读取失败时返回 None"""
    path = Path(path) if path is not None else get_reference_path()
    try:
        with _cache_lock:
            cache = _read_cache(path)
        value = cache.get(key)
        if value is not None:
            logger.info(f"使用缓存的参考最优值: {value:.17g}")
            return float(value)
        return None
    except Exception as e:
        logger.warning(f"读取参考最优值缓存失败: {e}")
        return None


def save_reference(key: str, value: float, path: Optional[Path] = None) -> bool:
    """写入参考最优值，保留已有条目"""
    path = Path(path) if path is not None else get_reference_path()
    try:
        with _cache_lock:
            cache = _read_cache(path)
            cache[key] = float(value)
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, 'w', encoding='utf-8') as f:
                json.dump(cache, f, ensure_ascii=False, indent=2)
        logger.info(f"参考最优值已缓存到: {path}")
        return True
    except Exception as e:
        logger.error(f"保存参考最优值失败: {e}")
        return False


def clear_references(path: Optional[Path] = None) -> bool:
    """清空缓存"""
    path = Path(path) if path is not None else get_reference_path()
    try:
        with _cache_lock:
            if path.exists():
                path.unlink()
        return True
    except Exception as e:
        logger.error(f"清空参考最优值缓存失败: {e}")
        return False
