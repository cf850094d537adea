"""异常定义"""


class MemgradError(Exception):
    """库内所有异常的基类"""


class ConfigError(MemgradError):
    """运行配置无效或相互冲突"""


class LipschitzSearchError(MemgradError):
    """Lipschitz 回溯超过上限，通常意味着 f 不光滑或预言机有误"""


class BundleError(MemgradError):
    pass


class SimplexError(MemgradError):
    """权重不在单纯形内"""


class InvariantViolation(MemgradError):
    """运行时不变量检查失败（严格模式）"""
