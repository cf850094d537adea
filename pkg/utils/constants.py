"""常量定义"""

import math

# 应用名称
APP_NAME = "memgrad 梯度记忆法基准"

# 存储相关
STORAGE_DIR = ".memgrad"
SETTINGS_FILE = "settings.json"
REFERENCE_FILE = "references.json"

# 日志
LOG_DIR = "output_logs"
LOG_FILENAME = "output_log.txt"
LOG_TIME_FORMAT = "%Y-%m-%d %H:%M:%S"

# 环境变量
THREADS_ENV = "MEMGRAD_THREADS"

# Lipschitz 搜索
RATIO_UP = 2.0
RATIO_DOWN = 0.9
MAX_DOUBLINGS = 200

# 收敛判据
EPSILON = 1e-9
INNER_TOLERANCE = 1e-9

# 内层 QP 迭代预算
GMM_INNER_ITERATIONS = 1000
AGMM_INNER_ITERATIONS = 10
NEWTON_ITERATIONS = 2

# 外层预算
MAX_ITERATIONS = 5000
REFERENCE_BUDGET = 10000
REFERENCE_BUNDLE = 16

# 重启参数
RESTART_POWER = 2
RESTART_DECREASE = math.exp(-RESTART_POWER)
RESTART_ESCALATION = 4.0
RESTART_OUTER_BUDGET = 10 ** 6
INNER_RUN_CAP = 10 ** 6

# 数值容差
MACHINE_EPS = float.fromhex("0x1p-52")
SLACK_FACTOR = 10.0
SIMPLEX_TOLERANCE = 1e-8
QUAD_GUARD = 1e-30
GRAM_REFRESH_PERIOD = 64
POWER_ITERATION_TOL = 1e-8
POWER_ITERATION_MAX = 10000

# 轨迹文件
FLOAT_FORMAT = "{:.17g}"
TRACE_FILE_SUFFIX = ".csv"
SUMMARY_FILE = "summary.csv"
