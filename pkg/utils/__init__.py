# 工具函数模块
# 包含常量定义和日志输出配置
