# 核心模块
# 包含问题预言机、模型、求解器和基准执行引擎
