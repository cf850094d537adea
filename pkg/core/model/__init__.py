# 模型模块
# 包含分段线性模型（bundle）和单纯形约束的内层二次规划
