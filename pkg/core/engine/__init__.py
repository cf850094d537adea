# 执行引擎模块
# 包含参考最优值计算、实验执行、批量运行和结果汇总
