# 问题模块
# 包含复合问题预言机、复合梯度映射和五类合成测试问题
