# 存储模块
# 包含收敛轨迹 CSV 保存/加载和参考最优值缓存
