# 求解器模块
# 包含 GMM、AGMM（含强凸版本）和重启包装器
