# 配置文件模块
# 包含应用设置和实验配置文件读取
