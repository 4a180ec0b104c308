# 牙齿标签图后处理、OBB 生成与评估

__version__ = "1.0.0"
