"""异常定义 - 每类异常携带 CLI 退出码与 HTTP 状态码"""
from __future__ import annotations

from typing import Iterable, List


class DentoboxError(Exception):
    """所有业务异常的基类"""

    exit_code: int = 1
    status_code: int = 500


class InputError(DentoboxError):
    """输入文件缺失或无法读取"""

    exit_code = 2
    status_code = 400


class LabelMapFormatError(InputError):
    """标签图文件格式错误"""


class LabelValueError(LabelMapFormatError):
    """标签值超出 0..32"""

    def __init__(self, x: int, y: int, value: int):
        self.x = x
        self.y = y
        self.value = value
        super().__init__(f"标签值 {value} 超出范围 0..32，位置 (x={x}, y={y})")


class InvariantError(DentoboxError):
    """违反不变量"""

    exit_code = 3
    status_code = 422


class ShapeMismatchError(InvariantError):
    """尺寸不一致"""


class PatchError(InvariantError):
    """切块参数非法"""


class StitchCoverageError(InvariantError):
    """拼接后存在未覆盖像素"""

    def __init__(self, x: int, y: int):
        self.x = x
        self.y = y
        super().__init__(f"拼接结果未覆盖像素 (x={x}, y={y})")


class MissingLabelError(InvariantError):
    """标签图中不存在该牙齿标签"""

    def __init__(self, label: int):
        self.label = label
        super().__init__(f"标签 {label} 不存在（缺失牙齿）")


class DegenerateMaskError(InvariantError):
    """掩码像素不足或协方差为零，无法做 PCA"""


class ConfigError(DentoboxError):
    """配置文件无效"""

    exit_code = 3
    status_code = 500


class PairingError(DentoboxError):
    """预测与真值文件无法一一配对"""

    exit_code = 4
    status_code = 400

    def __init__(self, orphans: Iterable[str]):
        self.orphans: List[str] = sorted(orphans)
        super().__init__(f"以下文件无法配对: {', '.join(self.orphans)}")


