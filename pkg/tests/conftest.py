"""共享测试夹具"""
import math
import os

import numpy as np
import pytest

from dentobox.labelmap import LabelMap, write_labelmap


def _rotated_rect_mask(shape, center, length, width, angle_deg):
    """像素中心落在旋转矩形内的掩码；长边方向与 x 轴夹角 angle_deg（y 向下）"""
    height, width_px = shape
    ys, xs = np.mgrid[0:height, 0:width_px]
    dx = xs - center[0]
    dy = ys - center[1]
    t = math.radians(angle_deg)
    along = dx * math.cos(t) + dy * math.sin(t)
    across = -dx * math.sin(t) + dy * math.cos(t)
    return (np.abs(along) <= length / 2) & (np.abs(across) <= width / 2)


def _rect_corners(center, length, width, angle_deg):
    t = math.radians(angle_deg)
    u = np.array([math.cos(t), math.sin(t)])
    v = np.array([-math.sin(t), math.cos(t)])
    c = np.asarray(center, dtype=float)
    return np.array([
        c - u * length / 2 - v * width / 2,
        c + u * length / 2 - v * width / 2,
        c + u * length / 2 + v * width / 2,
        c - u * length / 2 + v * width / 2,
    ])


@pytest.fixture
def rotated_rect_mask():
    return _rotated_rect_mask


@pytest.fixture
def rect_corners():
    return _rect_corners


def _blocks_map(shape, blocks):
    """blocks: [(label, x0, y0, x1, y1)]，闭区间"""
    array = np.zeros(shape, dtype=np.int64)
    for label, x0, y0, x1, y1 in blocks:
        array[y0:y1 + 1, x0:x1 + 1] = label
    return LabelMap(array)


@pytest.fixture
def blocks_map():
    return _blocks_map


@pytest.fixture
def dentition_map():
    """16 颗互不相邻的方块牙（上颌 1..8、下颌 25..32），60×200"""
    blocks = []
    for i, label in enumerate(range(1, 9)):
        blocks.append((label, 4 + i * 24, 4, 4 + i * 24 + 9, 4 + 19))
    for i, label in enumerate(range(25, 33)):
        blocks.append((label, 4 + i * 24, 34, 4 + i * 24 + 11, 34 + 17))
    return _blocks_map((60, 200), blocks)


@pytest.fixture
def write_map(tmp_path):
    """把标签图写入 tmp_path 下的相对路径，返回绝对路径"""

    def _write(relative, label_map):
        path = os.path.join(str(tmp_path), relative)
        write_labelmap(path, label_map)
        return path

    return _write
