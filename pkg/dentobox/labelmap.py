"""标签图数据模型、读写、连通域提取以及切块/拼接"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy import ndimage

from dentobox.errors import (
    InputError,
    LabelMapFormatError,
    LabelValueError,
    PatchError,
    StitchCoverageError,
)
from dentobox.models import LabelFormat

MAX_LABEL = 32

# 8 邻域结构元素
EIGHT_CONNECTIVITY = np.ones((3, 3), dtype=bool)

Origin = Tuple[int, int]


def first_pixel(mask: np.ndarray) -> Optional[Tuple[int, int]]:
    """行优先扫描下第一个非零像素的 (x, y)"""
    flat = np.flatnonzero(mask)
    if flat.size == 0:
        return None
    y, x = divmod(int(flat[0]), mask.shape[1])
    return x, y


@dataclass(frozen=True, eq=False)
class LabelMap:
    """H×W 的牙齿标签栅格，0 为背景，1..32 为牙齿编号。

    坐标约定：x 为列（向右），y 为行（向下），原点在左上角。
    """

    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2 or labels.shape[0] == 0 or labels.shape[1] == 0:
            raise LabelMapFormatError(f"标签图必须是非空二维栅格，实际形状 {labels.shape}")
        if not np.issubdtype(labels.dtype, np.integer):
            if not np.all(np.equal(np.mod(labels, 1), 0)):
                raise LabelMapFormatError("标签图必须是整数栅格")
        bad = (labels < 0) | (labels > MAX_LABEL)
        if bad.any():
            x, y = first_pixel(bad)
            raise LabelValueError(x, y, int(labels[y, x]))
        frozen = labels.astype(np.uint8, copy=True)
        frozen.setflags(write=False)
        object.__setattr__(self, "labels", frozen)

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.labels.shape

    def labels_present(self) -> List[int]:
        """图中出现的非零标签（升序）"""
        return [int(v) for v in np.unique(self.labels) if v != 0]

    def copy_array(self) -> np.ndarray:
        """返回可写副本"""
        return self.labels.copy()

    def __eq__(self, other) -> bool:
        if not isinstance(other, LabelMap):
            return NotImplemented
        return np.array_equal(self.labels, other.labels)

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True, eq=False)
class Instance:
    """单个 8 连通区域"""

    label: int
    pixels: np.ndarray = field(repr=False)  # (N, 2) 的 (x, y)，行优先顺序

    @property
    def area(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def centroid(self) -> Tuple[float, float]:
        mean = self.pixels.mean(axis=0)
        return float(mean[0]), float(mean[1])

    @property
    def bbox(self) -> Tuple[int, int, int, int]:
        """(xmin, ymin, xmax, ymax)，含端点"""
        mins = self.pixels.min(axis=0)
        maxs = self.pixels.max(axis=0)
        return int(mins[0]), int(mins[1]), int(maxs[0]), int(maxs[1])

    @property
    def first_pixel(self) -> Tuple[int, int]:
        return int(self.pixels[0, 0]), int(self.pixels[0, 1])

    def mask(self, shape: Tuple[int, int]) -> np.ndarray:
        out = np.zeros(shape, dtype=bool)
        out[self.pixels[:, 1], self.pixels[:, 0]] = True
        return out

    def to_dict(self) -> Dict[str, object]:
        cx, cy = self.centroid
        return {
            "label": self.label,
            "area": self.area,
            "centroid": [cx, cy],
            "bbox": list(self.bbox),
        }


@dataclass(frozen=True)
class PatchGrid:
    """切块网格：所有 patch 的左上角坐标（行优先）"""

    patch_size: int
    stride: int
    image_width: int
    image_height: int
    origins: Tuple[Origin, ...]

    @property
    def overlap(self) -> int:
        return self.patch_size - self.stride

    def __len__(self) -> int:
        return len(self.origins)


# ---------------------- 读写 ---------------------- #

def _load_png(data: bytes) -> LabelMap:
    try:
        image = Image.open(io.BytesIO(data))
        image.load()
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise LabelMapFormatError(f"无法解析 PNG: {exc}") from exc
    if image.mode not in ("L", "P", "I", "I;16", "1"):
        raise LabelMapFormatError(f"标签图必须是单通道，实际模式 {image.mode}")
    return LabelMap(np.asarray(image).astype(np.int64))


def _pgm_tokens(text: str) -> List[str]:
    tokens: List[str] = []
    for line in text.splitlines():
        line = line.split("#", 1)[0]
        tokens.extend(line.split())
    return tokens


def _load_pgm(data: bytes) -> LabelMap:
    try:
        text = data.decode("ascii")
    except UnicodeDecodeError as exc:
        raise LabelMapFormatError("PGM 必须是 ASCII (P2) 格式") from exc
    tokens = _pgm_tokens(text)
    if len(tokens) < 4 or tokens[0] != "P2":
        raise LabelMapFormatError("缺少 P2 文件头")
    try:
        width, height, maxval = (int(t) for t in tokens[1:4])
        values = [int(t) for t in tokens[4:]]
    except ValueError as exc:
        raise LabelMapFormatError(f"PGM 含非整数字段: {exc}") from exc
    if width <= 0 or height <= 0 or maxval <= 0:
        raise LabelMapFormatError(f"PGM 尺寸或 maxval 非法: {width}x{height}, maxval={maxval}")
    if len(values) != width * height:
        raise LabelMapFormatError(f"PGM 像素数 {len(values)} 与尺寸 {width}x{height} 不符")
    array = np.asarray(values, dtype=np.int64).reshape(height, width)
    over = array > maxval
    if over.any():
        x, y = first_pixel(over)
        raise LabelMapFormatError(f"像素值超过 maxval={maxval}，位置 (x={x}, y={y})")
    return LabelMap(array)


def load_labelmap(data: bytes, fmt: Union[LabelFormat, str]) -> LabelMap:
    """从字节流读取标签图（8 位单通道 PNG 或 ASCII PGM）"""
    fmt = LabelFormat(fmt)
    if fmt is LabelFormat.PNG8:
        return _load_png(data)
    return _load_pgm(data)


def save_labelmap(label_map: LabelMap, fmt: Union[LabelFormat, str]) -> bytes:
    """将标签图编码为字节流，load_labelmap 可逐位还原"""
    fmt = LabelFormat(fmt)
    if fmt is LabelFormat.PNG8:
        buf = io.BytesIO()
        Image.fromarray(label_map.labels).save(buf, format="PNG")
        return buf.getvalue()

    lines = ["P2", f"{label_map.width} {label_map.height}", str(MAX_LABEL)]
    for row in label_map.labels:
        values = [str(int(v)) for v in row]
        # 每行最多 17 个数，保证行宽不超过 70 字符
        for start in range(0, len(values), 17):
            lines.append(" ".join(values[start:start + 17]))
    return ("\n".join(lines) + "\n").encode("ascii")


def format_from_path(path: str) -> LabelFormat:
    suffix = os.path.splitext(path)[1].lower()
    if suffix == ".png":
        return LabelFormat.PNG8
    if suffix == ".pgm":
        return LabelFormat.PGM
    raise InputError(f"无法从扩展名推断标签图格式: {path}")


def read_labelmap(path: str) -> LabelMap:
    fmt = format_from_path(path)
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as exc:
        raise InputError(f"无法读取 {path}: {exc}") from exc
    return load_labelmap(data, fmt)


def write_labelmap(path: str, label_map: LabelMap) -> None:
    data = save_labelmap(label_map, format_from_path(path))
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "wb") as f:
        f.write(data)


# ---------------------- 连通域 ---------------------- #

def components(mask: np.ndarray) -> List[np.ndarray]:
    """二值掩码的 8 连通分量，按各分量行优先第一个像素排序；每个分量为 (N, 2) 的 (x, y)"""
    labeled, count = ndimage.label(mask, structure=EIGHT_CONNECTIVITY)
    if count == 0:
        return []
    flat = labeled.ravel()
    positions = np.flatnonzero(flat)
    ids = flat[positions]
    # 稳定排序后每个分量内部仍保持行优先顺序
    order = np.argsort(ids, kind="stable")
    ids_sorted = ids[order]
    positions_sorted = positions[order]
    splits = np.flatnonzero(np.diff(ids_sorted)) + 1
    groups = np.split(positions_sorted, splits)
    groups.sort(key=lambda g: int(g[0]))
    width = mask.shape[1]
    return [np.stack([g % width, g // width], axis=1).astype(np.int64) for g in groups]


def extract_instances(label_map: LabelMap) -> List[Instance]:
    """每个非零标签的每个 8 连通分量生成一个 Instance；按标签升序、再按左上像素排序"""
    instances: List[Instance] = []
    for label in label_map.labels_present():
        for pixels in components(label_map.labels == label):
            instances.append(Instance(label=label, pixels=pixels))
    return instances


def dump_instances(instances: Sequence[Instance]) -> List[Dict[str, object]]:
    return [inst.to_dict() for inst in instances]


# ---------------------- 归一化 ---------------------- #

def normalize_intensity(image: np.ndarray, bit_depth: Optional[int] = None) -> np.ndarray:
    """除以位深对应的最大可表示值，归一化到 [0, 1]。

    整数类型按 dtype 推断最大值；浮点输入需给出 bit_depth（默认 8 位）。
    """
    image = np.asarray(image)
    if bit_depth is not None:
        max_value = float(2 ** bit_depth - 1)
    elif np.issubdtype(image.dtype, np.integer):
        max_value = float(np.iinfo(image.dtype).max)
    else:
        max_value = 255.0
    if not np.all(np.isfinite(image)):
        raise ValueError("图像含非有限值")
    return np.clip(image.astype(np.float64) / max_value, 0.0, 1.0)


# ---------------------- 切块与拼接 ---------------------- #

def _axis_origins(dim: int, patch_size: int, stride: int) -> List[int]:
    origins = list(range(0, dim - patch_size + 1, stride))
    if origins[-1] != dim - patch_size:
        origins.append(dim - patch_size)
    return origins


def patchify(image, patch_size: int = 512, overlap: int = 10) -> PatchGrid:
    """按 stride = patch_size - overlap 生成 patch 左上角；每个轴最后一个位置夹到边界"""
    shape = image.shape if hasattr(image, "shape") else tuple(image)
    height, width = int(shape[0]), int(shape[1])
    if patch_size <= 0:
        raise PatchError(f"patch_size 必须为正数: {patch_size}")
    if not 0 <= overlap < patch_size:
        raise PatchError(f"overlap 必须满足 0 <= overlap < patch_size: {overlap}")
    if patch_size > width or patch_size > height:
        raise PatchError(f"patch {patch_size} 大于图像 {width}x{height}")
    stride = patch_size - overlap
    xs = _axis_origins(width, patch_size, stride)
    ys = _axis_origins(height, patch_size, stride)
    origins = tuple((x, y) for y in ys for x in xs)
    return PatchGrid(
        patch_size=patch_size,
        stride=stride,
        image_width=width,
        image_height=height,
        origins=origins,
    )


def extract_patches(image, grid: PatchGrid) -> List[Tuple[Origin, np.ndarray]]:
    """按网格切出所有 patch"""
    array = image.labels if isinstance(image, LabelMap) else np.asarray(image)
    size = grid.patch_size
    return [
        ((x, y), array[y:y + size, x:x + size].copy())
        for x, y in grid.origins
    ]


def stitch(
    patches: Sequence[Tuple[Origin, np.ndarray]],
    width: int,
    height: int,
) -> LabelMap:
    """拼回整图；重叠区域按行优先顺序后出现的 patch 覆盖先出现的"""
    canvas = np.zeros((height, width), dtype=np.int64)
    covered = np.zeros((height, width), dtype=bool)
    for (x, y), patch in sorted(patches, key=lambda item: (item[0][1], item[0][0])):
        patch = np.asarray(patch)
        ph, pw = patch.shape[:2]
        if x < 0 or y < 0 or x + pw > width or y + ph > height:
            raise PatchError(f"patch 越界: origin=({x}, {y}), size={pw}x{ph}")
        canvas[y:y + ph, x:x + pw] = patch
        covered[y:y + ph, x:x + pw] = True
    if not covered.all():
        x, y = first_pixel(~covered)
        raise StitchCoverageError(x, y)
    return LabelMap(canvas)
