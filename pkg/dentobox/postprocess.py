"""后处理：消除同一标签的多余区域（链码找边界 + 8 邻域统计 + 三种情形）"""

from __future__ import annotations

from collections import Counter as TallyCounter
from dataclasses import dataclass
from typing import Dict, List, Set, Tuple

import numpy as np
from scipy import ndimage

from dentobox.errors import InvariantError
from dentobox.labelmap import (
    EIGHT_CONNECTIVITY,
    Instance,
    LabelMap,
    extract_instances,
)
from dentobox.models import ResolveCase
from dentobox.monitoring import logger, regions_dissolved

# Freeman 方向 0..7：E, NE, N, NW, W, SW, S, SE（y 向下，N 即 y-1）
FREEMAN_OFFSETS: Tuple[Tuple[int, int], ...] = (
    (1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1),
)

Pixel = Tuple[int, int]


@dataclass(frozen=True)
class ChainCode:
    """Freeman 8 方向链码"""

    start: Pixel
    moves: Tuple[int, ...]

    def points(self) -> List[Pixel]:
        """从起点依次回放，返回经过的像素（含起点）"""
        x, y = self.start
        visited = [(x, y)]
        for move in self.moves:
            dx, dy = FREEMAN_OFFSETS[move]
            x, y = x + dx, y + dy
            visited.append((x, y))
        return visited


@dataclass(frozen=True)
class NeighborProfile:
    """多余区域边界像素的邻接统计：标签 -> 与该标签相邻的边界像素数"""

    counts: Dict[int, int]
    region_label: int

    @property
    def nonzero_labels(self) -> List[int]:
        return sorted(label for label in self.counts if label != 0)


@dataclass(frozen=True)
class RegionChange:
    """一次区域归并的记录"""

    label: int
    area: int
    case: ResolveCase
    new_label: int

    def to_dict(self) -> Dict[str, object]:
        return {
            "label": self.label,
            "area": self.area,
            "case": self.case.value,
            "new_label": self.new_label,
        }


def trace_border(region: Instance, dims: Tuple[int, int]) -> ChainCode:
    """Moore 边界跟踪（屏幕上顺时针），起点为区域行优先的第一个像素。

    dims 为 (height, width)。
    """
    mask = region.mask(dims)
    height, width = dims
    start = region.first_pixel

    def inside(px: int, py: int) -> bool:
        return 0 <= px < width and 0 <= py < height and bool(mask[py, px])

    def next_move(px: int, py: int, last: int):
        # 偶数方向从 last+1 开始，奇数方向从 last+2 开始，顺时针（方向号递减）搜索
        first = (last + 1) % 8 if last % 2 == 0 else (last + 2) % 8
        for k in range(8):
            direction = (first - k) % 8
            dx, dy = FREEMAN_OFFSETS[direction]
            if inside(px + dx, py + dy):
                return direction
        return None

    # 起点左侧与上方都不在区域内，相当于从西侧进入
    first_move = next_move(start[0], start[1], 0)
    if first_move is None:
        return ChainCode(start=start, moves=())

    moves: List[int] = []
    x, y = start
    move = first_move
    limit = 8 * region.area + 8
    while True:
        moves.append(move)
        dx, dy = FREEMAN_OFFSETS[move]
        x, y = x + dx, y + dy
        move = next_move(x, y, move)
        # Jacob 停止条件：回到起点且下一步与第一步相同
        if (x, y) == start and move == first_move:
            break
        if len(moves) > limit:
            raise InvariantError(f"边界跟踪未闭合: label={region.label}, start={start}")
    return ChainCode(start=start, moves=tuple(moves))


def border_pixels(region: Instance, dims: Tuple[int, int]) -> Set[Pixel]:
    """边界像素：至少有一个 8 邻域不属于区域，或位于图像边缘"""
    mask = region.mask(dims)
    interior = ndimage.binary_erosion(mask, structure=EIGHT_CONNECTIVITY, border_value=0)
    ys, xs = np.nonzero(mask & ~interior)
    return set(zip(xs.tolist(), ys.tolist()))


def neighbor_profile(region: Instance, label_map: LabelMap) -> NeighborProfile:
    """统计每个标签与多少个边界像素相邻（8 邻域，排除区域自身像素与图外像素）

    边界像素取自 border_pixels（腐蚀求差），不依赖 trace_border 的链码：
    Moore 跟踪只走外轮廓，会漏掉内孔边界与凹角处的部分边界像素。
    """
    dims = label_map.shape
    height, width = dims
    mask = region.mask(dims)
    labels = label_map.labels
    counts: TallyCounter = TallyCounter()
    for x, y in sorted(border_pixels(region, dims)):
        seen = set()
        for dx, dy in FREEMAN_OFFSETS:
            nx, ny = x + dx, y + dy
            if not (0 <= nx < width and 0 <= ny < height) or mask[ny, nx]:
                continue
            seen.add(int(labels[ny, nx]))
        counts.update(seen)
    # 同标签的区域互不 8 邻接
    counts.pop(region.label, None)
    return NeighborProfile(counts=dict(counts), region_label=region.label)


def classify_case(profile: NeighborProfile) -> ResolveCase:
    nonzero = profile.nonzero_labels
    if not nonzero:
        return ResolveCase.I
    if len(nonzero) == 1:
        return ResolveCase.II
    return ResolveCase.III


def resolve_region(profile: NeighborProfile) -> int:
    """按三种情形决定多余区域并入的标签。

    情形 I：只邻接背景 -> 0；
    情形 II：背景 + 单一标签 -> 该标签；
    情形 III：多个标签 -> 边界接触最多的标签，平局取最小标签号。
    """
    if not profile.counts:
        raise InvariantError(f"区域 {profile.region_label} 没有任何邻居")
    case = classify_case(profile)
    if case is ResolveCase.I:
        return 0
    nonzero = profile.nonzero_labels
    if case is ResolveCase.II:
        return nonzero[0]
    return min(nonzero, key=lambda label: (-profile.counts[label], label))


def _keeper_anchors(instances: List[Instance]) -> Dict[int, Pixel]:
    """每个标签面积最大的分量（平局取行优先靠前者）的第一个像素"""
    anchors: Dict[int, Pixel] = {}
    best_area: Dict[int, int] = {}
    for inst in instances:
        # instances 已按标签、左上像素排序，严格大于才替换即实现平局规则
        if inst.area > best_area.get(inst.label, 0):
            best_area[inst.label] = inst.area
            anchors[inst.label] = inst.first_pixel
    return anchors


def _contains(inst: Instance, pixel: Pixel) -> bool:
    return bool(np.any((inst.pixels[:, 0] == pixel[0]) & (inst.pixels[:, 1] == pixel[1])))


def postprocess_with_log(label_map: LabelMap) -> Tuple[LabelMap, List[RegionChange]]:
    """对每个出现多个分量的标签，保留最大分量，其余分量按邻接情形重新赋值。

    多余区域按面积降序逐个处理，每次处理后在当前（已部分更新的）标签图上重新统计邻接。
    """
    anchors = _keeper_anchors(extract_instances(label_map))
    working = label_map.copy_array()
    changes: List[RegionChange] = []

    while True:
        current = LabelMap(working)
        unwanted = [
            inst for inst in extract_instances(current)
            if not _contains(inst, anchors[inst.label])
        ]
        if not unwanted:
            break
        region = min(unwanted, key=lambda inst: (-inst.area, inst.label, inst.first_pixel[1], inst.first_pixel[0]))
        profile = neighbor_profile(region, current)
        case = classify_case(profile)
        new_label = resolve_region(profile)
        working[region.pixels[:, 1], region.pixels[:, 0]] = new_label

        change = RegionChange(label=region.label, area=region.area, case=case, new_label=new_label)
        changes.append(change)
        regions_dissolved.labels(case=case.value).inc()
        logger.debug(
            "region_dissolved",
            label=region.label,
            area=region.area,
            case=case.value,
            new_label=new_label,
            counts=profile.counts,
        )

    return LabelMap(working), changes


def postprocess(label_map: LabelMap) -> LabelMap:
    """后处理后每个标签至多一个连通分量；输入不被修改"""
    result, _ = postprocess_with_log(label_map)
    return result
