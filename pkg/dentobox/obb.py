"""基于 PCA 的定向包围盒（OBB）生成。

流程：单颗牙分离 -> PCA 求主方向 -> 绕质心旋转至竖直 -> 水平包围盒 -> 以 -θ 反向旋转。
角度均以度为单位，在图像坐标系（x 向右、y 向下）中计算。
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from dentobox.errors import DegenerateMaskError, InvariantError, MissingLabelError
from dentobox.labelmap import LabelMap
from dentobox.monitoring import logger
from dentobox.postprocess import postprocess

# λ1 - λ2 < 该值 · λ1 时认为方向不确定
EIGEN_TIE_TOLERANCE = 1e-9
ANGLE_FOLD_TOLERANCE = 1e-9


class Point(NamedTuple):
    x: float
    y: float


@dataclass(frozen=True)
class PcaResult:
    pca_angle: float  # 第一主成分与水平轴夹角，(-90, 90]
    eigenvalues: Tuple[float, float]  # λ1 >= λ2 >= 0
    pivot: Point  # 掩码质心

    @property
    def is_isotropic(self) -> bool:
        l1, l2 = self.eigenvalues
        return (l1 - l2) < EIGEN_TIE_TOLERANCE * l1


@dataclass(frozen=True)
class Hbb:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        if self.xmin > self.xmax or self.ymin > self.ymax:
            raise InvariantError(f"非法包围盒: {self}")

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    def corners(self) -> np.ndarray:
        """(xmin,ymin) 起始的 4 个角点"""
        return np.array([
            [self.xmin, self.ymin],
            [self.xmax, self.ymin],
            [self.xmax, self.ymax],
            [self.xmin, self.ymax],
        ], dtype=np.float64)

    def as_list(self) -> List[float]:
        return [self.xmin, self.ymin, self.xmax, self.ymax]


@dataclass(frozen=True)
class Obb:
    label: int
    corners: Tuple[Point, Point, Point, Point]
    theta: float
    pivot: Point
    pca_angle: float

    def polygon(self) -> np.ndarray:
        return np.array(self.corners, dtype=np.float64)

    @property
    def width(self) -> float:
        c = self.polygon()
        return float(np.hypot(*(c[1] - c[0])))

    @property
    def height(self) -> float:
        c = self.polygon()
        return float(np.hypot(*(c[2] - c[1])))

    @property
    def area(self) -> float:
        return self.width * self.height

    def contains(self, point: Sequence[float], tol: float = 1e-6) -> bool:
        """凸多边形包含测试（边上视为包含）"""
        c = self.polygon()
        p = np.asarray(point, dtype=np.float64)
        edges = np.roll(c, -1, axis=0) - c
        rel = p - c
        cross = edges[:, 0] * rel[:, 1] - edges[:, 1] * rel[:, 0]
        return bool(np.all(cross >= -tol) or np.all(cross <= tol))


def isolate_tooth(label_map: LabelMap, label: int) -> np.ndarray:
    """只保留一颗牙，其余置为背景，返回二值掩码"""
    mask = label_map.labels == label
    if label == 0 or not mask.any():
        raise MissingLabelError(label)
    return mask


def _mask_points(mask: np.ndarray) -> np.ndarray:
    ys, xs = np.nonzero(mask)
    return np.stack([xs, ys], axis=1).astype(np.float64)


def _fold_angle(angle: float) -> float:
    """将角度折叠到 (-90, 90]，消除特征向量符号歧义"""
    while angle <= -90.0 + ANGLE_FOLD_TOLERANCE:
        angle += 180.0
    while angle > 90.0 + ANGLE_FOLD_TOLERANCE:
        angle -= 180.0
    return min(angle, 90.0)


def pca(mask: np.ndarray) -> PcaResult:
    """像素坐标 2×2 协方差（总体归一化）的特征分解"""
    points = _mask_points(np.asarray(mask, dtype=bool))
    if points.shape[0] < 2:
        raise DegenerateMaskError(f"掩码像素数不足: {points.shape[0]}")
    centroid = points.mean(axis=0)
    cov = np.cov(points, rowvar=False, bias=True)
    eigenvalues, eigenvectors = np.linalg.eigh(cov)
    l2, l1 = (max(float(v), 0.0) for v in eigenvalues)
    if l1 <= 0.0:
        raise DegenerateMaskError("掩码协方差为零")
    pivot = Point(float(centroid[0]), float(centroid[1]))

    if (l1 - l2) < EIGEN_TIE_TOLERANCE * l1:
        # 近似各向同性：方向无定义，退化为竖直（θ = 0）
        return PcaResult(pca_angle=90.0, eigenvalues=(l1, l2), pivot=pivot)

    vx, vy = eigenvectors[:, 1]
    angle = _fold_angle(math.degrees(math.atan2(vy, vx)))
    return PcaResult(pca_angle=angle, eigenvalues=(l1, l2), pivot=pivot)


def rotation_theta(pca_angle: float) -> float:
    """由 PCA 角度计算使牙齿竖直的旋转角"""
    if pca_angle < 0:
        return 180.0 + (90.0 - pca_angle)
    return 90.0 - pca_angle


def rotation_matrix(theta: float, pivot: Sequence[float]) -> np.ndarray:
    """绕任意支点旋转的齐次矩阵"""
    t = math.radians(theta)
    c, s = math.cos(t), math.sin(t)
    xc, yc = float(pivot[0]), float(pivot[1])
    return np.array([
        [c, -s, xc * (1 - c) + yc * s],
        [s, c, yc * (1 - c) - xc * s],
        [0.0, 0.0, 1.0],
    ])


def rotate_points(points, theta: float, pivot: Sequence[float]) -> np.ndarray:
    """(N, 2) 点集绕 pivot 旋转 theta 度"""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    homogeneous = np.hstack([pts, np.ones((pts.shape[0], 1))])
    rotated = homogeneous @ rotation_matrix(theta, pivot).T
    return rotated[:, :2]


def hbb(points) -> Hbb:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if pts.shape[0] == 0:
        raise ValueError("点集为空，无法计算包围盒")
    mins = pts.min(axis=0)
    maxs = pts.max(axis=0)
    return Hbb(float(mins[0]), float(mins[1]), float(maxs[0]), float(maxs[1]))


def tooth_hbb(label_map: LabelMap, label: int) -> Hbb:
    """图像坐标系下的水平包围盒（像素中心）"""
    return hbb(_mask_points(isolate_tooth(label_map, label)))


def generate_obb(label_map: LabelMap, label: int) -> Obb:
    mask = isolate_tooth(label_map, label)
    result = pca(mask)
    theta = rotation_theta(result.pca_angle)
    upright = rotate_points(_mask_points(mask), theta, result.pivot)
    box = hbb(upright)
    corners = rotate_points(box.corners(), -theta, result.pivot)
    return Obb(
        label=label,
        corners=tuple(Point(float(x), float(y)) for x, y in corners),
        theta=theta,
        pivot=result.pivot,
        pca_angle=result.pca_angle,
    )


def generate_obbs(
    label_map: LabelMap,
    postprocessed: bool = False,
) -> Tuple[List[Obb], Dict[int, str]]:
    """为图中每个标签生成 OBB；OBB 只在后处理后的单连通实例上计算。

    返回 (obbs, skipped)，skipped 记录被跳过的标签及原因。
    """
    if not postprocessed:
        label_map = postprocess(label_map)
    obbs: List[Obb] = []
    skipped: Dict[int, str] = {}
    for label in label_map.labels_present():
        try:
            obbs.append(generate_obb(label_map, label))
        except DegenerateMaskError as exc:
            skipped[label] = "degenerate_mask"
            logger.info("obb_skipped", label=label, reason="degenerate_mask", error=str(exc))
    return obbs, skipped


# ---------------------- 导入导出 ---------------------- #

def _round2(value: float) -> float:
    rounded = round(float(value), 2)
    return 0.0 if rounded == 0 else rounded


def export_obbs(
    image_id: str,
    obbs: Iterable[Obb],
    hbbs: Optional[Mapping[int, Hbb]] = None,
) -> Dict[str, object]:
    """导出 OBB JSON 文档；坐标保留两位小数，按标签升序"""
    teeth = []
    for item in sorted(obbs, key=lambda o: o.label):
        entry: Dict[str, object] = {
            "label": int(item.label),
            "pca_angle_deg": _round2(item.pca_angle),
            "theta_deg": _round2(item.theta),
            "pivot": [_round2(item.pivot.x), _round2(item.pivot.y)],
            "corners": [[_round2(p.x), _round2(p.y)] for p in item.corners],
        }
        if hbbs is not None and item.label in hbbs:
            entry["hbb"] = [_round2(v) for v in hbbs[item.label].as_list()]
        teeth.append(entry)
    return {"image": image_id, "teeth": teeth}


def load_obbs(document: Mapping[str, object]) -> Tuple[str, List[Obb]]:
    """读取 export_obbs 生成的文档"""
    try:
        image_id = str(document["image"])
        obbs = []
        for entry in document["teeth"]:  # type: ignore[union-attr]
            corners = entry["corners"]
            if len(corners) != 4:
                raise InvariantError(f"标签 {entry['label']} 的角点数不是 4")
            obbs.append(Obb(
                label=int(entry["label"]),
                corners=tuple(Point(float(x), float(y)) for x, y in corners),
                theta=float(entry["theta_deg"]),
                pivot=Point(*(float(v) for v in entry["pivot"])),
                pca_angle=float(entry["pca_angle_deg"]),
            ))
    except (KeyError, TypeError, ValueError) as exc:
        raise InvariantError(f"OBB 文档格式错误: {exc}") from exc
    return image_id, obbs


def obbs_by_label(obbs: Iterable[Obb]) -> Dict[int, Obb]:
    return {o.label: o for o in obbs}
