"""评估指标：混淆计数、Dice/Focal 损失、旋转 IoU、按标签/类别汇总、缺失牙统计"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Set, Union

import numpy as np

from dentobox.errors import ShapeMismatchError
from dentobox.labelmap import LabelMap
from dentobox.models import Averaging, LossConfig, ToothCategory
from dentobox.obb import Obb

# focal loss 中概率的截断
PROB_CLAMP = 1e-7
AREA_EPS = 1e-12

BoxLike = Union[Obb, np.ndarray, Sequence[Sequence[float]]]


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn) < 0:
            raise ValueError(f"混淆计数不能为负: {self}")

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    @property
    def is_empty(self) -> bool:
        return self.tp + self.fp + self.fn == 0


def _check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"尺寸不一致: {a.shape} vs {b.shape}")


def confusion(pred: np.ndarray, gt: np.ndarray) -> ConfusionCounts:
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    _check_same_shape(pred, gt)
    return ConfusionCounts(
        tp=int(np.count_nonzero(pred & gt)),
        fp=int(np.count_nonzero(pred & ~gt)),
        fn=int(np.count_nonzero(~pred & gt)),
    )


# tp+fp+fn == 0 时四个指标均为 1；否则分母为 0 时取 0
def _ratio(numerator: float, denominator: float, counts: ConfusionCounts) -> float:
    if counts.is_empty:
        return 1.0
    if denominator == 0:
        return 0.0
    return numerator / denominator


def precision(c: ConfusionCounts) -> float:
    return _ratio(c.tp, c.tp + c.fp, c)


def recall(c: ConfusionCounts) -> float:
    return _ratio(c.tp, c.tp + c.fn, c)


def dsc(c: ConfusionCounts) -> float:
    return _ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn, c)


def iou(c: ConfusionCounts) -> float:
    return _ratio(c.tp, c.tp + c.fp + c.fn, c)


# ---------------------- 损失 ---------------------- #

def dice_loss(prob: np.ndarray, gt: np.ndarray, smooth: float = 1.0) -> float:
    """软 Dice 损失 DL = 1 - (2Σpg + ε) / (Σp + Σg + ε)"""
    prob = np.asarray(prob, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    _check_same_shape(prob, gt)
    score = (2.0 * np.sum(prob * gt) + smooth) / (np.sum(prob) + np.sum(gt) + smooth)
    return float(1.0 - score)


def focal_loss(prob: np.ndarray, gt: np.ndarray, cfg: Optional[LossConfig] = None) -> float:
    """逐像素均值 -α_t (1 - p_t)^γ log(p_t)"""
    cfg = cfg or LossConfig()
    prob = np.clip(np.asarray(prob, dtype=np.float64), PROB_CLAMP, 1.0 - PROB_CLAMP)
    positive = np.asarray(gt, dtype=bool)
    _check_same_shape(prob, positive)
    p_t = np.where(positive, prob, 1.0 - prob)
    alpha_t = np.where(positive, cfg.focal_alpha, 1.0 - cfg.focal_alpha)
    loss = -alpha_t * (1.0 - p_t) ** cfg.focal_gamma * np.log(p_t)
    return float(np.mean(loss))


def combined_loss(prob: np.ndarray, gt: np.ndarray, cfg: Optional[LossConfig] = None) -> float:
    """L = DL + FL，等权"""
    cfg = cfg or LossConfig()
    return dice_loss(prob, gt, cfg.dice_smooth) + focal_loss(prob, gt, cfg)


def loss_summary(pred: LabelMap, gt: LabelMap, cfg: Optional[LossConfig] = None) -> Dict[str, float]:
    """把预测的硬掩码当作概率图，对真值中每个标签求损失后取均值"""
    cfg = cfg or LossConfig()
    _check_same_shape(pred.labels, gt.labels)
    dice_values: List[float] = []
    focal_values: List[float] = []
    for label in gt.labels_present():
        prob = (pred.labels == label).astype(np.float64)
        target = gt.labels == label
        dice_values.append(dice_loss(prob, target, cfg.dice_smooth))
        focal_values.append(focal_loss(prob, target, cfg))
    if not dice_values:
        return {"dice": 0.0, "focal": 0.0, "combined": 0.0}
    dice_mean = float(np.mean(dice_values))
    focal_mean = float(np.mean(focal_values))
    return {"dice": dice_mean, "focal": focal_mean, "combined": dice_mean + focal_mean}


# ---------------------- 旋转 IoU ---------------------- #

def _as_polygon(box: BoxLike) -> np.ndarray:
    if isinstance(box, Obb):
        return box.polygon()
    return np.asarray(box, dtype=np.float64).reshape(-1, 2)


def signed_area(polygon: np.ndarray) -> float:
    poly = np.asarray(polygon, dtype=np.float64).reshape(-1, 2)
    if poly.shape[0] < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return float(0.5 * (np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y)))


def polygon_area(polygon: np.ndarray) -> float:
    """鞋带公式"""
    return abs(signed_area(polygon))


def clip_polygon(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland–Hodgman：用凸多边形 clip 裁剪 subject"""
    clip = np.asarray(clip, dtype=np.float64).reshape(-1, 2)
    if signed_area(clip) < 0:
        clip = clip[::-1]
    output = [tuple(p) for p in np.asarray(subject, dtype=np.float64).reshape(-1, 2)]

    def inside(p, a, b) -> bool:
        return (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) >= 0.0

    def intersection(s, e, a, b):
        dc = (a[0] - b[0], a[1] - b[1])
        dp = (s[0] - e[0], s[1] - e[1])
        n1 = a[0] * b[1] - a[1] * b[0]
        n2 = s[0] * e[1] - s[1] * e[0]
        denom = dc[0] * dp[1] - dc[1] * dp[0]
        return ((n1 * dp[0] - n2 * dc[0]) / denom, (n1 * dp[1] - n2 * dc[1]) / denom)

    a = tuple(clip[-1])
    for vertex in clip:
        b = tuple(vertex)
        if not output:
            break
        source = output
        output = []
        s = source[-1]
        for e in source:
            if inside(e, a, b):
                if not inside(s, a, b):
                    output.append(intersection(s, e, a, b))
                output.append(e)
            elif inside(s, a, b):
                output.append(intersection(s, e, a, b))
            s = e
        a = b
    return np.array(output, dtype=np.float64).reshape(-1, 2)


def rotated_iou(a: BoxLike, b: BoxLike) -> float:
    """两个定向矩形的 IoU（精确多边形裁剪）"""
    pa = _as_polygon(a)
    pb = _as_polygon(b)
    area_a = polygon_area(pa)
    area_b = polygon_area(pb)
    if area_a <= AREA_EPS or area_b <= AREA_EPS:
        both_degenerate = area_a <= AREA_EPS and area_b <= AREA_EPS
        return 1.0 if both_degenerate and pa.shape == pb.shape and np.allclose(pa, pb) else 0.0
    inter = polygon_area(clip_polygon(pa, pb))
    union = area_a + area_b - inter
    if union <= 0:
        return 0.0
    return float(min(max(inter / union, 0.0), 1.0))


# ---------------------- 牙齿类别 ---------------------- #

_CATEGORY_RANGES = {
    ToothCategory.UPPER_MOLARS: (1, 2, 3, 14, 15, 16),
    ToothCategory.UPPER_PREMOLARS: (4, 5, 12, 13),
    ToothCategory.UPPER_CANINE: (6, 11),
    ToothCategory.UPPER_INCISORS: (7, 8, 9, 10),
    ToothCategory.LOWER_MOLARS: (17, 18, 19, 30, 31, 32),
    ToothCategory.LOWER_PREMOLARS: (20, 21, 28, 29),
    ToothCategory.LOWER_CANINE: (22, 27),
    ToothCategory.LOWER_INCISORS: (23, 24, 25, 26),
}

LABEL_TO_CATEGORY: Dict[int, ToothCategory] = {
    label: category
    for category, labels in _CATEGORY_RANGES.items()
    for label in labels
}

# 报表中的类别顺序
CATEGORY_ORDER = (
    ToothCategory.UPPER_INCISORS,
    ToothCategory.LOWER_INCISORS,
    ToothCategory.UPPER_CANINE,
    ToothCategory.LOWER_CANINE,
    ToothCategory.UPPER_PREMOLARS,
    ToothCategory.LOWER_PREMOLARS,
    ToothCategory.UPPER_MOLARS,
    ToothCategory.LOWER_MOLARS,
)


def category_of(label: int) -> ToothCategory:
    """通用编号系统（Universal Numbering）下的牙齿类别"""
    try:
        return LABEL_TO_CATEGORY[int(label)]
    except KeyError:
        raise ValueError(f"牙齿标签必须在 1..32 之间: {label}") from None


# ---------------------- 缺失牙 ---------------------- #

@dataclass(frozen=True)
class MissingTeeth:
    fp: int
    fn: int
    fp_labels: List[int] = field(default_factory=list)
    fn_labels: List[int] = field(default_factory=list)

    def to_dict(self) -> Dict[str, object]:
        return {
            "fp": self.fp,
            "fn": self.fn,
            "fp_labels": list(self.fp_labels),
            "fn_labels": list(self.fn_labels),
        }


def missing_teeth(pred_labels: Iterable[int], gt_labels: Iterable[int]) -> MissingTeeth:
    """按标签身份匹配：fn = 真值有而预测没有，fp = 预测有而真值没有"""
    pred_set: Set[int] = {int(v) for v in pred_labels if int(v) != 0}
    gt_set: Set[int] = {int(v) for v in gt_labels if int(v) != 0}
    fp_labels = sorted(pred_set - gt_set)
    fn_labels = sorted(gt_set - pred_set)
    return MissingTeeth(fp=len(fp_labels), fn=len(fn_labels), fp_labels=fp_labels, fn_labels=fn_labels)


# ---------------------- 报告 ---------------------- #

@dataclass(frozen=True)
class MetricRow:
    precision: float
    recall: float
    dsc: float
    iou: float
    riou: Optional[float]

    @classmethod
    def from_counts(cls, counts: ConfusionCounts, riou: Optional[float]) -> "MetricRow":
        return cls(precision(counts), recall(counts), dsc(counts), iou(counts), riou)

    @classmethod
    def mean(cls, rows: Sequence["MetricRow"]) -> "MetricRow":
        rious = [r.riou for r in rows if r.riou is not None]
        return cls(
            precision=float(np.mean([r.precision for r in rows])),
            recall=float(np.mean([r.recall for r in rows])),
            dsc=float(np.mean([r.dsc for r in rows])),
            iou=float(np.mean([r.iou for r in rows])),
            riou=float(np.mean(rious)) if rious else None,
        )

    def as_dict(self) -> Dict[str, Optional[float]]:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "dsc": self.dsc,
            "iou": self.iou,
            "riou": self.riou,
        }


@dataclass(frozen=True)
class LabelRecord:
    """单张图像中单个真值标签的原始统计"""
    label: int
    counts: ConfusionCounts
    riou: Optional[float]


@dataclass(frozen=True)
class ImageRecord:
    labels: Dict[int, LabelRecord]
    missing: MissingTeeth
    losses: Dict[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class MetricReport:
    per_label: Dict[int, MetricRow]
    per_category: Dict[ToothCategory, Optional[MetricRow]]
    category_sizes: Dict[ToothCategory, int]
    overall: Optional[MetricRow]
    missing: MissingTeeth
    averaging: Averaging
    n_images: int
    losses: Dict[str, float] = field(default_factory=dict)


def _label_riou(
    label: int,
    pred_obbs: Mapping[int, BoxLike],
    gt_obbs: Mapping[int, BoxLike],
) -> Optional[float]:
    if label not in gt_obbs:
        return None
    if label not in pred_obbs:
        return 0.0
    return rotated_iou(pred_obbs[label], gt_obbs[label])


def image_record(
    pred: LabelMap,
    gt: LabelMap,
    pred_obbs: Optional[Mapping[int, BoxLike]] = None,
    gt_obbs: Optional[Mapping[int, BoxLike]] = None,
    loss_cfg: Optional[LossConfig] = None,
) -> ImageRecord:
    """单张图像：真值中每个标签的混淆计数与 RIoU"""
    _check_same_shape(pred.labels, gt.labels)
    pred_obbs = pred_obbs or {}
    gt_obbs = gt_obbs or {}
    records: Dict[int, LabelRecord] = {}
    for label in gt.labels_present():
        counts = confusion(pred.labels == label, gt.labels == label)
        records[label] = LabelRecord(label, counts, _label_riou(label, pred_obbs, gt_obbs))
    return ImageRecord(
        labels=records,
        missing=missing_teeth(pred.labels_present(), gt.labels_present()),
        losses=loss_summary(pred, gt, loss_cfg),
    )


def _pooled_row(records: Sequence[LabelRecord]) -> MetricRow:
    total = ConfusionCounts(0, 0, 0)
    for record in records:
        total = total + record.counts
    rious = [r.riou for r in records if r.riou is not None]
    return MetricRow.from_counts(total, float(np.mean(rious)) if rious else None)


def aggregate(images: Sequence[ImageRecord], averaging: Averaging = Averaging.LABEL_MEAN) -> MetricReport:
    """数据集级别汇总。

    label_mean：每个标签先对各图像的指标取均值，类别与总体为标签行的均值；
    pixel_pooled：先把各图像的混淆计数按标签累加，再计算比值。
    """
    by_label: Dict[int, List[LabelRecord]] = {}
    for image in images:
        for label, record in image.labels.items():
            by_label.setdefault(label, []).append(record)

    per_label: Dict[int, MetricRow] = {}
    for label in sorted(by_label):
        records = by_label[label]
        if averaging is Averaging.PIXEL_POOLED:
            per_label[label] = _pooled_row(records)
        else:
            per_label[label] = MetricRow.mean([MetricRow.from_counts(r.counts, r.riou) for r in records])

    per_category: Dict[ToothCategory, Optional[MetricRow]] = {}
    category_sizes: Dict[ToothCategory, int] = {}
    for category in CATEGORY_ORDER:
        members = [label for label in per_label if LABEL_TO_CATEGORY[label] is category]
        category_sizes[category] = len(members)
        if not members:
            per_category[category] = None
        elif averaging is Averaging.PIXEL_POOLED:
            per_category[category] = _pooled_row([r for label in members for r in by_label[label]])
        else:
            per_category[category] = MetricRow.mean([per_label[label] for label in members])

    if not per_label:
        overall = None
    elif averaging is Averaging.PIXEL_POOLED:
        overall = _pooled_row([r for records in by_label.values() for r in records])
    else:
        overall = MetricRow.mean(list(per_label.values()))

    missing = MissingTeeth(
        fp=sum(image.missing.fp for image in images),
        fn=sum(image.missing.fn for image in images),
        fp_labels=sorted(v for image in images for v in image.missing.fp_labels),
        fn_labels=sorted(v for image in images for v in image.missing.fn_labels),
    )

    losses: Dict[str, float] = {}
    with_losses = [image.losses for image in images if image.losses]
    if with_losses:
        losses = {key: float(np.mean([entry[key] for entry in with_losses])) for key in with_losses[0]}

    return MetricReport(
        per_label=per_label,
        per_category=per_category,
        category_sizes=category_sizes,
        overall=overall,
        missing=missing,
        averaging=averaging,
        n_images=len(images),
        losses=losses,
    )


def evaluate(
    pred: LabelMap,
    gt: LabelMap,
    pred_obbs: Optional[Mapping[int, BoxLike]] = None,
    gt_obbs: Optional[Mapping[int, BoxLike]] = None,
    loss_cfg: Optional[LossConfig] = None,
    averaging: Averaging = Averaging.LABEL_MEAN,
) -> MetricReport:
    """单张图像的评估报告（等价于只含这一张图像的 aggregate）"""
    return aggregate([image_record(pred, gt, pred_obbs, gt_obbs, loss_cfg)], averaging)


# ---------------------- 报表输出 ---------------------- #

METRIC_FIELDS = ("precision", "recall", "dsc", "iou", "riou")


def _fmt(value: Optional[float], digits: int) -> str:
    return "" if value is None else f"{value:.{digits}f}"


def _pct(value: Optional[float]) -> Optional[float]:
    return None if value is None else round(value * 100.0, 2)


def per_label_csv(report: MetricReport) -> str:
    """逐标签 CSV（原始比值，4 位小数）"""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("label",) + METRIC_FIELDS)
    for label, row in report.per_label.items():
        values = row.as_dict()
        writer.writerow([label] + [_fmt(values[name], 4) for name in METRIC_FIELDS])
    return buf.getvalue()


def radar_csv(report: MetricReport) -> str:
    """雷达图数据（百分比，2 位小数），带类别列"""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("label", "category", "dsc", "riou"))
    for label, row in report.per_label.items():
        writer.writerow([
            label,
            LABEL_TO_CATEGORY[label].value,
            _fmt(_pct(row.dsc), 2),
            _fmt(_pct(row.riou), 2),
        ])
    return buf.getvalue()


def _pct_row(row: Optional[MetricRow]) -> Optional[Dict[str, Optional[float]]]:
    if row is None:
        return None
    return {name: _pct(value) for name, value in row.as_dict().items()}


def summary_document(report: MetricReport) -> Dict[str, object]:
    """JSON 汇总：总体、8 个类别行（百分比）与缺失牙统计"""
    return {
        "n_images": report.n_images,
        "averaging": report.averaging.value,
        "overall": _pct_row(report.overall),
        "categories": [
            {
                "category": category.value,
                "name": category.display_name,
                "n_labels": report.category_sizes[category],
                "metrics": _pct_row(report.per_category[category]),
            }
            for category in CATEGORY_ORDER
        ],
        "missing_teeth": report.missing.to_dict(),
        "loss": {key: round(value, 4) for key, value in report.losses.items()},
    }
