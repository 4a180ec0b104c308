"""目录级批处理：工作线程池、文件配对与报表落盘。CLI 与 HTTP 服务共用。"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, TypeVar

from dentobox.errors import InputError, PairingError
from dentobox.labelmap import (
    LabelMap,
    extract_patches,
    patchify,
    read_labelmap,
    stitch,
    write_labelmap,
)
from dentobox.metrics import (
    ImageRecord,
    MetricReport,
    aggregate,
    image_record,
    per_label_csv,
    radar_csv,
    summary_document,
)
from dentobox.models import AppConfig
from dentobox.monitoring import logger, track_stage
from dentobox.obb import Obb, export_obbs, generate_obbs, load_obbs, obbs_by_label, tooth_hbb
from dentobox.postprocess import postprocess_with_log

LABELMAP_SUFFIXES = (".png", ".pgm")

T = TypeVar("T")
R = TypeVar("R")


@dataclass
class BatchSummary:
    """一次批处理的输出清单"""

    stage: str
    outputs: List[str] = field(default_factory=list)
    notes: Dict[str, object] = field(default_factory=dict)


def run_pool(func: Callable[[T], R], items: Sequence[T], jobs: int = 1) -> List[R]:
    """有界线程池；结果按输入顺序返回，与完成顺序无关"""
    if jobs <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(func, items))


def _stem(path: str) -> str:
    return os.path.splitext(os.path.basename(path))[0]


def _duplicate_stems(paths: Sequence[str]) -> List[str]:
    """主干相同的文件名（如 x.png 与 x.pgm），排序后返回"""
    seen: Dict[str, List[str]] = {}
    for p in paths:
        seen.setdefault(_stem(p), []).append(os.path.basename(p))
    return sorted(name for names in seen.values() if len(names) > 1 for name in names)


def list_labelmaps(path: str) -> List[str]:
    """path 为文件时返回自身；为目录时返回其中所有 .png/.pgm（按文件名排序）

    目录中两个文件主干相同时抛 InputError：输出文件与配对都以主干命名。
    """
    if os.path.isfile(path):
        return [path]
    if not os.path.isdir(path):
        raise InputError(f"路径不存在: {path}")
    names = sorted(
        name for name in os.listdir(path)
        if os.path.splitext(name)[1].lower() in LABELMAP_SUFFIXES
    )
    duplicates = _duplicate_stems(names)
    if duplicates:
        logger.error("duplicate_stems", directory=path, files=duplicates)
        raise InputError(f"{path} 中存在主干相同的文件: {', '.join(duplicates)}")
    return [os.path.join(path, name) for name in names]


def _output_path(src: str, out: str, single: bool, suffix: Optional[str] = None) -> str:
    if single and os.path.splitext(out)[1]:
        return out
    name = os.path.basename(src) if suffix is None else _stem(src) + suffix
    return os.path.join(out, name)


def write_json(path: str, document) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(document, f, ensure_ascii=False, indent=2)
        f.write("\n")


def write_text(path: str, text: str) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(text)


def read_json(path: str):
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"无法读取 JSON {path}: {exc}") from exc


# ---------------------- postprocess ---------------------- #

def postprocess_paths(src: str, out: str, jobs: int = 1) -> BatchSummary:
    """后处理单个文件或整个目录；每张图旁边写一份 <stem>.changes.json"""
    inputs = list_labelmaps(src)
    single = os.path.isfile(src)

    def work(path: str) -> Tuple[str, LabelMap, list]:
        with track_stage("postprocess"):
            result, changes = postprocess_with_log(read_labelmap(path))
        return path, result, changes

    summary = BatchSummary(stage="postprocess")
    for path, result, changes in run_pool(work, inputs, jobs):
        target = _output_path(path, out, single)
        write_labelmap(target, result)
        log_path = os.path.splitext(target)[0] + ".changes.json"
        write_json(log_path, {"image": _stem(path), "changes": [c.to_dict() for c in changes]})
        summary.outputs.extend([target, log_path])
        logger.info("postprocess_written", image=_stem(path), output=target, changes=len(changes))
    return summary


# ---------------------- obb ---------------------- #

def obb_document(image_id: str, label_map: LabelMap, include_hbb: bool = False) -> Tuple[dict, Dict[int, str]]:
    """后处理 + 逐标签 OBB，返回导出文档与被跳过的标签"""
    cleaned, _ = postprocess_with_log(label_map)
    obbs, skipped = generate_obbs(cleaned, postprocessed=True)
    hbbs = {o.label: tooth_hbb(cleaned, o.label) for o in obbs} if include_hbb else None
    for label, reason in skipped.items():
        logger.info("obb_skipped", image=image_id, label=label, reason=reason)
    return export_obbs(image_id, obbs, hbbs), skipped


def obb_paths(src: str, out: str, jobs: int = 1, include_hbb: bool = False) -> BatchSummary:
    inputs = list_labelmaps(src)
    single = os.path.isfile(src)

    def work(path: str):
        with track_stage("obb"):
            return path, obb_document(_stem(path), read_labelmap(path), include_hbb)

    summary = BatchSummary(stage="obb")
    skipped_all: Dict[str, Dict[int, str]] = {}
    for path, (document, skipped) in run_pool(work, inputs, jobs):
        target = _output_path(path, out, single, suffix=".json")
        write_json(target, document)
        summary.outputs.append(target)
        if skipped:
            skipped_all[_stem(path)] = skipped
    summary.notes["skipped"] = skipped_all
    return summary


# ---------------------- eval ---------------------- #

def pair_files(pred: Sequence[str], gt: Sequence[str]) -> List[Tuple[str, str, str]]:
    """按文件名主干配对；任一侧存在孤立文件或重复主干即报 PairingError"""
    duplicates = _duplicate_stems(pred) + _duplicate_stems(gt)
    if duplicates:
        logger.error("eval_pairing_failed", duplicates=duplicates)
        raise PairingError(duplicates)
    pred_by_stem = {_stem(p): p for p in pred}
    gt_by_stem = {_stem(g): g for g in gt}
    orphans = [os.path.basename(pred_by_stem[s]) for s in pred_by_stem.keys() - gt_by_stem.keys()]
    orphans += [os.path.basename(gt_by_stem[s]) for s in gt_by_stem.keys() - pred_by_stem.keys()]
    if orphans:
        logger.error("eval_pairing_failed", orphans=sorted(orphans))
        raise PairingError(orphans)
    return [(stem, pred_by_stem[stem], gt_by_stem[stem]) for stem in sorted(pred_by_stem)]


def _obbs_for(stem: str, label_map: LabelMap, obb_dir: Optional[str]) -> Dict[int, Obb]:
    if obb_dir is None:
        obbs, _ = generate_obbs(label_map)
        return obbs_by_label(obbs)
    path = os.path.join(obb_dir, stem + ".json")
    if not os.path.exists(path):
        raise PairingError([stem + ".json"])
    _, obbs = load_obbs(read_json(path))
    return obbs_by_label(obbs)


def evaluate_paths(
    pred: str,
    gt: str,
    config: AppConfig,
    pred_obbs: Optional[str] = None,
    gt_obbs: Optional[str] = None,
    jobs: int = 1,
) -> MetricReport:
    """逐图像计算统计，再按配置的方式汇总"""
    pairs = pair_files(list_labelmaps(pred), list_labelmaps(gt))

    def work(pair: Tuple[str, str, str]) -> ImageRecord:
        stem, pred_path, gt_path = pair
        with track_stage("eval"):
            pred_map = read_labelmap(pred_path)
            gt_map = read_labelmap(gt_path)
            return image_record(
                pred_map,
                gt_map,
                _obbs_for(stem, pred_map, pred_obbs),
                _obbs_for(stem, gt_map, gt_obbs),
                config.loss,
            )

    records = run_pool(work, pairs, jobs)
    report = aggregate(records, config.evaluation.averaging)
    logger.info(
        "eval_completed",
        images=report.n_images,
        labels=len(report.per_label),
        fp=report.missing.fp,
        fn=report.missing.fn,
    )
    return report


def write_report(report: MetricReport, out: str) -> BatchSummary:
    """per_label.csv、radar.csv 与 summary.json"""
    summary = BatchSummary(stage="eval")
    outputs = {
        "per_label.csv": per_label_csv(report),
        "radar.csv": radar_csv(report),
    }
    for name, text in outputs.items():
        path = os.path.join(out, name)
        write_text(path, text)
        summary.outputs.append(path)
    summary_path = os.path.join(out, "summary.json")
    write_json(summary_path, summary_document(report))
    summary.outputs.append(summary_path)
    return summary


# ---------------------- patchify / stitch ---------------------- #

MANIFEST = "manifest.json"


def patchify_path(src: str, out: str, patch_size: int, overlap: int) -> BatchSummary:
    """切块写入 out/，并附带 manifest.json 记录原图尺寸与各 patch 原点"""
    label_map = read_labelmap(src)
    grid = patchify(label_map.labels, patch_size, overlap)
    summary = BatchSummary(stage="patchify")
    entries = []
    for index, ((x, y), patch) in enumerate(extract_patches(label_map, grid)):
        name = f"{_stem(src)}_{index:04d}.png"
        write_labelmap(os.path.join(out, name), LabelMap(patch))
        entries.append({"file": name, "x": x, "y": y})
        summary.outputs.append(os.path.join(out, name))
    manifest = {
        "image": _stem(src),
        "width": grid.image_width,
        "height": grid.image_height,
        "patch_size": grid.patch_size,
        "overlap": grid.overlap,
        "patches": entries,
    }
    write_json(os.path.join(out, MANIFEST), manifest)
    summary.outputs.append(os.path.join(out, MANIFEST))
    summary.notes["grid"] = grid
    return summary


def stitch_path(src: str, out: str) -> LabelMap:
    manifest = read_json(os.path.join(src, MANIFEST))
    try:
        patches = [
            ((int(entry["x"]), int(entry["y"])), read_labelmap(os.path.join(src, entry["file"])).labels)
            for entry in manifest["patches"]
        ]
        width, height = int(manifest["width"]), int(manifest["height"])
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"manifest 格式错误: {exc}") from exc
    result = stitch(patches, width, height)
    write_labelmap(out, result)
    return result
