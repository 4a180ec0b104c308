"""路由处理模块"""
import os
from typing import Optional

from fastapi import FastAPI, File, Form, HTTPException, Query, Request, UploadFile
from fastapi.responses import Response
from starlette.concurrency import run_in_threadpool

from dentobox import __version__
from dentobox.batch import obb_document
from dentobox.labelmap import LabelMap, dump_instances, extract_instances, format_from_path, load_labelmap, save_labelmap
from dentobox.metrics import evaluate, summary_document
from dentobox.models import AppConfig, LabelFormat
from dentobox.monitoring import logger, track_stage
from dentobox.obb import generate_obbs, obbs_by_label
from dentobox.postprocess import postprocess_with_log

MEDIA_TYPES = {
    LabelFormat.PNG8: "image/png",
    LabelFormat.PGM: "image/x-portable-graymap",
}


def _config(request: Request) -> AppConfig:
    return request.app.state.config


async def _read_labelmap(request: Request, upload: UploadFile) -> LabelMap:
    """读取上传文件；超过 server.max_upload_mb 返回 413"""
    limit = int(_config(request).server.max_upload_mb * 1024 * 1024)
    data = await upload.read(limit + 1)
    if len(data) > limit:
        logger.warning("upload_too_large", filename=upload.filename, limit_bytes=limit)
        raise HTTPException(status_code=413, detail=f"上传文件超过 {limit} 字节")
    fmt = format_from_path(upload.filename or "upload.png")
    return await run_in_threadpool(load_labelmap, data, fmt)


def _image_id(upload: UploadFile, image_id: Optional[str]) -> str:
    if image_id:
        return image_id
    return os.path.splitext(os.path.basename(upload.filename or "image"))[0]


def create_routes(app: FastAPI):
    """创建路由"""

    @app.get("/health")
    async def health_check():
        """健康检查端点"""
        return {"status": "healthy", "service": "dentobox", "version": __version__}

    @app.post("/v1/instances")
    async def instances(request: Request, file: UploadFile = File(...)):
        """连通域实例列表"""
        label_map = await _read_labelmap(request, file)
        found = await run_in_threadpool(extract_instances, label_map)
        return {"image": _image_id(file, None), "instances": dump_instances(found)}

    @app.post("/v1/postprocess")
    async def postprocess_map(
        request: Request,
        file: UploadFile = File(...),
        format: Optional[str] = Query(default=None, pattern="^(png|pgm)$"),
    ):
        """后处理；指定 format 时直接返回栅格字节"""
        label_map = await _read_labelmap(request, file)
        with track_stage("postprocess"):
            result, changes = await run_in_threadpool(postprocess_with_log, label_map)
        if format is not None:
            fmt = LabelFormat.PNG8 if format == "png" else LabelFormat.PGM
            return Response(content=save_labelmap(result, fmt), media_type=MEDIA_TYPES[fmt])
        return {
            "image": _image_id(file, None),
            "changes": [c.to_dict() for c in changes],
            "labels": result.labels_present(),
        }

    @app.post("/v1/obb")
    async def obb(
        request: Request,
        file: UploadFile = File(...),
        image_id: Optional[str] = Form(default=None),
        include_hbb: Optional[bool] = Query(default=None),
    ):
        """逐颗牙的 OBB 文档"""
        label_map = await _read_labelmap(request, file)
        if include_hbb is None:
            include_hbb = _config(request).evaluation.include_hbb
        with track_stage("obb"):
            document, _ = await run_in_threadpool(obb_document, _image_id(file, image_id), label_map, include_hbb)
        return document

    @app.post("/v1/evaluate")
    async def evaluate_pair(
        request: Request,
        pred: UploadFile = File(...),
        gt: UploadFile = File(...),
    ):
        """单对预测/真值的评估汇总"""
        config = _config(request)
        pred_map = await _read_labelmap(request, pred)
        gt_map = await _read_labelmap(request, gt)

        def run():
            pred_obbs, _ = generate_obbs(pred_map)
            gt_obbs, _ = generate_obbs(gt_map)
            return evaluate(
                pred_map,
                gt_map,
                obbs_by_label(pred_obbs),
                obbs_by_label(gt_obbs),
                config.loss,
                config.evaluation.averaging,
            )

        with track_stage("eval"):
            report = await run_in_threadpool(run)
        return summary_document(report)
