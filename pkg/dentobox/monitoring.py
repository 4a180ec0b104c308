"""监控模块 - 结构化日志与 Prometheus 指标"""
import logging
import sys
import time
from contextlib import contextmanager

import structlog
from prometheus_client import Counter, Histogram
from fastapi import Request
from starlette.middleware.base import BaseHTTPMiddleware


# Prometheus指标
images_processed = Counter(
    'dentobox_images_processed_total',
    'Label maps processed',
    ['stage']  # stage: postprocess/obb/eval
)

stage_duration = Histogram(
    'dentobox_stage_duration_seconds',
    'Per-image processing time in seconds',
    ['stage']
)

regions_dissolved = Counter(
    'dentobox_regions_dissolved_total',
    'Duplicate-label regions dissolved by post-processing',
    ['case']  # case: I/II/III
)

request_count = Counter(
    'dentobox_http_requests_total',
    'Total HTTP requests',
    ['method', 'endpoint', 'status_code']
)


# 配置 structlog 使用标准 logging 处理器
# 日志输出到 stderr，stdout 留给 CLI 的结果输出
structlog.configure(
    processors=[
        structlog.stdlib.filter_by_level,
        structlog.stdlib.add_logger_name,
        structlog.stdlib.add_log_level,
        structlog.stdlib.PositionalArgumentsFormatter(),
        structlog.processors.TimeStamper(fmt="iso"),
        structlog.processors.StackInfoRenderer(),
        structlog.processors.format_exc_info,
        structlog.processors.UnicodeDecoder(),
        structlog.processors.JSONRenderer()  # JSON格式输出
    ],
    context_class=dict,
    logger_factory=structlog.stdlib.LoggerFactory(),
    wrapper_class=structlog.stdlib.BoundLogger,
    cache_logger_on_first_use=True,
)

# 结构化日志
logger = structlog.get_logger("dentobox")


def setup_logging(level: str = "INFO") -> None:
    """设置标准 logging 的输出与级别（structlog 的 filter_by_level 依赖它）"""
    root = logging.getLogger()
    if not root.handlers:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter("%(message)s"))
        root.addHandler(handler)
    root.setLevel(getattr(logging, level.upper(), logging.INFO))


@contextmanager
def track_stage(stage: str):
    """记录单张图像某一处理阶段的耗时与计数"""
    start_time = time.time()
    try:
        yield
    finally:
        stage_duration.labels(stage=stage).observe(time.time() - start_time)
        images_processed.labels(stage=stage).inc()


class MonitoringMiddleware(BaseHTTPMiddleware):
    """监控中间件"""

    async def dispatch(self, request: Request, call_next):
        """处理请求并记录指标"""
        start_time = time.time()
        method = request.method
        endpoint = request.url.path

        try:
            response = await call_next(request)
        except Exception as e:
            logger.error(
                "request_failed",
                method=method,
                endpoint=endpoint,
                error=str(e),
                duration=time.time() - start_time,
            )
            raise

        request_count.labels(
            method=method,
            endpoint=endpoint,
            status_code=response.status_code
        ).inc()
        logger.info(
            "request_completed",
            method=method,
            endpoint=endpoint,
            status_code=response.status_code,
            duration=time.time() - start_time,
            client_ip=request.client.host if request.client else None
        )
        return response
