"""FastAPI主应用"""
from typing import Optional

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from prometheus_fastapi_instrumentator import Instrumentator

from dentobox import __version__
from dentobox.config_manager import get_config
from dentobox.errors import DentoboxError
from dentobox.models import AppConfig
from dentobox.monitoring import MonitoringMiddleware, logger
from dentobox.routes import create_routes


async def dentobox_error_handler(request: Request, exc: DentoboxError) -> JSONResponse:
    """业务异常 -> 对应的 HTTP 状态码"""
    logger.warning(
        "request_rejected",
        endpoint=request.url.path,
        error=str(exc),
        error_type=type(exc).__name__,
        status_code=exc.status_code,
    )
    return JSONResponse(status_code=exc.status_code, content={"detail": str(exc)})


def create_app(config: Optional[AppConfig] = None) -> FastAPI:
    """创建应用；config 为空时使用全局配置"""
    config = config or get_config()
    app = FastAPI(
        title="Dentobox API",
        description="牙齿标签图后处理、定向包围盒生成与评估服务",
        version=__version__,
    )
    app.state.config = config

    # 配置CORS
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_credentials=True,
        allow_methods=["*"],
        allow_headers=["*"],
    )

    # 添加监控中间件
    app.add_middleware(MonitoringMiddleware)

    # 配置Prometheus指标
    Instrumentator().instrument(app).expose(app)

    app.add_exception_handler(DentoboxError, dentobox_error_handler)

    create_routes(app)
    logger.info("application_created", port=config.server.port, max_upload_mb=config.server.max_upload_mb)
    return app


# 创建FastAPI应用
app = create_app()

if __name__ == "__main__":
    import uvicorn
    config = get_config()
    uvicorn.run(
        "dentobox.main:app",
        host=config.server.host,
        port=config.server.port,
        log_level=config.runtime.log_level.lower()
    )
