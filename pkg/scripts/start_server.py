#!/usr/bin/env python3
"""使用 uvicorn 启动 Dentobox HTTP 服务."""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

# 将项目根目录添加到 Python 路径中
SCRIPT_DIR = Path(__file__).parent.resolve()
PROJECT_DIR = SCRIPT_DIR.parent.resolve()
if str(PROJECT_DIR) not in sys.path:
    sys.path.insert(0, str(PROJECT_DIR))

import uvicorn  # noqa: E402

from dentobox.config_manager import init_config  # noqa: E402
from dentobox.monitoring import setup_logging  # noqa: E402


def parse_args() -> argparse.Namespace:
    parser = argparse.ArgumentParser(description="启动 Dentobox HTTP 服务")
    parser.add_argument(
        "--config-file",
        help="自定义配置文件路径（默认读取 config/config.yaml）",
    )
    parser.add_argument("--host", help="覆盖配置中的监听地址")
    parser.add_argument("--port", type=int, help="覆盖配置中的监听端口")
    parser.add_argument(
        "--reload",
        action="store_true",
        help="开发模式：代码变更时自动重载",
    )
    return parser.parse_args()


def main():
    args = parse_args()

    if args.config_file:
        os.environ["DENTOBOX_CONFIG_FILE"] = args.config_file

    config = init_config(args.config_file)
    setup_logging(config.runtime.log_level)
    host = args.host or config.server.host
    port = args.port or config.server.port

    print(f"[dentobox] 监听 http://{host}:{port}，指标见 /metrics")  # noqa: T201
    uvicorn.run(
        "dentobox.main:app",
        host=host,
        port=port,
        reload=args.reload,
        log_level=config.runtime.log_level.lower(),
    )


if __name__ == "__main__":
    main()
