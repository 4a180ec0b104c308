"""命令行入口：postprocess / obb / eval / demo-attention / patchify / stitch / serve

退出码：0 成功，2 输入/IO 错误，3 不变量或配置错误，4 文件配对失败。
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import List, Optional

from pydantic import ValidationError

from dentobox import __version__
from dentobox.attention import run_demo
from dentobox.batch import (
    evaluate_paths,
    obb_paths,
    patchify_path,
    postprocess_paths,
    stitch_path,
    write_report,
)
from dentobox.config_manager import init_config
from dentobox.errors import ConfigError, DentoboxError, InputError
from dentobox.models import AppConfig, Averaging
from dentobox.monitoring import logger, setup_logging

EXIT_OK = 0
EXIT_IO = 2


def _add_io_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("input", nargs="?", help="输入标签图文件或目录")
    parser.add_argument("output", nargs="?", help="输出文件或目录")
    parser.add_argument("--pred", help="输入标签图文件或目录（同 input）")
    parser.add_argument("--out", help="输出文件或目录（同 output）")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dentobox",
        description="牙齿标签图后处理、定向包围盒生成与评估工具",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config-file", help="自定义配置文件路径（默认读取 config/config.yaml）")
    parser.add_argument("--log-level", help="日志级别（覆盖 DENTOBOX_LOG 与配置文件）")
    parser.add_argument("--jobs", type=int, help="并行处理的图像数")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("postprocess", help="消除同一标签的多余区域")
    _add_io_args(p)

    p = sub.add_parser("obb", help="为每颗牙生成 OBB，输出 JSON")
    _add_io_args(p)
    p.add_argument("--include-hbb", action="store_true", default=None, help="同时输出水平包围盒")

    p = sub.add_parser("eval", help="评估预测标签图")
    p.add_argument("--pred", required=True, help="预测标签图目录或文件")
    p.add_argument("--gt", required=True, help="真值标签图目录或文件")
    p.add_argument("--out", required=True, help="报表输出目录")
    p.add_argument("--pred-obbs", help="预测 OBB JSON 目录（缺省时由标签图生成）")
    p.add_argument("--gt-obbs", help="真值 OBB JSON 目录（缺省时由标签图生成）")
    p.add_argument("--focal-gamma", type=float)
    p.add_argument("--focal-alpha", type=float)
    p.add_argument("--averaging", choices=[a.value for a in Averaging])

    p = sub.add_parser("demo-attention", help="在内置数据上运行注意力模块并打印 α 统计")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("patchify", help="把标签图切成固定大小的 patch")
    p.add_argument("input", help="输入标签图")
    p.add_argument("--out", required=True, help="patch 输出目录")
    p.add_argument("--patch-size", type=int)
    p.add_argument("--overlap", type=int)

    p = sub.add_parser("stitch", help="按 manifest.json 把 patch 拼回整图")
    p.add_argument("input", help="patch 目录")
    p.add_argument("--out", required=True, help="输出标签图文件")

    p = sub.add_parser("serve", help="启动 HTTP 服务")
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    return parser


def resolve_config(args: argparse.Namespace) -> AppConfig:
    """配置文件 + 环境变量，再叠加命令行参数"""
    config = init_config(args.config_file)
    data = config.model_dump()
    overrides = {
        ("runtime", "jobs"): args.jobs,
        ("runtime", "log_level"): args.log_level,
        ("patch", "size"): getattr(args, "patch_size", None),
        ("patch", "overlap"): getattr(args, "overlap", None),
        ("loss", "focal_gamma"): getattr(args, "focal_gamma", None),
        ("loss", "focal_alpha"): getattr(args, "focal_alpha", None),
        ("evaluation", "averaging"): getattr(args, "averaging", None),
        ("evaluation", "include_hbb"): getattr(args, "include_hbb", None),
        ("server", "host"): getattr(args, "host", None),
        ("server", "port"): getattr(args, "port", None),
    }
    for (section, key), value in overrides.items():
        if value is not None:
            data[section][key] = value
    try:
        return AppConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"参数无效: {exc}") from exc


def _io_paths(args: argparse.Namespace):
    src = args.input or args.pred
    out = args.output or args.out
    if not src or not out:
        raise InputError("需要同时给出输入与输出路径")
    return src, out


def cmd_postprocess(args: argparse.Namespace, config: AppConfig) -> int:
    src, out = _io_paths(args)
    summary = postprocess_paths(src, out, config.runtime.jobs)
    print(json.dumps({"command": "postprocess", "outputs": len(summary.outputs)}))
    return EXIT_OK


def cmd_obb(args: argparse.Namespace, config: AppConfig) -> int:
    src, out = _io_paths(args)
    summary = obb_paths(src, out, config.runtime.jobs, config.evaluation.include_hbb)
    print(json.dumps({"command": "obb", "outputs": len(summary.outputs)}))
    return EXIT_OK


def cmd_eval(args: argparse.Namespace, config: AppConfig) -> int:
    report = evaluate_paths(
        args.pred,
        args.gt,
        config,
        pred_obbs=args.pred_obbs,
        gt_obbs=args.gt_obbs,
        jobs=config.runtime.jobs,
    )
    write_report(report, args.out)
    print(json.dumps({
        "command": "eval",
        "images": report.n_images,
        "fp": report.missing.fp,
        "fn": report.missing.fn,
    }))
    return EXIT_OK


def cmd_demo_attention(args: argparse.Namespace, config: AppConfig) -> int:
    print(json.dumps(run_demo(args.seed, config.attention), indent=2))
    return EXIT_OK


def cmd_patchify(args: argparse.Namespace, config: AppConfig) -> int:
    summary = patchify_path(args.input, args.out, config.patch.size, config.patch.overlap)
    print(json.dumps({"command": "patchify", "patches": len(summary.notes["grid"])}))
    return EXIT_OK


def cmd_stitch(args: argparse.Namespace, config: AppConfig) -> int:
    result = stitch_path(args.input, args.out)
    print(json.dumps({"command": "stitch", "width": result.width, "height": result.height}))
    return EXIT_OK


def cmd_serve(args: argparse.Namespace, config: AppConfig) -> int:
    import uvicorn

    from dentobox.main import app

    app.state.config = config
    uvicorn.run(
        app,
        host=config.server.host,
        port=config.server.port,
        log_level=config.runtime.log_level.lower(),
    )
    return EXIT_OK


COMMANDS = {
    "postprocess": cmd_postprocess,
    "obb": cmd_obb,
    "eval": cmd_eval,
    "demo-attention": cmd_demo_attention,
    "patchify": cmd_patchify,
    "stitch": cmd_stitch,
    "serve": cmd_serve,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = resolve_config(args)
        setup_logging(config.runtime.log_level)
        logger.debug("command_started", command=args.command, cwd=os.getcwd())
        return COMMANDS[args.command](args, config)
    except DentoboxError as exc:
        logger.error("command_failed", command=args.command, error=str(exc), error_type=type(exc).__name__)
        print(f"错误: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        logger.error("command_io_failed", command=args.command, error=str(exc))
        print(f"错误: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
