"""配置管理模块"""
import os
from typing import Optional

import yaml
from pydantic import ValidationError

from dentobox.errors import ConfigError
from dentobox.models import AppConfig, EnvSettings
from dentobox.monitoring import logger


# 全局变量
app_config: Optional[AppConfig] = None


def load_config(config_file: Optional[str] = None) -> AppConfig:
    """加载配置文件；文件不存在时使用默认配置"""
    settings = EnvSettings()
    config_file = config_file or settings.config_file

    config_data: dict = {}
    if os.path.exists(config_file):
        try:
            with open(config_file, "r", encoding="utf-8") as f:
                config_data = yaml.safe_load(f) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"配置文件解析失败 {config_file}: {exc}") from exc
        if not isinstance(config_data, dict):
            raise ConfigError(f"配置文件顶层必须是映射: {config_file}")
    else:
        logger.info("config_file_missing_using_defaults", config_file=config_file)

    # 环境变量 DENTOBOX_LOG 优先于配置文件中的日志级别
    if settings.log:
        config_data.setdefault("runtime", {})
        config_data["runtime"]["log_level"] = settings.log

    try:
        return AppConfig(**config_data)
    except ValidationError as exc:
        raise ConfigError(f"配置无效 {config_file}: {exc}") from exc


def init_config(config_file: Optional[str] = None) -> AppConfig:
    """初始化配置"""
    global app_config
    app_config = load_config(config_file)
    return app_config


def get_config() -> AppConfig:
    """获取配置"""
    if app_config is None:
        return init_config()
    return app_config


def default_config_yaml() -> str:
    """生成默认配置的 YAML 文本，用于初始化 config.yaml"""
    return yaml.safe_dump(AppConfig().model_dump(mode="json"), allow_unicode=True, sort_keys=False)
