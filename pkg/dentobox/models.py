"""配置与枚举模型定义"""
from typing import Optional
from enum import Enum
from pydantic import BaseModel, Field, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class LabelFormat(str, Enum):
    """标签图文件格式"""
    PNG8 = "png8"
    PGM = "pgm"


class ResolveCase(str, Enum):
    """多余区域的三种处理情形"""
    I = "I"  # noqa: E741  仅邻接背景
    II = "II"  # 背景 + 单一标签
    III = "III"  # 两个及以上标签


class Averaging(str, Enum):
    """数据集级别的汇总方式"""
    LABEL_MEAN = "label_mean"
    PIXEL_POOLED = "pixel_pooled"


class ToothCategory(str, Enum):
    """牙齿类别：上/下颌 × 切牙/尖牙/前磨牙/磨牙"""
    UPPER_INCISORS = "upper_incisors"
    UPPER_CANINE = "upper_canine"
    UPPER_PREMOLARS = "upper_premolars"
    UPPER_MOLARS = "upper_molars"
    LOWER_INCISORS = "lower_incisors"
    LOWER_CANINE = "lower_canine"
    LOWER_PREMOLARS = "lower_premolars"
    LOWER_MOLARS = "lower_molars"

    @property
    def display_name(self) -> str:
        """报表中使用的名称，如 "Upper incisors" """
        return self.value.replace("_", " ").capitalize()


class PatchConfig(BaseModel):
    """切块配置"""
    size: int = Field(default=512, ge=1)
    overlap: int = Field(default=10, ge=0)

    @model_validator(mode="after")
    def _check_overlap(self):
        if self.overlap >= self.size:
            raise ValueError(f"overlap ({self.overlap}) 必须小于 size ({self.size})")
        return self


class LossConfig(BaseModel):
    """损失函数参数（focal loss 默认值取自其原始工作）"""
    focal_gamma: float = Field(default=2.0, ge=0.0)
    focal_alpha: float = Field(default=0.25, ge=0.0, le=1.0)
    dice_smooth: float = Field(default=1.0, gt=0.0)


class AttentionConfig(BaseModel):
    """注意力模块配置"""
    reduction: int = Field(default=2, ge=1)
    # 通道数小于该值时跳过 max-out 分支
    maxout_min_channels: int = Field(default=8, ge=1)


class EvaluationConfig(BaseModel):
    """评估配置"""
    averaging: Averaging = Averaging.LABEL_MEAN
    include_hbb: bool = False


class RuntimeConfig(BaseModel):
    """批处理运行配置"""
    jobs: int = Field(default=1, ge=1)
    log_level: str = "INFO"

    @field_validator("log_level")
    @classmethod
    def _upper_level(cls, value: str) -> str:
        value = value.upper()
        if value not in {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}:
            raise ValueError(f"未知日志级别: {value}")
        return value


class ServerConfig(BaseModel):
    """HTTP 服务配置"""
    host: str = "0.0.0.0"
    port: int = Field(default=8010, ge=1, le=65535)
    max_upload_mb: float = Field(default=32.0, gt=0)


class AppConfig(BaseModel):
    """应用配置模型"""
    patch: PatchConfig = Field(default_factory=PatchConfig)
    loss: LossConfig = Field(default_factory=LossConfig)
    attention: AttentionConfig = Field(default_factory=AttentionConfig)
    evaluation: EvaluationConfig = Field(default_factory=EvaluationConfig)
    runtime: RuntimeConfig = Field(default_factory=RuntimeConfig)
    server: ServerConfig = Field(default_factory=ServerConfig)


class EnvSettings(BaseSettings):
    """环境变量：DENTOBOX_LOG / DENTOBOX_CONFIG_FILE"""
    model_config = SettingsConfigDict(env_prefix="DENTOBOX_", extra="ignore")

    log: Optional[str] = None
    config_file: str = "config/config.yaml"
