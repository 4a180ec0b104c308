"""注意力模块前向计算（cSE / sSE / P-scSE / 网格注意力门），仅 numpy，无反向传播。

特征图统一为 (C, H, W) 的 float64 数组。
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
from scipy import ndimage
from scipy.special import expit

from dentobox.errors import InvariantError, ShapeMismatchError
from dentobox.models import AttentionConfig


def as_tensor(data) -> np.ndarray:
    """校验并转换为 (C, H, W) 的有限浮点数组"""
    tensor = np.asarray(data, dtype=np.float64)
    if tensor.ndim != 3 or 0 in tensor.shape:
        raise ShapeMismatchError(f"特征图必须是非空 (C, H, W)，实际形状 {tensor.shape}")
    if not np.all(np.isfinite(tensor)):
        raise InvariantError("特征图含非有限值")
    return tensor


def _relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


# expit 在 |x| 较大时舍入到 0 或 1；门控值限制在开区间 (0, 1) 内
_GATE_LOW = np.finfo(np.float64).tiny
_GATE_HIGH = np.nextafter(1.0, 0.0)


def _gate(x) -> np.ndarray:
    return np.clip(expit(x), _GATE_LOW, _GATE_HIGH)



def _conv1x1(weights: np.ndarray, bias: np.ndarray, x: np.ndarray) -> np.ndarray:
    # (out, in) × (in, H, W) -> (out, H, W)
    return np.tensordot(weights, x, axes=([1], [0])) + bias[:, None, None]


@dataclass(frozen=True)
class SqueezeParams:
    """cSE 的降维/升维全连接权重与 sSE 的 1×1 卷积权重"""

    reduce_w: np.ndarray  # (C/r, C)
    reduce_b: np.ndarray  # (C/r,)
    expand_w: np.ndarray  # (C, C/r)
    expand_b: np.ndarray  # (C,)
    spatial_w: np.ndarray  # (C,)
    spatial_b: float
    reduction: int

    def __post_init__(self):
        channels = self.spatial_w.shape[0]
        if self.reduction < 1 or channels % self.reduction != 0:
            raise InvariantError(f"reduction={self.reduction} 必须整除通道数 {channels}")
        hidden = channels // self.reduction
        expected = {
            "reduce_w": (hidden, channels),
            "reduce_b": (hidden,),
            "expand_w": (channels, hidden),
            "expand_b": (channels,),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ShapeMismatchError(f"{name} 形状应为 {shape}，实际 {getattr(self, name).shape}")

    @property
    def channels(self) -> int:
        return int(self.spatial_w.shape[0])

    @classmethod
    def zeros(cls, channels: int, reduction: int = 2) -> "SqueezeParams":
        hidden = max(channels // reduction, 1)
        return cls(
            reduce_w=np.zeros((hidden, channels)),
            reduce_b=np.zeros(hidden),
            expand_w=np.zeros((channels, hidden)),
            expand_b=np.zeros(channels),
            spatial_w=np.zeros(channels),
            spatial_b=0.0,
            reduction=reduction,
        )

    @classmethod
    def random(cls, channels: int, reduction: int = 2, rng: Optional[np.random.Generator] = None,
               scale: float = 1.0) -> "SqueezeParams":
        rng = rng or np.random.default_rng()
        hidden = max(channels // reduction, 1)
        return cls(
            reduce_w=rng.normal(0.0, scale, (hidden, channels)),
            reduce_b=rng.normal(0.0, scale, hidden),
            expand_w=rng.normal(0.0, scale, (channels, hidden)),
            expand_b=rng.normal(0.0, scale, channels),
            spatial_w=rng.normal(0.0, scale, channels),
            spatial_b=float(rng.normal(0.0, scale)),
            reduction=reduction,
        )


@dataclass(frozen=True)
class GateParams:
    """加性注意力门：x、g 各自 1×1 投影到 inter 维，再经 psi 投影到 1 维"""

    w_x: np.ndarray  # (inter, Cx)
    b_x: np.ndarray  # (inter,)
    w_g: np.ndarray  # (inter, Cg)
    b_g: np.ndarray  # (inter,)
    psi_w: np.ndarray  # (inter,)
    psi_b: float

    def __post_init__(self):
        inter = self.psi_w.shape[0]
        if self.w_x.shape[0] != inter or self.w_g.shape[0] != inter:
            raise ShapeMismatchError(
                f"投影维度不一致: w_x {self.w_x.shape}, w_g {self.w_g.shape}, psi {self.psi_w.shape}"
            )
        if self.b_x.shape != (inter,) or self.b_g.shape != (inter,):
            raise ShapeMismatchError("偏置维度与 inter 不一致")

    @classmethod
    def zeros(cls, channels_x: int, channels_g: int, inter: int) -> "GateParams":
        return cls(
            w_x=np.zeros((inter, channels_x)),
            b_x=np.zeros(inter),
            w_g=np.zeros((inter, channels_g)),
            b_g=np.zeros(inter),
            psi_w=np.zeros(inter),
            psi_b=0.0,
        )

    @classmethod
    def random(cls, channels_x: int, channels_g: int, inter: int,
               rng: Optional[np.random.Generator] = None, scale: float = 1.0) -> "GateParams":
        rng = rng or np.random.default_rng()
        return cls(
            w_x=rng.normal(0.0, scale, (inter, channels_x)),
            b_x=rng.normal(0.0, scale, inter),
            w_g=rng.normal(0.0, scale, (inter, channels_g)),
            b_g=rng.normal(0.0, scale, inter),
            psi_w=rng.normal(0.0, scale, inter),
            psi_b=float(rng.normal(0.0, scale)),
        )


def _check_channels(u: np.ndarray, p: SqueezeParams) -> None:
    if u.shape[0] != p.channels:
        raise ShapeMismatchError(f"通道数不一致: 特征图 {u.shape[0]}, 参数 {p.channels}")


def channel_gate(u, p: SqueezeParams) -> np.ndarray:
    """cSE 的通道权重 s，形状 (C,)"""
    u = as_tensor(u)
    _check_channels(u, p)
    z = u.mean(axis=(1, 2))
    hidden = _relu(p.reduce_w @ z + p.reduce_b)
    return _gate(p.expand_w @ hidden + p.expand_b)


def spatial_gate(u, p: SqueezeParams) -> np.ndarray:
    """sSE 的空间权重 q，形状 (H, W)"""
    u = as_tensor(u)
    _check_channels(u, p)
    return _gate(np.tensordot(p.spatial_w, u, axes=([0], [0])) + p.spatial_b)


def cse_forward(u, p: SqueezeParams) -> np.ndarray:
    u = as_tensor(u)
    return u * channel_gate(u, p)[:, None, None]


def sse_forward(u, p: SqueezeParams) -> np.ndarray:
    u = as_tensor(u)
    return u * spatial_gate(u, p)[None, :, :]


def scse_forward(u, p: SqueezeParams) -> np.ndarray:
    """并联 scSE：cSE + sSE"""
    return cse_forward(u, p) + sse_forward(u, p)


def maxout_switch(channels: int, min_channels: int = AttentionConfig().maxout_min_channels) -> bool:
    """通道数较少时关闭 max-out 分支"""
    return channels >= min_channels


def pscse_forward(u, p: SqueezeParams, maxout_enabled: Optional[bool] = None) -> np.ndarray:
    """P-scSE：加法分支 a = cSE + sSE，max-out 分支 m = max(cSE, sSE)；开启时输出 a + m。

    maxout_enabled 为 None 时按通道数自动决定。
    """
    u = as_tensor(u)
    if maxout_enabled is None:
        maxout_enabled = maxout_switch(u.shape[0])
    c = cse_forward(u, p)
    s = sse_forward(u, p)
    added = c + s
    if not maxout_enabled:
        return added
    return added + np.maximum(c, s)


def resample_gating(g, size: Tuple[int, int]) -> np.ndarray:
    """把门控信号最近邻重采样到 x 的网格 (H, W)"""
    g = as_tensor(g)
    height, width = size
    if g.shape[1:] == (height, width):
        return g
    factors = (1.0, height / g.shape[1], width / g.shape[2])
    resized = ndimage.zoom(g, factors, order=0, grid_mode=True, mode="nearest")
    if resized.shape[1:] != (height, width):
        raise ShapeMismatchError(f"门控信号重采样失败: {resized.shape} -> {size}")
    return resized


def attention_gate_forward(x, g, p: GateParams) -> Tuple[np.ndarray, np.ndarray]:
    """α = sigmoid(psi(relu(W_x·x + W_g·g + b)))，gated = α·x；g 需已与 x 空间对齐"""
    x = as_tensor(x)
    g = as_tensor(g)
    if x.shape[1:] != g.shape[1:]:
        raise ShapeMismatchError(f"x 与 g 空间尺寸不一致: {x.shape[1:]} vs {g.shape[1:]}")
    if p.w_x.shape[1] != x.shape[0] or p.w_g.shape[1] != g.shape[0]:
        raise ShapeMismatchError(
            f"通道数与投影权重不一致: x {x.shape[0]}/{p.w_x.shape[1]}, g {g.shape[0]}/{p.w_g.shape[1]}"
        )
    joint = _relu(_conv1x1(p.w_x, p.b_x, x) + _conv1x1(p.w_g, p.b_g, g))
    alpha = _gate(np.tensordot(p.psi_w, joint, axes=([0], [0])) + p.psi_b)
    return alpha, x * alpha[None, :, :]


# ---------------------- 演示 ---------------------- #

def demo_fixture(seed: int = 0, cfg: Optional[AttentionConfig] = None):
    """固定随机种子的小型特征图与参数：x 为 8×16×16，g 为 16×8×8"""
    cfg = cfg or AttentionConfig()
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(8, 16, 16))
    g = rng.normal(size=(16, 8, 8))
    squeeze = SqueezeParams.random(8, cfg.reduction, rng=rng, scale=0.5)
    gate = GateParams.random(8, 16, 4, rng=rng, scale=0.25)
    return x, g, squeeze, gate


def attention_stats(alpha: np.ndarray) -> Dict[str, float]:
    alpha = np.asarray(alpha, dtype=np.float64)
    return {
        "min": float(alpha.min()),
        "max": float(alpha.max()),
        "mean": float(alpha.mean()),
        "std": float(alpha.std()),
    }


def run_demo(seed: int = 0, cfg: Optional[AttentionConfig] = None) -> Dict[str, object]:
    """对演示数据跑一遍 P-scSE 与注意力门，返回 α 统计"""
    cfg = cfg or AttentionConfig()
    x, g, squeeze, gate = demo_fixture(seed, cfg)
    enabled = maxout_switch(x.shape[0], cfg.maxout_min_channels)
    refined = pscse_forward(x, squeeze, maxout_enabled=enabled)
    alpha, gated = attention_gate_forward(refined, resample_gating(g, x.shape[1:]), gate)
    return {
        "seed": seed,
        "shape": list(x.shape),
        "maxout_enabled": enabled,
        "alpha": attention_stats(alpha),
        "gated_abs_mean": float(np.abs(gated).mean()),
    }
