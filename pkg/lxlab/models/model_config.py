#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
编码器超参数
"""

from dataclasses import asdict, dataclass, replace
from typing import Any, Dict, Tuple

from lxlab.errors import ConfigError

MAX_SEQ_LEN = 512
COORD_BINS = 1001


@dataclass(frozen=True)
class ModelConfig:
    """
    多模态编码器配置

    文本流长度 max_text_len 含 <s> 与 </s>；序列总长为
    visual_grid[0]·visual_grid[1] + max_text_len，不超过 512

    vocab_size 是预设给出的下限，加载词表后由 fit_vocab 扩到实际词表大小。
    text_only 为纯文本基线：没有视觉位置、坐标嵌入与二维相对偏置，
    只保留 token、一维位置与段嵌入以及一维相对偏置。
    """
    layers: int = 2
    heads: int = 2
    hidden: int = 32
    ffn_dim: int = 64
    vocab_size: int = 512
    max_text_len: int = 96
    visual_grid: Tuple[int, int] = (2, 2)
    patch_size: int = 32
    coord_bins: int = COORD_BINS
    rel_1d: Tuple[int, int] = (32, 1)
    rel_2d: Tuple[int, int] = (16, 32)
    type_emb_dim: int = 8
    re_hidden: int = 32
    layer_norm_eps: float = 1e-12
    text_only: bool = False
    seed: int = 42

    def __post_init__(self):
        self.validate()

    def validate(self) -> 'ModelConfig':
        if self.layers < 0 or self.heads < 1 or self.hidden < 2:
            raise ConfigError(f"非法的层数/头数/隐藏维: {self.layers}/{self.heads}/{self.hidden}")
        if self.hidden % self.heads != 0:
            raise ConfigError(f"隐藏维 {self.hidden} 不能被头数 {self.heads} 整除")
        if self.max_text_len < 2:
            raise ConfigError("max_text_len 至少容纳 <s> 与 </s>")
        if self.num_visual + self.max_text_len > MAX_SEQ_LEN:
            raise ConfigError(
                f"序列长度 {self.num_visual}+{self.max_text_len} 超过 {MAX_SEQ_LEN}"
            )
        if self.coord_bins != COORD_BINS:
            raise ConfigError(f"coord_bins 固定为 {COORD_BINS}")
        for name, (k, s) in (("rel_1d", self.rel_1d), ("rel_2d", self.rel_2d)):
            if k < 0 or s < 1:
                raise ConfigError(f"{name} 需要 K ≥ 0 且 s ≥ 1")
        return self

    @property
    def head_dim(self) -> int:
        return self.hidden // self.heads

    @property
    def num_visual(self) -> int:
        if self.text_only:
            return 0
        return self.visual_grid[0] * self.visual_grid[1]

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size

    @property
    def raster_shape(self) -> Tuple[int, int]:
        """视觉输入栅格的 (高, 宽) 像素"""
        return (self.visual_grid[0] * self.patch_size, self.visual_grid[1] * self.patch_size)

    def seq_len(self, text_len: int) -> int:
        return self.num_visual + text_len

    @classmethod
    def preset(cls, name: str, **overrides) -> 'ModelConfig':
        """
        预设：TINY（可训练的测试尺寸）、BASE、LARGE

        Args:
            name: 预设名（不区分大小写）
            overrides: 覆盖字段
        """
        key = name.upper()
        if key not in PRESETS:
            raise ConfigError(f"未知模型预设: {name}，可选 {sorted(PRESETS)}")
        return replace(PRESETS[key], **overrides)

    def fit_vocab(self, size: int) -> 'ModelConfig':
        """词表比 vocab_size 大时扩到 size，否则原样返回"""
        if size > self.vocab_size:
            return replace(self, vocab_size=size)
        return self

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        for k in ('visual_grid', 'rel_1d', 'rel_2d'):
            data[k] = list(data[k])
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ModelConfig':
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        for k in ('visual_grid', 'rel_1d', 'rel_2d'):
            if k in known:
                known[k] = tuple(known[k])
        return cls(**known)


PRESETS: Dict[str, ModelConfig] = {
    'TINY': ModelConfig(),
    'BASE': ModelConfig(layers=12, heads=12, hidden=768, ffn_dim=3072, max_text_len=463,
                        visual_grid=(7, 7), type_emb_dim=128, re_hidden=384),
    'LARGE': ModelConfig(layers=24, heads=16, hidden=1024, ffn_dim=4096, max_text_len=463,
                         visual_grid=(7, 7), type_emb_dim=128, re_hidden=512),
}
