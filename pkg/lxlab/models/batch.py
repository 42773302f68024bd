#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
批数据模型
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional

import torch


@dataclass
class DocAlignment:
    """单个文档的子词与词对齐关系（文本流下标，0 为 <s>）"""
    doc_id: str
    token_words: List[int]              # 文本流每个位置对应的词下标，特殊符号与填充为 -1
    token_lines: List[int]              # 同上，对应行号
    word_first_token: Dict[int, int]    # 词下标 → 首个子词的文本流下标
    num_words: int
    truncated: bool = False


@dataclass
class EncodedBatch:
    """
    编码器输入

    文本流 T 个位置（含 <s>、</s> 与填充），视觉 V 个位置；
    序列顺序为 <s>、V 个视觉位置、其余文本流，总长 S = V + T
    """
    input_ids: torch.Tensor        # [B×T] long
    boxes: torch.Tensor            # [B×T×4] long，归一化坐标
    patches: torch.Tensor          # [B×V×P] float64
    visual_boxes: torch.Tensor     # [V×4] long，各视觉块对应的页面区域
    text_mask: torch.Tensor        # [B×T] bool，真实文本位置（含特殊符号）
    maskable: torch.Tensor         # [B×T] bool，可被 MVLM 选中的普通子词
    has_raster: torch.Tensor       # [B] bool
    alignments: List[DocAlignment] = field(default_factory=list)

    @property
    def batch_size(self) -> int:
        return self.input_ids.shape[0]

    @property
    def text_len(self) -> int:
        return self.input_ids.shape[1]

    @property
    def num_visual(self) -> int:
        return self.patches.shape[1]

    @property
    def seq_len(self) -> int:
        return self.num_visual + self.text_len

    @property
    def segment_ids(self) -> torch.Tensor:
        """[B×S]：文本 0，视觉 1"""
        seg = torch.zeros(self.batch_size, self.seq_len, dtype=torch.long)
        seg[:, 1:1 + self.num_visual] = 1
        return seg

    @property
    def position_ids(self) -> torch.Tensor:
        """[B×S] 一维位置下标"""
        return torch.arange(self.seq_len, dtype=torch.long).unsqueeze(0).expand(self.batch_size, -1)

    @property
    def attention_mask(self) -> torch.Tensor:
        """[B×S] bool，True 为真实位置，填充为 False"""
        visual = torch.ones(self.batch_size, self.num_visual, dtype=torch.bool)
        return torch.cat([self.text_mask[:, :1], visual, self.text_mask[:, 1:]], dim=1)

    def text_to_seq(self, text_index: int) -> int:
        """文本流下标 → 序列下标"""
        return 0 if text_index == 0 else self.num_visual + text_index


@dataclass
class PretrainBatch:
    """预训练批：编码输入加三类目标"""
    encoded: EncodedBatch
    mvlm_targets: torch.Tensor      # [B×T]，原 id 或 ignore
    tia_targets: torch.Tensor       # [B×T]，0/1 或 ignore
    tim_targets: torch.Tensor       # [B]，1 为同一页，0 为被替换
    covered_lines: List[List[int]] = field(default_factory=list)
    tia_skipped: Optional[List[bool]] = None


@dataclass
class LossReport:
    """预训练损失，total 恒为三项之和"""
    mvlm: torch.Tensor
    tia: torch.Tensor
    tim: torch.Tensor
    total: torch.Tensor

    def to_dict(self) -> Dict[str, float]:
        return {
            'mvlm': float(self.mvlm),
            'tia': float(self.tia),
            'tim': float(self.tim),
            'total': float(self.total),
        }
