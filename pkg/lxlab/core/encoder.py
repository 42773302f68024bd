#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
多模态编码器

文本、版式与图像块三种输入拼成一个序列：文本位置为 token 嵌入，视觉位置为
图像块的线性投影，两者都加上一维位置嵌入、段嵌入和六路坐标嵌入
（x0、y0、x1、y1、宽、高）。之后是带空间相对位置偏置的 post-LN Transformer。
"""

import logging
import math
from typing import Optional, Tuple, Union

import torch
from torch import nn

from lxlab.core.numerics import (DTYPE, MASK_VALUE, Dense, LayerNorm, check_finite,
                                 gelu, init_parameters, matmul, softmax)
from lxlab.errors import CoordinateRangeError, DimensionError, NumericError
from lxlab.models.batch import EncodedBatch
from lxlab.models.model_config import MAX_SEQ_LEN, ModelConfig

logger = logging.getLogger(__name__)


def relative_bucket(delta: Union[int, torch.Tensor], num_buckets: int, width: int):
    """
    截断线性分桶：clamp(⌊delta/width⌋, -K, K) + K，结果在 [0, 2K]

    Args:
        delta: 相对距离（整数或 long 张量）
        num_buckets: 单侧桶数 K
        width: 桶宽 s
    """
    if isinstance(delta, torch.Tensor):
        return torch.div(delta, width, rounding_mode='floor').clamp(-num_buckets, num_buckets) + num_buckets
    return max(-num_buckets, min(num_buckets, math.floor(delta / width))) + num_buckets


def spatial_attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor,
                      bias_1d: Optional[torch.Tensor] = None,
                      bias_x: Optional[torch.Tensor] = None,
                      bias_y: Optional[torch.Tensor] = None,
                      mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    """
    带空间偏置的缩放点积注意力

    Args:
        q, k, v: [B×H×S×d_h]
        bias_1d, bias_x, bias_y: [B×H×S×S] 已按相对桶取出的偏置，None 视为 0
        mask: [B×S] bool，True 为可被注意的位置

    Returns:
        上下文 [B×H×S×d_h]
    """
    if q.shape != k.shape or k.shape != v.shape or q.dim() != 4:
        raise DimensionError(f"q/k/v 形状必须一致且为四维: {tuple(q.shape)} {tuple(k.shape)} {tuple(v.shape)}")
    logits = matmul(q, k.transpose(-1, -2)) / math.sqrt(q.shape[-1])
    for bias in (bias_1d, bias_x, bias_y):
        if bias is not None:
            logits = logits + bias
    if mask is not None:
        additive = torch.zeros(mask.shape, dtype=logits.dtype).masked_fill(~mask, MASK_VALUE)
        logits = logits + additive[:, None, None, :]
    return matmul(softmax(logits, axis=-1), v)


class EncoderLayer(nn.Module):
    """注意力 + 残差 + LN，FFN(GELU) + 残差 + LN"""

    def __init__(self, config: ModelConfig):
        super().__init__()
        d = config.hidden
        self.heads = config.heads
        self.query = Dense(d, d)
        self.key = Dense(d, d)
        self.value = Dense(d, d)
        self.output = Dense(d, d)
        self.attention_norm = LayerNorm(d, config.layer_norm_eps)
        self.ffn_in = Dense(d, config.ffn_dim)
        self.ffn_out = Dense(config.ffn_dim, d)
        self.ffn_norm = LayerNorm(d, config.layer_norm_eps)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        b, s, d = x.shape
        return x.reshape(b, s, self.heads, d // self.heads).transpose(1, 2)

    def forward(self, x: torch.Tensor, biases: Tuple[torch.Tensor, ...], mask: torch.Tensor) -> torch.Tensor:
        b, s, d = x.shape
        context = spatial_attention(self._split(self.query(x)), self._split(self.key(x)),
                                    self._split(self.value(x)), *biases, mask=mask)
        context = context.transpose(1, 2).reshape(b, s, d)
        h = self.attention_norm(x + self.output(context))
        return self.ffn_norm(h + self.ffn_out(gelu(self.ffn_in(h))))


class LayoutEncoder(nn.Module):
    """
    多模态编码器

    序列顺序：<s>、H_v·W_v 个视觉位置、其余文本流（token、</s>、填充）。
    text_only 时没有视觉位置，也不建坐标嵌入、图像块投影与二维相对偏置。
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        d = config.hidden

        def table(rows: int, cols: int) -> nn.Parameter:
            return nn.Parameter(torch.zeros(rows, cols, dtype=DTYPE))

        self.word_embeddings = table(config.vocab_size, d)
        self.position_embeddings = table(MAX_SEQ_LEN, d)
        self.segment_embeddings = table(2, d)
        k1, _ = config.rel_1d
        k2, _ = config.rel_2d
        if not config.text_only:
            self.x_embeddings = table(config.coord_bins, d)
            self.y_embeddings = table(config.coord_bins, d)
            self.w_embeddings = table(config.coord_bins, d)
            self.h_embeddings = table(config.coord_bins, d)
            self.patch_projection = Dense(config.patch_dim, d)
        self.rel_1d_bias = table(config.heads, 2 * k1 + 1)
        if not config.text_only:
            self.rel_x_bias = table(config.heads, 2 * k2 + 1)
            self.rel_y_bias = table(config.heads, 2 * k2 + 1)

        self.layers = nn.ModuleList(EncoderLayer(config) for _ in range(config.layers))
        init_parameters(self, config.seed)

    def sequence_boxes(self, batch: EncodedBatch) -> torch.Tensor:
        """[B×S×4]：<s>、视觉块区域、其余文本位置的坐标框"""
        visual = batch.visual_boxes.unsqueeze(0).expand(batch.batch_size, -1, -1)
        return torch.cat([batch.boxes[:, :1], visual, batch.boxes[:, 1:]], dim=1)

    def _validate(self, batch: EncodedBatch, boxes: torch.Tensor) -> None:
        cfg = self.config
        if batch.num_visual != cfg.num_visual or batch.patches.shape[-1] != cfg.patch_dim:
            raise DimensionError(
                f"视觉输入形状 {tuple(batch.patches.shape)} 与配置 V={cfg.num_visual}, P={cfg.patch_dim} 不一致"
            )
        if batch.seq_len > MAX_SEQ_LEN:
            raise DimensionError(f"序列长度 {batch.seq_len} 超过 {MAX_SEQ_LEN}")
        ids = batch.input_ids
        if ids.numel() and (int(ids.max()) >= cfg.vocab_size or int(ids.min()) < 0):
            raise DimensionError(f"token id 超出词表大小 {cfg.vocab_size}")
        if bool((boxes < 0).any()) or bool((boxes > 1000).any()):
            raise CoordinateRangeError("坐标必须在 [0, 1000] 内")
        if bool((boxes[..., 2] < boxes[..., 0]).any()) or bool((boxes[..., 3] < boxes[..., 1]).any()):
            raise CoordinateRangeError("坐标框顺序颠倒 (x1 < x0 或 y1 < y0)")

    def layout_embeddings(self, boxes: torch.Tensor) -> torch.Tensor:
        """六路坐标查表之和"""
        x0, y0, x1, y1 = boxes.unbind(-1)
        return (self.x_embeddings[x0] + self.y_embeddings[y0]
                + self.x_embeddings[x1] + self.y_embeddings[y1]
                + self.w_embeddings[x1 - x0] + self.h_embeddings[y1 - y0])

    def embed(self, batch: EncodedBatch) -> torch.Tensor:
        """
        输入嵌入 [B×(V+T)×d]

        Raises:
            CoordinateRangeError: 坐标超出 [0, 1000]
            DimensionError: 形状与配置不一致
        """
        boxes = self.sequence_boxes(batch)
        self._validate(batch, boxes)

        text = self.word_embeddings[batch.input_ids]
        positions = self.position_embeddings[batch.position_ids]
        segments = self.segment_embeddings[batch.segment_ids]
        if self.config.text_only:
            return text + positions + segments
        visual = self.patch_projection(batch.patches)
        content = torch.cat([text[:, :1], visual, text[:, 1:]], dim=1)
        return content + positions + segments + self.layout_embeddings(boxes)

    def relative_biases(self, batch: EncodedBatch) -> Tuple[torch.Tensor, Optional[torch.Tensor],
                                                           Optional[torch.Tensor]]:
        """按相对桶取出的三组偏置，各 [B×H×S×S]；text_only 时二维偏置为 None"""
        (k1, s1), (k2, s2) = self.config.rel_1d, self.config.rel_2d

        def gather(tbl: torch.Tensor, coord: torch.Tensor, k: int, s: int) -> torch.Tensor:
            delta = coord[:, None, :] - coord[:, :, None]      # [B×S×S]，j − i
            return tbl[:, relative_bucket(delta, k, s)].permute(1, 0, 2, 3)

        bias_1d = gather(self.rel_1d_bias, batch.position_ids, k1, s1)
        if self.config.text_only:
            return bias_1d, None, None
        boxes = self.sequence_boxes(batch)
        cx = torch.div(boxes[..., 0] + boxes[..., 2], 2, rounding_mode='floor')
        cy = torch.div(boxes[..., 1] + boxes[..., 3], 2, rounding_mode='floor')
        return (bias_1d,
                gather(self.rel_x_bias, cx, k2, s2),
                gather(self.rel_y_bias, cy, k2, s2))

    def encode(self, batch: EncodedBatch) -> torch.Tensor:
        """
        隐状态 [B×S×d]

        Raises:
            NumericError: 某层出现 NaN/Inf，where 中带层号
        """
        x = self.embed(batch)
        if not self.layers:
            return x
        biases = self.relative_biases(batch)
        mask = batch.attention_mask
        for i, layer in enumerate(self.layers):
            try:
                x = check_finite(layer(x, biases, mask), f"layer={i}")
            except NumericError as e:
                raise NumericError(f"编码器第 {i} 层数值异常: {e}", where=f"layer={i}") from e
        return x

    def forward(self, batch: EncodedBatch) -> torch.Tensor:
        return self.encode(batch)

    @staticmethod
    def text_states(hidden: torch.Tensor, num_visual: int) -> torch.Tensor:
        """从 [B×S×d] 取出文本流位置 [B×T×d]（<s> 在前）"""
        return torch.cat([hidden[:, :1], hidden[:, 1 + num_visual:]], dim=1)
