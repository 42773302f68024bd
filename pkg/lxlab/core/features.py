#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
编码器输入构造
切分文档、加入 <s>/</s>、截断与填充，并把页面栅格切成图像块
"""

import logging
from typing import List, Optional, Sequence

import numpy as np
import torch
from PIL import Image

from lxlab.core.numerics import DTYPE
from lxlab.core.tokenizer import tokenize_document
from lxlab.errors import DimensionError
from lxlab.models.batch import DocAlignment, EncodedBatch
from lxlab.models.document import FULL_PAGE, Document
from lxlab.models.model_config import ModelConfig
from lxlab.models.vocab import UnigramVocab

logger = logging.getLogger(__name__)


def visual_boxes(config: ModelConfig) -> torch.Tensor:
    """各视觉块对应的页面区域（按行优先的网格），[V×4] long"""
    if config.text_only:
        return torch.zeros(0, 4, dtype=torch.long)
    rows, cols = config.visual_grid
    boxes = [
        (c * 1000 // cols, r * 1000 // rows, (c + 1) * 1000 // cols, (r + 1) * 1000 // rows)
        for r in range(rows) for c in range(cols)
    ]
    return torch.tensor(boxes, dtype=torch.long)


def raster_to_patches(raster: Optional[np.ndarray], config: ModelConfig) -> torch.Tensor:
    """
    栅格缩放到 (grid·patch) 像素后切块，像素值缩放到 [0, 1]

    Returns:
        [V×P] float64；栅格缺失时全零，纯文本模型 V = 0
    """
    height, width = config.raster_shape
    if raster is None or config.text_only:
        return torch.zeros(config.num_visual, config.patch_dim, dtype=DTYPE)
    img = Image.fromarray(np.asarray(raster, dtype=np.uint8), mode="L")
    if img.size != (width, height):
        img = img.resize((width, height), Image.Resampling.BILINEAR)
    pixels = np.asarray(img, dtype=np.float64) / 255.0
    rows, cols = config.visual_grid
    p = config.patch_size
    patches = pixels.reshape(rows, p, cols, p).transpose(0, 2, 1, 3).reshape(rows * cols, p * p)
    return torch.from_numpy(np.ascontiguousarray(patches))


def patches_from_rasters(rasters: Sequence[Optional[np.ndarray]], config: ModelConfig) -> torch.Tensor:
    """[B×V×P]"""
    return torch.stack([raster_to_patches(r, config) for r in rasters])


def encode_documents(docs: Sequence[Document], vocab: UnigramVocab, config: ModelConfig,
                     pad_to: Optional[int] = None,
                     rasters: Optional[Sequence[Optional[np.ndarray]]] = None) -> EncodedBatch:
    """
    把一批文档编码为编码器输入

    Args:
        docs: 文档列表
        vocab: 词表
        config: 模型配置（决定 max_text_len、网格与块大小）
        pad_to: 文本流填充长度；默认取本批最长
        rasters: 覆盖各文档的栅格（预训练目标修改过的副本）

    Returns:
        EncodedBatch，alignments 给出每个文本流位置对应的词与行
    """
    if vocab.size > config.vocab_size:
        logger.warning(f"词表大小 {vocab.size} 超过模型 vocab_size {config.vocab_size}")
    limit = config.max_text_len - 2

    streams = []
    alignments: List[DocAlignment] = []
    for doc in docs:
        tokens = tokenize_document(doc, vocab)
        truncated = len(tokens) > limit
        if truncated:
            logger.warning(f"文档 {doc.id} 有 {len(tokens)} 个子词，截断到 {limit}")
            tokens = tokens[:limit]
        ids = [vocab.bos_id] + [t.piece_id for t in tokens] + [vocab.eos_id]
        boxes = [FULL_PAGE] + [t.box for t in tokens] + [FULL_PAGE]
        token_words = [-1] + [t.word_index for t in tokens] + [-1]
        token_lines = [-1] + [t.line_id for t in tokens] + [-1]
        first = {}
        for pos, w in enumerate(token_words):
            if w >= 0 and w not in first:
                first[w] = pos
        streams.append((ids, boxes))
        alignments.append(DocAlignment(doc_id=doc.id, token_words=token_words, token_lines=token_lines,
                                       word_first_token=first, num_words=len(doc.words), truncated=truncated))

    longest = max((len(ids) for ids, _ in streams), default=2)
    text_len = max(pad_to or 0, longest)
    if text_len > config.max_text_len:
        raise DimensionError(f"pad_to={pad_to} 超过 max_text_len={config.max_text_len}")

    b = len(docs)
    input_ids = torch.full((b, text_len), vocab.pad_id, dtype=torch.long)
    boxes_t = torch.zeros((b, text_len, 4), dtype=torch.long)
    text_mask = torch.zeros((b, text_len), dtype=torch.bool)
    maskable = torch.zeros((b, text_len), dtype=torch.bool)
    for i, (ids, boxes) in enumerate(streams):
        n = len(ids)
        input_ids[i, :n] = torch.tensor(ids, dtype=torch.long)
        boxes_t[i, :n] = torch.tensor(boxes, dtype=torch.long)
        text_mask[i, :n] = True
        maskable[i, 1:n - 1] = input_ids[i, 1:n - 1] != vocab.unk_id
        pad = text_len - n
        alignments[i].token_words.extend([-1] * pad)
        alignments[i].token_lines.extend([-1] * pad)

    if rasters is None:
        rasters = [doc.raster for doc in docs]
    return EncodedBatch(
        input_ids=input_ids,
        boxes=boxes_t,
        patches=patches_from_rasters(rasters, config),
        visual_boxes=visual_boxes(config),
        text_mask=text_mask,
        maskable=maskable,
        has_raster=torch.tensor([r is not None for r in rasters], dtype=torch.bool),
        alignments=alignments,
    )
