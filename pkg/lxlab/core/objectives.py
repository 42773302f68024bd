#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
预训练目标
多语言掩码视觉语言模型（MVLM）、文本-图像对齐（TIA）与文本-图像匹配（TIM）
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch import nn

from lxlab.core.encoder import LayoutEncoder
from lxlab.core.features import encode_documents, patches_from_rasters
from lxlab.core.numerics import DTYPE, IGNORE_INDEX, Dense, LayerNorm, cross_entropy, gelu, init_parameters
from lxlab.errors import ConfigError
from lxlab.models.batch import EncodedBatch, LossReport, PretrainBatch
from lxlab.models.document import Document
from lxlab.models.model_config import ModelConfig
from lxlab.models.vocab import UnigramVocab

logger = logging.getLogger(__name__)


@dataclass
class ObjectiveConfig:
    """掩码、遮盖与替换的比例"""
    mask_prob: float = 0.15
    mask_split: Tuple[float, float, float] = (0.8, 0.1, 0.1)
    cover_prob: float = 0.15
    swap_prob: float = 0.5

    def __post_init__(self):
        self.mask_split = tuple(float(v) for v in self.mask_split)
        if len(self.mask_split) != 3 or abs(sum(self.mask_split) - 1.0) > 1e-9:
            raise ConfigError(f"mask_split 必须是和为 1 的三元组: {self.mask_split}")

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> 'ObjectiveConfig':
        data = data or {}
        return cls(**{k: v for k, v in data.items() if k in cls.__dataclass_fields__})


@dataclass
class TiaResult:
    """单个文档的 TIA 结果"""
    raster: Optional[np.ndarray]
    labels: List[int]
    covered_lines: List[int] = field(default_factory=list)
    skipped: bool = False


def apply_mvlm(input_ids: torch.Tensor, maskable: torch.Tensor, vocab: UnigramVocab,
               rng: np.random.Generator, mask_prob: float = 0.15,
               split: Sequence[float] = (0.8, 0.1, 0.1)) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    选择文本子词做掩码：80% 换成 <mask>，10% 换成随机 id，10% 保持不变

    坐标框不受影响。每个位置的随机数总是抽取，选择结果只取决于种子与形状。

    Args:
        input_ids: [B×T] 文本流 id
        maskable: [B×T] 可被选中的位置（普通子词）
        vocab: 词表
        rng: numpy 随机数生成器

    Returns:
        (掩码后的 id, 目标)；目标在未选中位置为 IGNORE_INDEX
    """
    shape = tuple(input_ids.shape)
    select_draw = rng.random(shape)
    branch_draw = rng.random(shape)
    random_ids = rng.integers(len(vocab.special_ids), vocab.size, size=shape)

    selected = torch.from_numpy(select_draw < mask_prob) & maskable
    to_mask = selected & torch.from_numpy(branch_draw < split[0])
    to_random = selected & torch.from_numpy((branch_draw >= split[0]) & (branch_draw < split[0] + split[1]))

    corrupted = input_ids.clone()
    corrupted[to_mask] = vocab.mask_id
    corrupted[to_random] = torch.from_numpy(random_ids).long()[to_random]
    targets = torch.where(selected, input_ids, torch.full_like(input_ids, IGNORE_INDEX))
    return corrupted, targets


def _raster_window(box, shape) -> Tuple[int, int, int, int]:
    """归一化坐标框映射到栅格像素范围（向外取整）"""
    h, w = shape
    x0, y0, x1, y1 = box
    return (math.floor(x0 * w / 1000), math.floor(y0 * h / 1000),
            math.ceil(x1 * w / 1000), math.ceil(y1 * h / 1000))


def apply_tia(doc: Document, raster: Optional[np.ndarray], rng: np.random.Generator,
              token_lines: Sequence[int], cover_prob: float = 0.15) -> TiaResult:
    """
    随机选行并把这些行的词框区域像素置零；子词所在行被遮盖则标签为 1

    Args:
        doc: 文档（词的归一化坐标与行号）
        raster: 页面栅格，None 时跳过本目标
        token_lines: 文本流每个位置的行号，特殊符号与填充为 -1

    Returns:
        TiaResult；栅格缺失时 skipped=True 且所有标签为 IGNORE_INDEX
    """
    lines = sorted({w.line_id for w in doc.words})
    draws = rng.random(len(lines))
    if raster is None:
        return TiaResult(raster=None, labels=[IGNORE_INDEX] * len(token_lines), skipped=True)

    covered = [line for line, d in zip(lines, draws) if d < cover_prob]
    covered_set = set(covered)
    out = np.array(raster, dtype=np.uint8, copy=True)
    for word in doc.words:
        if word.line_id in covered_set:
            x0, y0, x1, y1 = _raster_window(word.box, out.shape)
            out[y0:y1, x0:x1] = 0
    labels = [IGNORE_INDEX if line < 0 else int(line in covered_set) for line in token_lines]
    return TiaResult(raster=out, labels=labels, covered_lines=covered)


def apply_tim(rasters: Sequence[Optional[np.ndarray]], rng: np.random.Generator,
              swap_prob: float = 0.5) -> Tuple[List[Optional[np.ndarray]], List[int]]:
    """
    以 swap_prob 选出要替换图像的样本，在被选子集上做错排

    没有栅格的样本既不被替换也不提供图像，标签恒为 1。只有一个样本被选中时，
    从批内另一个有栅格的样本取图；有栅格的样本不足两个时从不替换。

    Returns:
        (新的栅格列表, 标签)；标签 1 为原图，0 为被替换
    """
    n = len(rasters)
    draws = rng.random(n)
    result = list(rasters)
    labels = [1] * n
    eligible = [i for i in range(n) if rasters[i] is not None]
    if len(eligible) < 2:
        return result, labels

    swapped = [i for i in eligible if draws[i] < swap_prob]
    if len(swapped) == 1:
        i = swapped[0]
        others = [j for j in eligible if j != i]
        result[i] = rasters[others[int(rng.integers(len(others)))]]
    elif len(swapped) >= 2:
        # Sattolo：随机单圈置换，没有不动点
        perm = list(swapped)
        for k in range(len(perm) - 1, 0, -1):
            j = int(rng.integers(k))
            perm[k], perm[j] = perm[j], perm[k]
        for src, dst in zip(swapped, perm):
            result[src] = rasters[dst]
    for i in swapped:
        labels[i] = 0
    return result, labels


def build_pretrain_batch(docs: Sequence[Document], vocab: UnigramVocab, config: ModelConfig,
                         objectives: ObjectiveConfig, rng: np.random.Generator,
                         pad_to: Optional[int] = None) -> PretrainBatch:
    """
    依次执行 MVLM → TIA → TIM，图像块取自最终（遮盖、可能被替换）的栅格

    TIA 目标在 MVLM 选中的位置为 ignore；被替换图像的样本 TIA 标签全部为 1
    """
    encoded = encode_documents(docs, vocab, config, pad_to=pad_to)
    corrupted, mvlm_targets = apply_mvlm(encoded.input_ids, encoded.maskable, vocab, rng,
                                         objectives.mask_prob, objectives.mask_split)

    tia_results = [apply_tia(doc, doc.raster, rng, align.token_lines, objectives.cover_prob)
                   for doc, align in zip(docs, encoded.alignments)]
    rasters, tim_labels = apply_tim([r.raster for r in tia_results], rng, objectives.swap_prob)

    tia_targets = torch.tensor([r.labels for r in tia_results], dtype=torch.long)
    for i, label in enumerate(tim_labels):
        if label == 0:
            lines = torch.tensor(encoded.alignments[i].token_lines)
            tia_targets[i] = torch.where(lines >= 0, torch.ones_like(lines), torch.full_like(lines, IGNORE_INDEX))
    tia_targets[mvlm_targets != IGNORE_INDEX] = IGNORE_INDEX

    final = EncodedBatch(
        input_ids=corrupted,
        boxes=encoded.boxes,
        patches=patches_from_rasters(rasters, config),
        visual_boxes=encoded.visual_boxes,
        text_mask=encoded.text_mask,
        maskable=encoded.maskable,
        has_raster=torch.tensor([r is not None for r in rasters], dtype=torch.bool),
        alignments=encoded.alignments,
    )
    return PretrainBatch(
        encoded=final,
        mvlm_targets=mvlm_targets,
        tia_targets=tia_targets,
        tim_targets=torch.tensor(tim_labels, dtype=torch.long),
        covered_lines=[r.covered_lines for r in tia_results],
        tia_skipped=[r.skipped for r in tia_results],
    )


class PretrainHeads(nn.Module):
    """MVLM 词表投影（transform → gelu → LN → decoder）、TIA 与 TIM 的二分类层"""

    def __init__(self, config: ModelConfig):
        super().__init__()
        d = config.hidden
        self.mvlm_transform = Dense(d, d)
        self.mvlm_norm = LayerNorm(d, config.layer_norm_eps)
        self.mvlm_decoder = Dense(d, config.vocab_size)
        self.tia_classifier = Dense(d, 2)
        self.tim_classifier = Dense(d, 2)
        init_parameters(self, config.seed + 1)

    def mvlm_logits(self, text: torch.Tensor) -> torch.Tensor:
        return self.mvlm_decoder(self.mvlm_norm(gelu(self.mvlm_transform(text))))


def pretrain_loss(hidden: torch.Tensor, batch: PretrainBatch, heads: PretrainHeads) -> LossReport:
    """
    三个目标的损失与其和

    Args:
        hidden: 编码器输出 [B×S×d]
        batch: 预训练批
        heads: 预训练任务层

    Returns:
        LossReport；没有被掩码的位置时 MVLM 记为 0 并给出警告
    """
    text = LayoutEncoder.text_states(hidden, batch.encoded.num_visual)
    zero = torch.zeros((), dtype=DTYPE)

    mvlm_targets = batch.mvlm_targets.reshape(-1)
    if bool((mvlm_targets != IGNORE_INDEX).any()):
        logits = heads.mvlm_logits(text)
        mvlm = cross_entropy(logits.reshape(-1, logits.shape[-1]), mvlm_targets)
    else:
        logger.warning("本批没有被掩码的位置，MVLM 损失记为 0")
        mvlm = zero

    tia_targets = batch.tia_targets.reshape(-1)
    if bool((tia_targets != IGNORE_INDEX).any()):
        tia = cross_entropy(heads.tia_classifier(text).reshape(-1, 2), tia_targets)
    else:
        logger.debug("本批没有有效的 TIA 目标")
        tia = zero

    tim = cross_entropy(heads.tim_classifier(hidden[:, 0]), batch.tim_targets)
    return LossReport(mvlm=mvlm, tia=tia, tim=tim, total=mvlm + tia + tim)
