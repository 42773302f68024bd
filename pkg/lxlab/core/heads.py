#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
微调任务层
SER：文本位置上的 7 类 BIO 分类；RE：实体对候选与双仿射键值分类器
"""

import logging
import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch import nn

from lxlab.core.docmodel import NUM_SER_LABELS, bio_decode, bio_encode, word_labels
from lxlab.core.encoder import LayoutEncoder
from lxlab.core.numerics import DTYPE, Dense, cross_entropy, gelu, init_parameters, matmul
from lxlab.models.batch import DocAlignment, EncodedBatch
from lxlab.models.document import ENTITY_LABELS, KEY_VALUE, Document, EntitySpan, RelationLink, Word
from lxlab.models.model_config import ModelConfig

logger = logging.getLogger(__name__)

NO_REL = 0
KV_REL = 1
LABEL_INDEX: Dict[str, int] = {label: i for i, label in enumerate(ENTITY_LABELS)}

Pair = Tuple[EntitySpan, EntitySpan]


class SerHead(nn.Module):
    """d → 7 的线性分类层，只作用于文本位置"""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.classifier = Dense(config.hidden, NUM_SER_LABELS)
        init_parameters(self, config.seed + 2)

    def forward(self, hidden: torch.Tensor, num_visual: int) -> torch.Tensor:
        """[B×S×d] → 文本流 logits [B×T×7]"""
        return self.classifier(LayoutEncoder.text_states(hidden, num_visual))

    @staticmethod
    def loss(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
        return cross_entropy(logits.reshape(-1, logits.shape[-1]), labels.reshape(-1))


def ser_labels(docs: Sequence[Document], batch: EncodedBatch) -> torch.Tensor:
    """[B×T] 子词级 BIO 标签，特殊符号与填充为 IGNORE_INDEX"""
    return torch.tensor([bio_encode(doc, align.token_words) for doc, align in zip(docs, batch.alignments)],
                        dtype=torch.long)


def ser_decode(logits: torch.Tensor, alignment: DocAlignment,
               words: Optional[Sequence[Word]] = None) -> List[EntitySpan]:
    """
    单个文档：逐位置 argmax，首子词规则归约为词标签后 BIO 解码

    Args:
        logits: [T×7]
        alignment: 文本流位置到词的对齐
    """
    predicted = logits.argmax(dim=-1).tolist()
    labels = word_labels(predicted, alignment.token_words, alignment.num_words)
    return bio_decode(labels, words)


@torch.no_grad()
def ser_predict(hidden: torch.Tensor, batch: EncodedBatch, head: SerHead,
                docs: Optional[Sequence[Document]] = None) -> List[List[EntitySpan]]:
    """对一批文档预测实体（F_SER）"""
    logits = head(hidden, batch.num_visual)
    return [ser_decode(logits[i], align, docs[i].words if docs else None)
            for i, align in enumerate(batch.alignments)]


def re_candidates(entities: Sequence[EntitySpan]) -> List[Pair]:
    """所有有序实体对 (h, t)，h ≠ t，共 n(n−1) 个"""
    return [(h, t) for i, h in enumerate(entities) for j, t in enumerate(entities) if i != j]


def re_labels(pairs: Sequence[Pair], links: Sequence[RelationLink]) -> torch.Tensor:
    """有向键值关系存在时为 1"""
    gold = {(l.head, l.tail) for l in links}
    return torch.tensor([KV_REL if (h.id, t.id) in gold else NO_REL for h, t in pairs], dtype=torch.long)


def subsample_negatives(pairs: List[Pair], labels: torch.Tensor, ratio: Optional[float],
                        rng: np.random.Generator) -> Tuple[List[Pair], torch.Tensor]:
    """
    负样本下采样：保留全部正样本与至多 ⌈ratio·正样本数⌉ 个负样本

    ratio 为 None 时原样返回
    """
    if ratio is None or not pairs:
        return pairs, labels
    positive = [i for i, y in enumerate(labels.tolist()) if y == KV_REL]
    negative = [i for i, y in enumerate(labels.tolist()) if y != KV_REL]
    keep_neg = min(len(negative), int(math.ceil(ratio * max(len(positive), 1))))
    chosen = sorted(positive + [negative[i] for i in rng.permutation(len(negative))[:keep_neg]])
    return [pairs[i] for i in chosen], labels[chosen]


class ReHead(nn.Module):
    """
    双仿射关系分类器

    实体表示为 [首子词隐状态; 类型嵌入]，分别经 head/tail FFN 得到 h、t，
    logits_c = hᵀ U[:, c, :] t + V_c·[h; t] + b_c，c ∈ {NO_REL, KEY_VALUE}
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        d, e_t, h = config.hidden, config.type_emb_dim, config.re_hidden
        self.re_hidden = h
        self.type_embeddings = nn.Parameter(torch.zeros(len(ENTITY_LABELS), e_t, dtype=DTYPE))
        self.head_ffn = Dense(d + e_t, h)
        self.tail_ffn = Dense(d + e_t, h)
        self.bilinear = nn.Parameter(torch.zeros(h, 2, h, dtype=DTYPE))
        self.linear = Dense(2 * h, 2)
        init_parameters(self, config.seed + 3)

    def project(self, states: torch.Tensor, labels: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """实体表示 → (head 投影, tail 投影)，各 [E×h']"""
        reps = torch.cat([states, self.type_embeddings[labels]], dim=-1)
        return gelu(self.head_ffn(reps)), gelu(self.tail_ffn(reps))

    def score(self, h: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        """[N×h'] × [N×h'] → [N×2]"""
        n, dim = h.shape
        hu = matmul(h, self.bilinear.reshape(dim, 2 * dim)).reshape(n, 2, dim)
        bilinear = (hu * t.unsqueeze(1)).sum(dim=-1)
        return bilinear + self.linear(torch.cat([h, t], dim=-1))

    def forward(self, states: torch.Tensor, labels: torch.Tensor, pair_index: torch.Tensor) -> torch.Tensor:
        """
        Args:
            states: [E×d] 实体首子词隐状态
            labels: [E] 实体类型下标
            pair_index: [N×2] (head, tail) 在 states 中的下标

        Returns:
            [N×2] logits
        """
        heads, tails = self.project(states, labels)
        return self.score(heads[pair_index[:, 0]], tails[pair_index[:, 1]])

    @staticmethod
    def loss(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
        return cross_entropy(logits, labels)


def entity_positions(entities: Sequence[EntitySpan], alignment: DocAlignment,
                     num_visual: int) -> Dict[int, int]:
    """实体 id → 首子词的序列下标；首词被截断的实体不在结果中"""
    positions = {}
    for ent in entities:
        text_index = alignment.word_first_token.get(ent.first_word)
        if text_index is None:
            logger.debug(f"文档 {alignment.doc_id} 的实体 {ent.id} 首词被截断，不参与关系打分")
            continue
        positions[ent.id] = 0 if text_index == 0 else num_visual + text_index
    return positions


def re_score(hidden: torch.Tensor, pairs: Sequence[Pair], head: ReHead,
             positions: Dict[int, int]) -> torch.Tensor:
    """
    单个文档的实体对打分

    Args:
        hidden: [S×d] 单个文档的编码器输出
        pairs: 实体对（两端都必须在 positions 中）
        positions: 实体 id → 序列下标

    Returns:
        [N×2] logits
    """
    if not pairs:
        return torch.zeros(0, 2, dtype=DTYPE)
    entities: Dict[int, EntitySpan] = {}
    for h, t in pairs:
        entities.setdefault(h.id, h)
        entities.setdefault(t.id, t)
    order = list(entities)
    slot = {ent_id: i for i, ent_id in enumerate(order)}
    states = hidden[torch.tensor([positions[e] for e in order], dtype=torch.long)]
    labels = torch.tensor([LABEL_INDEX[entities[e].label] for e in order], dtype=torch.long)
    pair_index = torch.tensor([[slot[h.id], slot[t.id]] for h, t in pairs], dtype=torch.long)
    return head(states, labels, pair_index)


def re_decode(logits: torch.Tensor, pairs: Sequence[Pair]) -> List[RelationLink]:
    """argmax 为 KEY_VALUE 的实体对输出为关系"""
    if not pairs:
        return []
    predicted = logits.argmax(dim=-1).tolist()
    return [RelationLink(head=h.id, tail=t.id, label=KEY_VALUE)
            for (h, t), c in zip(pairs, predicted) if c == KV_REL]


def scorable_pairs(entities: Sequence[EntitySpan], positions: Dict[int, int]) -> List[Pair]:
    return re_candidates([e for e in entities if e.id in positions])


@torch.no_grad()
def re_predict(hidden: torch.Tensor, entities: Sequence[EntitySpan], head: ReHead,
               alignment: DocAlignment, num_visual: int) -> List[RelationLink]:
    """
    单个文档的关系预测（F_RE），实体由调用方给出

    Args:
        hidden: [S×d]
        entities: 实体集合（训练与评估时为标注实体）
    """
    positions = entity_positions(entities, alignment, num_visual)
    pairs = scorable_pairs(entities, positions)
    return re_decode(re_score(hidden, pairs, head, positions), pairs)
