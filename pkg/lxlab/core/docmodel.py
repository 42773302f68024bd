#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
文档处理
坐标归一化、行号推导，以及 SER 的 BIO 编码/解码
"""

import logging
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from lxlab.core.numerics import IGNORE_INDEX
from lxlab.errors import ValidationError
from lxlab.models.document import SCORED_LABELS, Box, Document, EntitySpan, Word

logger = logging.getLogger(__name__)

OUTSIDE = "O"
BIO_LABELS = (OUTSIDE,) + tuple(f"{prefix}-{label}" for label in SCORED_LABELS for prefix in ("B", "I"))
LABEL_TO_ID: Dict[str, int] = {label: i for i, label in enumerate(BIO_LABELS)}
NUM_SER_LABELS = len(BIO_LABELS)

Label = Union[int, str]


def normalize_box(box_px: Sequence[float], page_w: int, page_h: int) -> Box:
    """
    页面像素坐标 → [0, 1000] 归一化坐标

    Args:
        box_px: (x0, y0, x1, y1) 像素坐标
        page_w: 页面宽（像素）
        page_h: 页面高（像素）

    Returns:
        归一化坐标框，每个分量为 clamp(⌊1000·v/边长⌋, 0, 1000)

    Raises:
        ValidationError: 页面尺寸非正或坐标框顺序颠倒
    """
    if page_w <= 0 or page_h <= 0:
        raise ValidationError(f"页面尺寸必须为正: {page_w}×{page_h}")
    x0, y0, x1, y1 = box_px
    if x0 > x1 or y0 > y1:
        raise ValidationError(f"坐标框顺序颠倒: {tuple(box_px)}")

    def scale(v, size):
        return int(min(max((1000 * v) // size, 0), 1000))

    return (scale(x0, page_w), scale(y0, page_h), scale(x1, page_w), scale(y1, page_h))


def derive_line_ids(boxes: Sequence[Sequence[float]]) -> List[int]:
    """
    没有行号时按垂直中心聚类推导行号

    按中心 y 排序，与当前行中心的中位数相差小于中位词高的一半则归入该行，
    否则另起一行。行号按行的从上到下顺序编号，返回值与输入顺序一致。
    """
    if not boxes:
        return []
    arr = np.asarray(boxes, dtype=np.float64)
    centers = (arr[:, 1] + arr[:, 3]) / 2.0
    threshold = float(np.median(arr[:, 3] - arr[:, 1])) / 2.0

    order = np.argsort(centers, kind="stable")
    line_ids = [0] * len(boxes)
    line = 0
    members = []
    for idx in order:
        if members:
            gap = centers[idx] - float(np.median(members))
            if gap > 0 and gap >= threshold:
                line += 1
                members = []
        members.append(centers[idx])
        line_ids[int(idx)] = line
    return line_ids


def _label_id(label: Label) -> int:
    if isinstance(label, str):
        if label not in LABEL_TO_ID:
            raise ValidationError(f"未知的 BIO 标签: {label}")
        return LABEL_TO_ID[label]
    return int(label)


def word_bio(doc: Document) -> List[int]:
    """词级 BIO 标签；OTHER 实体与不属于实体的词都是 O"""
    labels = [LABEL_TO_ID[OUTSIDE]] * len(doc.words)
    for ent in doc.scored_entities():
        labels[ent.first_word] = LABEL_TO_ID[f"B-{ent.label}"]
        for w in range(ent.first_word + 1, ent.last_word + 1):
            labels[w] = LABEL_TO_ID[f"I-{ent.label}"]
    return labels


def bio_encode(doc: Document, token_alignment: Sequence[int]) -> List[int]:
    """
    子词级 BIO 标签

    Args:
        doc: 文档
        token_alignment: 每个子词所属的词下标，特殊符号与填充为 -1

    Returns:
        标签 id 列表；实体首词的首子词为 B-X，其余为 I-X；-1 位置为 IGNORE_INDEX
    """
    per_word = word_bio(doc)
    labels: List[int] = []
    previous_word = -1
    for word_index in token_alignment:
        if word_index < 0:
            labels.append(IGNORE_INDEX)
            previous_word = -1
            continue
        tag = BIO_LABELS[per_word[word_index]]
        if tag.startswith("B-") and word_index == previous_word:
            tag = "I-" + tag[2:]
        labels.append(LABEL_TO_ID[tag])
        previous_word = word_index
    return labels


def word_labels(token_labels: Sequence[Label], token_alignment: Sequence[int], num_words: int) -> List[int]:
    """
    首子词规则：每个词取其第一个子词的标签

    被截断而没有子词的词记为 O
    """
    result: List[Optional[int]] = [None] * num_words
    for label, word_index in zip(token_labels, token_alignment):
        if 0 <= word_index < num_words and result[word_index] is None:
            result[word_index] = _label_id(label)
    return [LABEL_TO_ID[OUTSIDE] if r is None else r for r in result]


def bio_decode(labels: Sequence[Label], words: Optional[Sequence[Word]] = None) -> List[EntitySpan]:
    """
    把最长的 B/I 连续段合并为实体

    悬空的 I-X（前面是 O 或其他类别）开启新实体。

    Args:
        labels: 标签序列（字符串或 id），下标即词下标
        words: 可选，用于填充实体文本

    Returns:
        实体列表，id 按出现顺序从 0 编号
    """
    spans: List[EntitySpan] = []
    current: Optional[EntitySpan] = None
    for i, raw in enumerate(labels):
        if raw == IGNORE_INDEX:
            tag = OUTSIDE
        else:
            tag = BIO_LABELS[_label_id(raw)]
        if tag == OUTSIDE:
            current = None
            continue
        prefix, kind = tag.split("-", 1)
        if prefix == "I" and current is not None and current.label == kind:
            current.last_word = i
            continue
        current = EntitySpan(id=len(spans), first_word=i, last_word=i, label=kind)
        spans.append(current)

    if words is not None:
        for span in spans:
            span.text = " ".join(w.text for w in words[span.first_word:span.last_word + 1])
    return spans
