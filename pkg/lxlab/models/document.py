#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
文档数据模型
定义单页文档、词、语义实体和键值关系
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from lxlab.errors import SchemaError

Box = Tuple[int, int, int, int]

# 语义实体标签集合 C
HEADER = "HEADER"
QUESTION = "QUESTION"
ANSWER = "ANSWER"
OTHER = "OTHER"
ENTITY_LABELS = (HEADER, QUESTION, ANSWER, OTHER)
# SER 只对这三类打 B/I 标签并计分
SCORED_LABELS = (HEADER, QUESTION, ANSWER)

KEY_VALUE = "KEY_VALUE"

FULL_PAGE: Box = (0, 0, 1000, 1000)


def check_box(box, doc_id: Optional[str] = None, field_name: str = "box", limit: Optional[int] = 1000) -> Box:
    """校验坐标框顺序（以及可选的上界）"""
    if box is None or len(box) != 4:
        raise SchemaError("坐标框必须是 4 个整数", field=field_name, doc_id=doc_id)
    x0, y0, x1, y1 = (int(v) for v in box)
    if x0 > x1 or y0 > y1:
        raise SchemaError(f"坐标框顺序颠倒: {box}", field=field_name, doc_id=doc_id)
    if min(x0, y0) < 0 or (limit is not None and max(x1, y1) > limit):
        raise SchemaError(f"坐标超出范围: {box}", field=field_name, doc_id=doc_id)
    return (x0, y0, x1, y1)


@dataclass
class Word:
    """词：文本、归一化坐标框 [0,1000]、行号"""
    text: str
    box: Box
    line_id: int = 0
    pixel_box: Optional[Box] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            'text': self.text,
            'box': list(self.box),
            'line_id': self.line_id,
            'pixel_box': list(self.pixel_box) if self.pixel_box else None,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'Word':
        return cls(
            text=data['text'],
            box=tuple(data['box']),
            line_id=int(data.get('line_id', 0)),
            pixel_box=tuple(data['pixel_box']) if data.get('pixel_box') else None,
        )


@dataclass
class EntitySpan:
    """语义实体：闭区间词下标 [first_word, last_word] 与标签"""
    id: int
    first_word: int
    last_word: int
    label: str
    text: str = ""
    box: Optional[Box] = None

    @property
    def key(self) -> Tuple[int, int, str]:
        """精确匹配用的 (first_word, last_word, label)"""
        return (self.first_word, self.last_word, self.label)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'id': self.id,
            'first_word': self.first_word,
            'last_word': self.last_word,
            'label': self.label,
            'text': self.text,
            'box': list(self.box) if self.box else None,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'EntitySpan':
        return cls(
            id=int(data['id']),
            first_word=int(data['first_word']),
            last_word=int(data['last_word']),
            label=data['label'],
            text=data.get('text', ''),
            box=tuple(data['box']) if data.get('box') else None,
        )


@dataclass(frozen=True)
class RelationLink:
    """有向键值关系 (head, tail, label)"""
    head: int
    tail: int
    label: str = KEY_VALUE

    def to_dict(self) -> Dict[str, Any]:
        return {'head': self.head, 'tail': self.tail, 'label': self.label}


@dataclass
class Document:
    """单页文档"""
    id: str
    lang: str
    page_w: int
    page_h: int
    words: List[Word] = field(default_factory=list)
    entities: List[EntitySpan] = field(default_factory=list)
    links: List[RelationLink] = field(default_factory=list)
    raster: Optional[np.ndarray] = field(default=None, compare=False, repr=False)
    raster_path: Optional[str] = None

    def validate(self) -> 'Document':
        """
        校验文档不变量：词框合法、实体下标在范围内且互不重叠、关系端点存在

        Returns:
            self

        Raises:
            SchemaError: 任一不变量不满足
        """
        if self.page_w <= 0 or self.page_h <= 0:
            raise SchemaError("页面尺寸必须为正", field="img", doc_id=self.id)
        for i, word in enumerate(self.words):
            if not word.text:
                raise SchemaError(f"第 {i} 个词文本为空", field="words.text", doc_id=self.id)
            check_box(word.box, self.id, field_name="words.box")
            if word.line_id < 0:
                raise SchemaError("行号必须非负", field="words.line", doc_id=self.id)

        owner = [-1] * len(self.words)
        ids = set()
        for ent in self.entities:
            if ent.label not in ENTITY_LABELS:
                raise SchemaError(f"未知实体标签 {ent.label}", field="label", doc_id=self.id)
            if not (0 <= ent.first_word <= ent.last_word < len(self.words)):
                raise SchemaError(f"实体 {ent.id} 的词区间非法", field="words", doc_id=self.id)
            if ent.id in ids:
                raise SchemaError(f"实体 id {ent.id} 重复", field="id", doc_id=self.id)
            ids.add(ent.id)
            for w in range(ent.first_word, ent.last_word + 1):
                if owner[w] != -1:
                    raise SchemaError(f"实体 {ent.id} 与实体 {owner[w]} 重叠", field="words", doc_id=self.id)
                owner[w] = ent.id

        for link in self.links:
            if link.head == link.tail:
                raise SchemaError(f"关系首尾相同: {link.head}", field="linking", doc_id=self.id)
            if link.head not in ids or link.tail not in ids:
                raise SchemaError(f"关系端点不存在: {link.head}->{link.tail}", field="linking", doc_id=self.id)
        return self

    def entity_by_id(self) -> Dict[int, EntitySpan]:
        return {ent.id: ent for ent in self.entities}

    def scored_entities(self) -> List[EntitySpan]:
        """SER 计分的实体（HEADER/QUESTION/ANSWER）"""
        return [ent for ent in self.entities if ent.label in SCORED_LABELS]

    @property
    def text(self) -> str:
        return " ".join(word.text for word in self.words)

    def to_dict(self) -> Dict[str, Any]:
        """转换为字典（不含栅格像素）"""
        return {
            'id': self.id,
            'lang': self.lang,
            'page_w': self.page_w,
            'page_h': self.page_h,
            'words': [w.to_dict() for w in self.words],
            'entities': [e.to_dict() for e in self.entities],
            'links': [l.to_dict() for l in self.links],
            'raster_path': self.raster_path,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'Document':
        """从字典创建文档"""
        return cls(
            id=data['id'],
            lang=data['lang'],
            page_w=int(data['page_w']),
            page_h=int(data['page_h']),
            words=[Word.from_dict(w) for w in data.get('words', [])],
            entities=[EntitySpan.from_dict(e) for e in data.get('entities', [])],
            links=[RelationLink(**l) for l in data.get('links', [])],
            raster_path=data.get('raster_path'),
        )
