#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
语料流水线数据模型
定义采样规格、语言画像、过滤结果和语料记录
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional

from lxlab.errors import SchemaError, ValidationError


class DiscardReason(Enum):
    """丢弃原因"""
    TOO_SHORT = "too_short"
    LOW_LANG_SCORE = "low_lang_score"


@dataclass
class SamplingSpec:
    """按语言计数的采样规格，p_l ∝ (n_l/n)^alpha"""
    counts: Dict[str, int]
    alpha: float = 0.7
    seed: int = 42

    def __post_init__(self):
        if self.alpha < 0:
            raise ValidationError(f"alpha 必须非负: {self.alpha}")
        for lang, n in self.counts.items():
            if n < 0:
                raise ValidationError(f"语言 {lang} 的计数为负: {n}")

    @property
    def total(self) -> int:
        return sum(self.counts.values())


@dataclass
class LangProfile:
    """语言画像：归一化的字符三元组频率"""
    lang: str
    trigrams: Dict[str, float]

    @property
    def norm(self) -> float:
        return sum(v * v for v in self.trigrams.values()) ** 0.5


@dataclass
class FilterDecision:
    """单条记录的保留/丢弃决定"""
    record_id: str
    keep: bool
    lang: str
    score: float
    n_chars: int
    reason: Optional[DiscardReason] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            'record_id': self.record_id,
            'keep': self.keep,
            'lang': self.lang,
            'score': self.score,
            'n_chars': self.n_chars,
            'reason': self.reason.value if self.reason else None,
        }


@dataclass
class TextRun:
    """语料记录中的一段文本及其页面像素坐标"""
    text: str
    box: List[int]
    line: Optional[int] = None


@dataclass
class CorpusRecord:
    """预抽取的语料记录（一行 JSONL）"""
    id: str
    text_runs: List[TextRun]
    page_w: int
    page_h: int
    raster: Optional[str] = None
    lang_hint: Optional[str] = None
    offset: int = 0

    @property
    def text(self) -> str:
        return " ".join(run.text for run in self.text_runs)

    @property
    def n_chars(self) -> int:
        return sum(len(run.text) for run in self.text_runs)

    @classmethod
    def from_dict(cls, data: Dict[str, Any], offset: int = 0) -> 'CorpusRecord':
        """
        从 JSONL 记录创建

        Raises:
            SchemaError: 缺少字段或类型不对
        """
        doc_id = str(data.get('id', f"#{offset}"))
        try:
            page = data['page']
            runs = [
                TextRun(text=str(r['text']), box=[int(v) for v in r['box']],
                        line=int(r['line']) if r.get('line') is not None else None)
                for r in data['text_runs']
            ]
            return cls(
                id=doc_id,
                text_runs=runs,
                page_w=int(page['w']),
                page_h=int(page['h']),
                raster=page.get('raster'),
                lang_hint=data.get('lang'),
                offset=offset,
            )
        except KeyError as e:
            raise SchemaError(f"语料记录缺少字段 {e.args[0]}", field=str(e.args[0]), doc_id=doc_id) from e
        except (TypeError, ValueError) as e:
            raise SchemaError(f"语料记录字段类型错误: {e}", doc_id=doc_id) from e

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {
            'id': self.id,
            'text_runs': [
                {'text': r.text, 'box': list(r.box), **({'line': r.line} if r.line is not None else {})}
                for r in self.text_runs
            ],
            'page': {'w': self.page_w, 'h': self.page_h, 'raster': self.raster},
        }
        if self.lang_hint:
            data['lang'] = self.lang_hint
        return data


@dataclass
class CorpusStats:
    """按语言统计保留/丢弃数量"""
    kept: Dict[str, int] = field(default_factory=dict)
    discarded: Dict[str, Dict[str, int]] = field(default_factory=dict)

    def add(self, decision: FilterDecision) -> None:
        if decision.keep:
            self.kept[decision.lang] = self.kept.get(decision.lang, 0) + 1
        else:
            by_reason = self.discarded.setdefault(decision.lang, {})
            key = decision.reason.value
            by_reason[key] = by_reason.get(key, 0) + 1

    @property
    def total_kept(self) -> int:
        return sum(self.kept.values())

    @property
    def total_discarded(self) -> int:
        return sum(sum(v.values()) for v in self.discarded.values())

    def to_dict(self) -> Dict[str, Any]:
        return {
            'kept': dict(sorted(self.kept.items())),
            'discarded': {k: dict(sorted(v.items())) for k, v in sorted(self.discarded.items())},
            'total': self.total_kept + self.total_discarded,
            'total_kept': self.total_kept,
            'total_discarded': self.total_discarded,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'CorpusStats':
        return cls(kept=dict(data.get('kept', {})),
                   discarded={k: dict(v) for k, v in data.get('discarded', {}).items()})
