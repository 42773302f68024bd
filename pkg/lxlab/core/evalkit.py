#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
评估工具
实体级 SER F1、键值关系 RE F1，以及按微调设置组织的多语言报表
"""

import logging
from typing import Dict, Hashable, Iterable, List, Mapping, Optional, Sequence, Set, Union

from lxlab.errors import ValidationError
from lxlab.models.document import SCORED_LABELS, Document, EntitySpan, RelationLink
from lxlab.models.metrics import PRF, MetricReport
from lxlab.models.train_config import XFUND_LANGS

logger = logging.getLogger(__name__)

SER = "SER"
RE = "RE"

# 参考结果（F1），列顺序同 XFUND_LANGS：FUNSD-EN, ZH, JA, ES, FR, IT, DE, PT
REFERENCE_ROWS: Dict[str, Dict[str, Dict[str, Sequence[float]]]] = {
    "LANG_SPECIFIC": {
        "SER": {
            "BASE": (0.794, 0.8924, 0.7921, 0.7550, 0.7902, 0.8082, 0.8222, 0.7903),
            "LARGE": (0.8225, 0.9161, 0.8033, 0.7830, 0.8098, 0.8275, 0.8361, 0.8273),
        },
        "RE": {
            "BASE": (0.5483, 0.7073, 0.6963, 0.6896, 0.6353, 0.6415, 0.6551, 0.5718),
            "LARGE": (0.6404, 0.7888, 0.7255, 0.7666, 0.7102, 0.7691, 0.6843, 0.6796),
        },
    },
    "ZERO_SHOT": {
        "SER": {
            "BASE": (0.794, 0.6019, 0.4715, 0.4565, 0.5757, 0.4846, 0.5252, 0.539),
            "LARGE": (0.8225, 0.6896, 0.519, 0.4976, 0.6135, 0.5517, 0.5905, 0.6077),
        },
        "RE": {
            "BASE": (0.5483, 0.4494, 0.4408, 0.4708, 0.4416, 0.4090, 0.3820, 0.3685),
            "LARGE": (0.6404, 0.5531, 0.5696, 0.5780, 0.5615, 0.5184, 0.4890, 0.4795),
        },
    },
    "MULTITASK": {
        "SER": {
            "BASE": (0.7924, 0.8973, 0.7964, 0.7798, 0.8173, 0.821, 0.8322, 0.8241),
            "LARGE": (0.8068, 0.9155, 0.8216, 0.8055, 0.8384, 0.8372, 0.853, 0.8650),
        },
        "RE": {
            "BASE": (0.6671, 0.8241, 0.8142, 0.8104, 0.8221, 0.8310, 0.7854, 0.7044),
            "LARGE": (0.7683, 0.9000, 0.8621, 0.8592, 0.8669, 0.8675, 0.8263, 0.8160),
        },
    },
}

# 纯文本基线（对应 ModelConfig.text_only），结构同 REFERENCE_ROWS，外加模型名一层
BASELINE_ROWS: Dict[str, Dict[str, Dict[str, Dict[str, Sequence[float]]]]] = {
    "XLM-R": {
        "LANG_SPECIFIC": {
            "SER": {
                "BASE": (0.667, 0.8774, 0.7761, 0.6105, 0.6743, 0.6687, 0.6814, 0.6818),
                "LARGE": (0.7074, 0.8925, 0.7817, 0.6515, 0.7170, 0.7139, 0.711, 0.7241),
            },
            "RE": {
                "BASE": (0.2659, 0.5105, 0.5800, 0.5295, 0.4965, 0.5305, 0.5041, 0.3982),
                "LARGE": (0.3473, 0.6475, 0.6798, 0.6330, 0.6080, 0.6171, 0.6189, 0.5762),
            },
        },
        "ZERO_SHOT": {
            "SER": {
                "BASE": (0.667, 0.4144, 0.3023, 0.3055, 0.371, 0.2767, 0.3286, 0.3936),
                "LARGE": (0.7074, 0.5205, 0.3939, 0.3627, 0.4672, 0.3398, 0.418, 0.4997),
            },
            "RE": {
                "BASE": (0.2659, 0.1601, 0.2611, 0.2440, 0.2240, 0.2374, 0.2288, 0.1996),
                "LARGE": (0.3473, 0.2421, 0.3037, 0.2843, 0.2897, 0.2496, 0.2617, 0.2333),
            },
        },
        "MULTITASK": {
            "SER": {
                "BASE": (0.6633, 0.883, 0.7786, 0.6223, 0.7035, 0.6814, 0.7146, 0.6726),
                "LARGE": (0.7151, 0.8967, 0.7828, 0.6615, 0.7407, 0.7165, 0.7431, 0.7449),
            },
            "RE": {
                "BASE": (0.3638, 0.6797, 0.6829, 0.6828, 0.6727, 0.6937, 0.6887, 0.6082),
                "LARGE": (0.4246, 0.7316, 0.7350, 0.7513, 0.7532, 0.7520, 0.7111, 0.6582),
            },
        },
    },
    "InfoXLM": {
        "LANG_SPECIFIC": {
            "SER": {
                "BASE": (0.6852, 0.8868, 0.7865, 0.6230, 0.7015, 0.6751, 0.7063, 0.7008),
                "LARGE": (0.7325, 0.8955, 0.7904, 0.6740, 0.7140, 0.7152, 0.7338, 0.7212),
            },
            "RE": {
                "BASE": (0.2920, 0.5214, 0.6000, 0.5516, 0.4913, 0.5281, 0.5262, 0.4170),
                "LARGE": (0.3679, 0.6775, 0.6604, 0.6346, 0.6096, 0.6659, 0.6057, 0.5800),
            },
        },
        "ZERO_SHOT": {
            "SER": {
                "BASE": (0.6852, 0.4408, 0.3603, 0.3102, 0.4021, 0.2880, 0.3587, 0.4502),
                "LARGE": (0.7325, 0.5536, 0.4132, 0.3689, 0.4909, 0.3598, 0.4363, 0.5126),
            },
            "RE": {
                "BASE": (0.2920, 0.2405, 0.2851, 0.2481, 0.2454, 0.2193, 0.2027, 0.2049),
                "LARGE": (0.3679, 0.3156, 0.3364, 0.3185, 0.3189, 0.2720, 0.2953, 0.2554),
            },
        },
        "MULTITASK": {
            "SER": {
                "BASE": (0.6538, 0.8741, 0.7855, 0.5979, 0.7057, 0.6826, 0.7055, 0.6796),
                "LARGE": (0.7246, 0.8919, 0.7998, 0.6702, 0.7376, 0.7180, 0.7523, 0.7332),
            },
            "RE": {
                "BASE": (0.3699, 0.6493, 0.6473, 0.6828, 0.6831, 0.6690, 0.6384, 0.5763),
                "LARGE": (0.4543, 0.7311, 0.7510, 0.7644, 0.7549, 0.7504, 0.7356, 0.6875),
            },
        },
    },
}


Item = Union[EntitySpan, RelationLink, Hashable]
PerDoc = Union[Sequence[Item], Sequence[Sequence[Item]]]


def _as_documents(items: PerDoc) -> List[Sequence[Item]]:
    """按文档分组时每个元素是 list/set；否则整个序列视为一个文档"""
    items = list(items)
    if items and all(isinstance(d, (list, set, frozenset)) for d in items):
        return items
    return [items]


def _entity_keys(spans: Iterable[EntitySpan]) -> Set:
    return {s.key for s in spans if s.label in SCORED_LABELS}


def _link_keys(links: Iterable[Item]) -> Set:
    return {(l.head, l.tail) if isinstance(l, RelationLink) else tuple(l) for l in links}


def _micro(gold_docs: List[Set], pred_docs: List[Set]) -> PRF:
    if len(gold_docs) != len(pred_docs):
        raise ValidationError(f"标注与预测的文档数不一致: {len(gold_docs)} ≠ {len(pred_docs)}")
    tp = fp = fn = 0
    for gold, pred in zip(gold_docs, pred_docs):
        hit = len(gold & pred)
        tp += hit
        fp += len(pred) - hit
        fn += len(gold) - hit
    return PRF.from_counts(tp, fp, fn)


def entity_f1(gold: PerDoc, pred: PerDoc) -> PRF:
    """
    实体级 F1：(first_word, last_word, label) 完全一致记为 TP，跨文档微平均

    只计 HEADER/QUESTION/ANSWER 三类

    Args:
        gold: 单个文档的实体列表，或按文档分组的实体列表
        pred: 与 gold 同形
    """
    return _micro([_entity_keys(d) for d in _as_documents(gold)],
                  [_entity_keys(d) for d in _as_documents(pred)])


def relation_f1(gold: PerDoc, pred: PerDoc) -> PRF:
    """有向 (head, tail) 完全一致记为 TP，跨文档微平均"""
    return _micro([_link_keys(d) for d in _as_documents(gold)],
                  [_link_keys(d) for d in _as_documents(pred)])


def _keyed_links(doc: Document) -> Set:
    """用端点实体的 (first_word, last_word, label) 表示关系，与实体 id 编号无关"""
    by_id = {e.id: e.key for e in doc.entities}
    return {(by_id[l.head], by_id[l.tail]) for l in doc.links if l.head in by_id and l.tail in by_id}


def evaluate_documents(gold: Sequence[Document], pred: Sequence[Document]) -> Dict[str, PRF]:
    """
    按文档 id 对齐后计算 SER 与 RE 指标

    Raises:
        ValidationError: 预测中缺少某个标注文档
    """
    pred_by_id = {d.id: d for d in pred}
    missing = [d.id for d in gold if d.id not in pred_by_id]
    if missing:
        raise ValidationError(f"预测中缺少 {len(missing)} 个文档: {missing[:5]}")
    paired = [(g, pred_by_id[g.id]) for g in gold]
    return {
        SER: entity_f1([g.entities for g, _ in paired], [p.entities for _, p in paired]),
        RE: relation_f1([list(_keyed_links(g)) for g, _ in paired],
                        [list(_keyed_links(p)) for _, p in paired]),
    }


def build_report(results: Mapping[str, Mapping[str, Optional[PRF]]], regime: str,
                 langs: Optional[Sequence[str]] = None) -> MetricReport:
    """
    汇总为按语言分列的报表

    Args:
        results: results[task][lang] → PRF（缺失为 None 或不出现）
        regime: 微调设置名
        langs: 列顺序，默认按 XFUND 顺序取出现过的语言

    Returns:
        MetricReport；缺失单元格以 "-" 显示，Avg 只对现有单元格求平均
    """
    if langs is None:
        present = {lang for row in results.values() for lang in row}
        langs = [l for l in XFUND_LANGS if l in present] + sorted(present - set(XFUND_LANGS))
    langs = [l.lower() for l in langs]
    cells = {task: {lang: row.get(lang) for lang in langs} for task, row in results.items()}
    report = MetricReport(regime=str(regime), langs=list(langs), cells=cells)
    gaps = report.missing()
    if gaps:
        logger.warning(f"报表缺少 {len(gaps)} 个单元格，平均值只计现有单元格: {', '.join(gaps)}")
    return report


def reference_report(regime: str, size: str = "LARGE", baseline: Optional[str] = None) -> MetricReport:
    """
    参考结果行组成的报表

    Args:
        regime: 微调方式
        size: BASE 或 LARGE
        baseline: 纯文本基线名（XLM-R、InfoXLM），None 为多模态模型
    """
    table = REFERENCE_ROWS
    if baseline is not None:
        if baseline not in BASELINE_ROWS:
            raise ValidationError(f"没有基线 {baseline}，可选 {sorted(BASELINE_ROWS)}")
        table = BASELINE_ROWS[baseline]
    try:
        rows = table[regime.upper()]
    except KeyError:
        raise ValidationError(f"没有 {regime} 的参考结果，可选 {sorted(table)}") from None
    results = {task: {lang: PRF.from_f1(v) for lang, v in zip(XFUND_LANGS, sizes[size.upper()])}
               for task, sizes in rows.items()}
    return build_report(results, regime.upper(), XFUND_LANGS)
