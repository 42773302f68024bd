#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
多语言语料流水线

读取预抽取的 JSONL 语料记录，做语言检测与过滤，按语言分片，
再按 p_l ∝ (n_l/n)^α 的指数化分布采样批次。
"""

import json
import logging
import math
import os
import re
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from tqdm import tqdm

from lxlab.core.docmodel import derive_line_ids, normalize_box
from lxlab.core.tokenizer import char_boxes, merge_boxes
from lxlab.errors import SchemaError, ValidationError
from lxlab.models.corpus import (CorpusRecord, CorpusStats, DiscardReason, FilterDecision,
                                 LangProfile, SamplingSpec)
from lxlab.models.document import Document, Word
from lxlab.storage.dataset_io import load_raster as read_raster

logger = logging.getLogger(__name__)

DEFAULT_PROFILE_DIR = Path(__file__).resolve().parent.parent / "data" / "profiles"
UNDETERMINED = "und"
MIN_CHARS = 200
MIN_LANG_SCORE = 0.5

_WHITESPACE = re.compile(r"\s+")

Detector = Callable[[str], Tuple[str, float]]
PathLike = Union[str, Path]


def _normalize_text(text: str) -> str:
    return _WHITESPACE.sub(" ", text).strip().lower()


def trigram_frequencies(text: str) -> Dict[str, float]:
    """字符三元组频率（和为 1）；空白串折叠为单个空格并转小写"""
    norm = _normalize_text(text)
    if len(norm) < 3:
        return {}
    counts = Counter(norm[i:i + 3] for i in range(len(norm) - 2))
    total = sum(counts.values())
    return {gram: n / total for gram, n in sorted(counts.items())}


def load_profiles(profile_dir: Optional[PathLike] = None) -> Dict[str, LangProfile]:
    """
    从 <lang>.txt 种子文本构建语言画像

    Args:
        profile_dir: 目录，默认使用包内置的八种语言种子文本
    """
    profile_dir = Path(profile_dir) if profile_dir else DEFAULT_PROFILE_DIR
    files = sorted(profile_dir.glob("*.txt"))
    if not files:
        raise ValidationError(f"语言画像目录为空: {profile_dir}")
    profiles = {}
    for path in files:
        text = path.read_text(encoding='utf-8')
        profiles[path.stem] = LangProfile(lang=path.stem, trigrams=trigram_frequencies(text))
    logger.info(f"加载 {len(profiles)} 个语言画像: {', '.join(profiles)}")
    return profiles


def _cosine(a: Dict[str, float], b: LangProfile) -> float:
    if not a or not b.trigrams:
        return 0.0
    dot = sum(v * b.trigrams.get(gram, 0.0) for gram, v in a.items())
    norm_a = math.sqrt(sum(v * v for v in a.values()))
    return min(1.0, dot / (norm_a * b.norm))


def detect_language(text: str, profiles: Dict[str, LangProfile]) -> Tuple[str, float]:
    """
    字符三元组余弦相似度语言检测

    Returns:
        (语言, 分数)；分数为与各画像余弦相似度的最大值，少于 3 个字符时为 ("und", 0.0)
    """
    vector = trigram_frequencies(text)
    if not vector:
        return UNDETERMINED, 0.0
    best_lang, best_score = UNDETERMINED, 0.0
    for lang in sorted(profiles):
        score = _cosine(vector, profiles[lang])
        if score > best_score:
            best_lang, best_score = lang, score
    return best_lang, best_score


def filter_record(record: CorpusRecord, profiles: Optional[Dict[str, LangProfile]] = None,
                  detector: Optional[Detector] = None, min_chars: int = MIN_CHARS,
                  min_score: float = MIN_LANG_SCORE) -> FilterDecision:
    """
    少于 min_chars 个字符或语言分数不高于 min_score 时丢弃

    Args:
        record: 语料记录
        profiles: 语言画像（未给 detector 时使用）
        detector: 可替换的检测函数 text → (lang, score)

    Returns:
        FilterDecision，丢弃时带原因
    """
    if detector is None:
        if profiles is None:
            raise ValidationError("filter_record 需要 profiles 或 detector")
        detector = lambda text: detect_language(text, profiles)
    lang, score = detector(record.text)
    n_chars = record.n_chars

    reason = None
    if n_chars < min_chars:
        reason = DiscardReason.TOO_SHORT
    elif not score > min_score:
        reason = DiscardReason.LOW_LANG_SCORE
    decision = FilterDecision(record_id=record.id, keep=reason is None, lang=lang,
                              score=score, n_chars=n_chars, reason=reason)
    if reason is not None:
        logger.debug(f"丢弃记录 {record.id}: {reason.value} (chars={n_chars}, lang={lang}, score={score:.4f})")
    return decision


def sampling_probs(spec: SamplingSpec) -> Dict[str, float]:
    """
    p_l = (n_l/n)^α / Σ_k (n_k/n)^α；计数为 0 的语言概率为 0

    Raises:
        ValidationError: 所有计数都为 0
    """
    n = spec.total
    if n <= 0:
        raise ValidationError("所有语言计数均为 0，无法计算采样概率")
    langs = sorted(spec.counts)
    if spec.alpha == 1.0:
        return {lang: spec.counts[lang] / n for lang in langs}
    weights = {lang: (spec.counts[lang] / n) ** spec.alpha if spec.counts[lang] > 0 else 0.0
               for lang in langs}
    z = math.fsum(weights.values())
    return {lang: w / z for lang, w in weights.items()}


@dataclass
class SampledBatch:
    """采样得到的一个批次"""
    lang: str
    items: list
    epoch: int


class LanguageSampler:
    """
    按语言采样批次：语言按 sampling_probs 独立同分布抽取，语言内轮询

    分片取完后从头开始并把该语言的 epoch 加一
    """

    def __init__(self, shards: Dict[str, Sequence], spec: SamplingSpec, batch_size: int = 1):
        if batch_size < 1:
            raise ValidationError(f"batch_size 必须 ≥ 1: {batch_size}")
        probs = sampling_probs(spec)
        self.langs = [lang for lang in sorted(probs) if probs[lang] > 0]
        for lang in self.langs:
            if not shards.get(lang):
                raise ValidationError(f"语言 {lang} 的采样概率为正但分片为空")
        self.probs = np.array([probs[lang] for lang in self.langs], dtype=np.float64)
        self.probs /= self.probs.sum()
        self.shards = shards
        self.batch_size = batch_size
        self.rng = np.random.default_rng(spec.seed)
        self.cursor = {lang: 0 for lang in self.langs}
        self.epoch = {lang: 0 for lang in self.langs}

    def next_batch(self) -> SampledBatch:
        lang = self.langs[int(self.rng.choice(len(self.langs), p=self.probs))]
        shard = self.shards[lang]
        items = []
        for _ in range(self.batch_size):
            if self.cursor[lang] >= len(shard):
                self.cursor[lang] = 0
                self.epoch[lang] += 1
            items.append(shard[self.cursor[lang]])
            self.cursor[lang] += 1
        return SampledBatch(lang=lang, items=items, epoch=self.epoch[lang])

    def __iter__(self) -> Iterator[SampledBatch]:
        while True:
            yield self.next_batch()


def sample_stream(shards: Dict[str, Sequence], spec: SamplingSpec, batch_size: int = 1) -> Iterator[SampledBatch]:
    """确定性的无限批次迭代器"""
    return iter(LanguageSampler(shards, spec, batch_size))


def _split_run(text: str, box) -> List[Tuple[str, tuple]]:
    """把一段文本按空白切成词，词框取所含字符等宽切片的合并"""
    slices = char_boxes(Word(text=text, box=tuple(box)))
    words = []
    for match in re.finditer(r"\S+", text):
        words.append((match.group(), merge_boxes(slices[match.start():match.end()])))
    return words


def ingest_record(record: CorpusRecord, lang: Optional[str] = None,
                  base_dir: Optional[PathLike] = None, load_raster: bool = True) -> Document:
    """
    语料记录 → 文档：像素坐标归一化，行号取自记录或按垂直中心推导

    Args:
        record: 语料记录
        lang: 文档语言（通常来自检测结果）
        base_dir: 相对栅格路径的基准目录
    """
    pieces: List[Tuple[str, tuple, Optional[int]]] = []
    for run in record.text_runs:
        for text, px in _split_run(run.text, run.box):
            pieces.append((text, px, run.line))
    if all(line is not None for _, _, line in pieces):
        line_ids = [int(line) for _, _, line in pieces]
    else:
        line_ids = derive_line_ids([px for _, px, _ in pieces])

    try:
        words = [Word(text=text, box=normalize_box(px, record.page_w, record.page_h), line_id=line,
                      pixel_box=tuple(px))
                 for (text, px, _), line in zip(pieces, line_ids)]
    except ValidationError as e:
        raise SchemaError(str(e), field="text_runs.box", doc_id=record.id) from e

    raster = None
    if load_raster and record.raster:
        path = Path(base_dir or ".") / record.raster
        if path.exists():
            raster = read_raster(path)
        else:
            logger.debug(f"记录 {record.id} 的栅格不存在: {path}")
    doc = Document(id=record.id, lang=lang or record.lang_hint or UNDETERMINED,
                   page_w=record.page_w, page_h=record.page_h, words=words,
                   raster=raster, raster_path=record.raster)
    return doc.validate()


def read_records(path: PathLike) -> List[CorpusRecord]:
    """读取 JSONL 语料，空行跳过"""
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"语料文件不存在: {path}")
    records = []
    with open(path, 'r', encoding='utf-8') as f:
        for offset, line in enumerate(f):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as e:
                raise SchemaError(f"第 {offset + 1} 行不是合法 JSON: {e}", doc_id=f"#{offset}") from e
            records.append(CorpusRecord.from_dict(data, offset=offset))
    return records


def build_corpus(input_path: PathLike, out_dir: PathLike,
                 profiles: Optional[Dict[str, LangProfile]] = None, workers: int = 4,
                 min_chars: int = MIN_CHARS, min_score: float = MIN_LANG_SCORE,
                 progress: bool = True) -> CorpusStats:
    """
    过滤语料并按语言写出分片

    输出 out_dir/shards/<lang>.jsonl 与 out_dir/stats.json；
    输出顺序按输入偏移，与线程完成顺序无关。
    """
    input_path = Path(input_path)
    out_dir = Path(out_dir)
    profiles = profiles or load_profiles()
    records = read_records(input_path)
    logger.info(f"读取 {len(records)} 条语料记录: {input_path}")

    def decide(record: CorpusRecord) -> FilterDecision:
        return filter_record(record, profiles, min_chars=min_chars, min_score=min_score)

    stats = CorpusStats()
    decisions: List[FilterDecision] = []
    with ThreadPoolExecutor(max_workers=max(1, workers)) as executor:
        pbar = tqdm(executor.map(decide, records), total=len(records), desc="过滤语料",
                    disable=not progress, leave=False)
        for decision in pbar:
            decisions.append(decision)
            stats.add(decision)
            pbar.set_postfix({'保留': stats.total_kept, '丢弃': stats.total_discarded}, refresh=False)
        pbar.close()

    shard_dir = out_dir / "shards"
    shard_dir.mkdir(parents=True, exist_ok=True)
    for old in shard_dir.glob("*.jsonl"):
        old.unlink()
    shards: Dict[str, List[str]] = {}
    for record, decision in zip(records, decisions):
        if not decision.keep:
            continue
        data = record.to_dict()
        data['lang'] = decision.lang
        if record.raster:
            raster = (input_path.parent / record.raster).resolve()
            data['page']['raster'] = os.path.relpath(raster, shard_dir.resolve())
        shards.setdefault(decision.lang, []).append(json.dumps(data, ensure_ascii=False, sort_keys=True))
    for lang, lines in sorted(shards.items()):
        (shard_dir / f"{lang}.jsonl").write_text("\n".join(lines) + "\n", encoding='utf-8')

    with open(out_dir / "stats.json", 'w', encoding='utf-8') as f:
        json.dump(stats.to_dict(), f, ensure_ascii=False, indent=2, sort_keys=True)
    logger.info(f"语料过滤完成: 保留 {stats.total_kept}，丢弃 {stats.total_discarded}，"
                f"分片 {', '.join(f'{k}={v}' for k, v in sorted(stats.kept.items()))}")
    return stats


def corpus_stats(stats_path: PathLike) -> pd.DataFrame:
    """
    读取 stats.json，按语言列出保留数与各丢弃原因数

    Raises:
        ValidationError: 总数不等于保留数加丢弃数
    """
    with open(stats_path, 'r', encoding='utf-8') as f:
        raw = json.load(f)
    stats = CorpusStats.from_dict(raw)
    reasons = [r.value for r in DiscardReason]
    langs = sorted(set(stats.kept) | set(stats.discarded))
    rows = []
    for lang in langs:
        row = {'lang': lang, 'kept': stats.kept.get(lang, 0)}
        by_reason = stats.discarded.get(lang, {})
        for reason in reasons:
            row[reason] = by_reason.get(reason, 0)
        row['discarded'] = sum(row[r] for r in reasons)
        row['total'] = row['kept'] + row['discarded']
        rows.append(row)
    frame = pd.DataFrame(rows, columns=['lang', 'kept', *reasons, 'discarded', 'total']).set_index('lang')
    frame.loc['all'] = frame.sum(numeric_only=True)

    if 'total' in raw and int(frame.loc['all', 'total']) != int(raw['total']):
        raise ValidationError(f"统计不一致: 总数 {raw['total']} ≠ 保留 + 丢弃 {int(frame.loc['all', 'total'])}")
    return frame.astype(int)


def shard_counts(shard_dir: PathLike) -> Dict[str, int]:
    """各语言分片的记录数"""
    counts = {}
    for path in sorted(Path(shard_dir).glob("*.jsonl")):
        with open(path, 'r', encoding='utf-8') as f:
            counts[path.stem] = sum(1 for line in f if line.strip())
    return counts


def load_shards(shard_dir: PathLike, load_raster: bool = True) -> Dict[str, List[Document]]:
    """读取分片并转为文档，按语言分组"""
    shard_dir = Path(shard_dir)
    result: Dict[str, List[Document]] = {}
    for path in sorted(shard_dir.glob("*.jsonl")):
        docs = [ingest_record(rec, lang=rec.lang_hint or path.stem, base_dir=shard_dir, load_raster=load_raster)
                for rec in read_records(path)]
        if docs:
            result[path.stem] = docs
    return result
