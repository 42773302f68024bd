#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
数据集读写
XFUND 风格 JSON 标注与 PGM 页面栅格的解析、写出与统计
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from PIL import Image

from lxlab.core.docmodel import derive_line_ids, normalize_box
from lxlab.errors import SchemaError, ValidationError
from lxlab.models.document import (ENTITY_LABELS, Box, Document, EntitySpan,
                                   RelationLink, Word, check_box)
from lxlab.core.tokenizer import merge_boxes

logger = logging.getLogger(__name__)

# 不同发布版本里的字段别名 → 规范字段名
FIELD_ALIASES: Dict[str, str] = {
    'bbox': 'box',
    'linkings': 'linking',
    'links': 'linking',
    'file_name': 'fname',
    'filename': 'fname',
    'image': 'img',
    'entities': 'document',
    'w': 'width',
    'h': 'height',
}

PathLike = Union[str, Path]


def _canonical(node: Any) -> Any:
    """递归地把别名字段改为规范字段名"""
    if isinstance(node, dict):
        return {FIELD_ALIASES.get(k, k): _canonical(v) for k, v in node.items()}
    if isinstance(node, list):
        return [_canonical(v) for v in node]
    return node


def load_raster(path: PathLike) -> np.ndarray:
    """读取灰度栅格（PGM 或 Pillow 支持的任意格式），返回 uint8 数组 [H×W]"""
    with Image.open(path) as img:
        return np.asarray(img.convert("L"), dtype=np.uint8).copy()


def save_raster(raster: np.ndarray, path: PathLike) -> Path:
    """把 uint8 灰度数组写为二进制 PGM（P5）"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(raster, dtype=np.uint8), mode="L").save(path, format="PPM")
    return path


def _read_json(path: PathLike) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"数据集文件不存在: {path}")
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise SchemaError(f"JSON 解析失败: {e}", field="<root>") from e
    data = _canonical(data)
    if not isinstance(data, dict) or 'documents' not in data:
        raise SchemaError("顶层必须包含 documents", field="documents")
    return data


def _parse_document(raw: Dict[str, Any], lang: str, base_dir: Path, load_rasters: bool) -> Document:
    doc_id = str(raw.get('id', '<missing>'))
    if 'id' not in raw:
        raise SchemaError("缺少文档 id", field="id", doc_id=doc_id)
    img = raw.get('img')
    if not isinstance(img, dict):
        raise SchemaError("缺少 img", field="img", doc_id=doc_id)
    try:
        page_w, page_h = int(img['width']), int(img['height'])
    except (KeyError, TypeError, ValueError) as e:
        raise SchemaError("img.width/img.height 缺失或不是整数", field="img", doc_id=doc_id) from e
    if page_w <= 0 or page_h <= 0:
        raise SchemaError("页面尺寸必须为正", field="img", doc_id=doc_id)

    items = raw.get('document')
    if not isinstance(items, list):
        raise SchemaError("document 必须是列表", field="document", doc_id=doc_id)

    words: List[Word] = []
    pixel_boxes: List[Box] = []
    explicit_lines: List[Optional[int]] = []
    entities: List[EntitySpan] = []
    links: List[RelationLink] = []
    seen_links = set()
    skipped_ids = set()

    for item in items:
        if not isinstance(item, dict) or 'id' not in item:
            raise SchemaError("实体缺少 id", field="document.id", doc_id=doc_id)
        label = str(item.get('label', '')).upper()
        if label not in ENTITY_LABELS:
            raise SchemaError(f"未知实体标签 {item.get('label')!r}", field="document.label", doc_id=doc_id)
        item_words = item.get('words') or []
        if not item_words:
            logger.warning(f"文档 {doc_id} 的实体 {item['id']} 没有词，已跳过")
            skipped_ids.add(int(item['id']))
            continue

        first = len(words)
        for w in item_words:
            if 'text' not in w or 'box' not in w:
                raise SchemaError("词缺少 text 或 box", field="document.words", doc_id=doc_id)
            px = check_box(w['box'], doc_id, field_name="document.words.box", limit=None)
            try:
                box = normalize_box(px, page_w, page_h)
            except ValidationError as e:
                raise SchemaError(str(e), field="document.words.box", doc_id=doc_id) from e
            words.append(Word(text=str(w['text']), box=box, pixel_box=px))
            pixel_boxes.append(px)
            explicit_lines.append(int(w['line']) if w.get('line') is not None else None)

        entity_box = None
        if item.get('box') is not None:
            entity_box = check_box(item['box'], doc_id, field_name="document.box", limit=None)
        entities.append(EntitySpan(
            id=int(item['id']),
            first_word=first,
            last_word=len(words) - 1,
            label=label,
            text=str(item.get('text', '')),
            box=entity_box,
        ))

        for pair in item.get('linking') or []:
            if not isinstance(pair, (list, tuple)) or len(pair) != 2:
                raise SchemaError(f"linking 项必须是 [head, tail]: {pair!r}", field="document.linking", doc_id=doc_id)
            key = (int(pair[0]), int(pair[1]))
            if key not in seen_links:
                seen_links.add(key)
                links.append(RelationLink(head=key[0], tail=key[1]))

    if skipped_ids:
        kept = [l for l in links if l.head not in skipped_ids and l.tail not in skipped_ids]
        if len(kept) != len(links):
            logger.warning(f"文档 {doc_id} 丢弃了 {len(links) - len(kept)} 条指向空实体的关系")
        links = kept

    if all(line is not None for line in explicit_lines):
        line_ids = [int(line) for line in explicit_lines]
    else:
        line_ids = derive_line_ids(pixel_boxes)
    for word, line_id in zip(words, line_ids):
        word.line_id = line_id

    raster = None
    raster_path = img.get('fname')
    if load_rasters and raster_path:
        full = base_dir / raster_path
        if full.exists():
            raster = load_raster(full)
        else:
            logger.debug(f"文档 {doc_id} 的栅格不存在: {full}")

    doc = Document(id=doc_id, lang=lang, page_w=page_w, page_h=page_h, words=words,
                   entities=entities, links=links, raster=raster, raster_path=raster_path)
    return doc.validate()


def parse_dataset(path: PathLike, load_rasters: bool = True) -> List[Document]:
    """
    解析 XFUND 风格数据集文件

    Args:
        path: JSON 文件路径
        load_rasters: 是否读取 img.fname 指向的栅格（相对于 JSON 所在目录）

    Returns:
        文档列表

    Raises:
        SchemaError: 格式不符，错误信息包含字段名与文档 id
    """
    path = Path(path)
    data = _read_json(path)
    lang = str(data.get('lang', '')).lower()
    if not lang:
        raise SchemaError("缺少 lang", field="lang")
    docs = [_parse_document(raw, lang, path.parent, load_rasters) for raw in data['documents']]
    logger.info(f"解析数据集 {path}: {len(docs)} 个文档，语言 {lang}")
    return docs


def _denormalize(box: Box, page_w: int, page_h: int) -> Box:
    x0, y0, x1, y1 = box
    return (x0 * page_w // 1000, y0 * page_h // 1000, x1 * page_w // 1000, y1 * page_h // 1000)


def _document_to_raw(doc: Document) -> Dict[str, Any]:
    def word_raw(word: Word) -> Dict[str, Any]:
        px = word.pixel_box or _denormalize(word.box, doc.page_w, doc.page_h)
        return {'text': word.text, 'box': list(px), 'line': word.line_id}

    covered = [False] * len(doc.words)
    items = []
    for ent in doc.entities:
        ent_words = doc.words[ent.first_word:ent.last_word + 1]
        for w in range(ent.first_word, ent.last_word + 1):
            covered[w] = True
        box = ent.box or merge_boxes([w.pixel_box or _denormalize(w.box, doc.page_w, doc.page_h)
                                      for w in ent_words])
        items.append({
            'id': ent.id,
            'text': ent.text or " ".join(w.text for w in ent_words),
            'box': list(box),
            'label': ent.label.lower(),
            'words': [word_raw(w) for w in ent_words],
            'linking': [[l.head, l.tail] for l in doc.links if ent.id in (l.head, l.tail)],
        })

    # 不属于任何实体的词各自写成 other 项
    next_id = max((e.id for e in doc.entities), default=-1) + 1
    for i, word in enumerate(doc.words):
        if covered[i]:
            continue
        items.append({
            'id': next_id,
            'text': word.text,
            'box': list(word.pixel_box or _denormalize(word.box, doc.page_w, doc.page_h)),
            'label': 'other',
            'words': [word_raw(word)],
            'linking': [],
        })
        next_id += 1

    return {
        'id': doc.id,
        'img': {'fname': doc.raster_path or f"{doc.id}.pgm", 'width': doc.page_w, 'height': doc.page_h},
        'document': items,
    }


def write_dataset(docs: Sequence[Document], path: PathLike, lang: Optional[str] = None,
                  write_rasters: bool = False) -> Path:
    """
    写出规范形式的数据集 JSON（UTF-8，键顺序固定）

    Args:
        docs: 文档列表（应为同一语言）
        path: 输出路径
        lang: 顶层 lang，默认取第一个文档的语言
        write_rasters: 同时把内存中的栅格写为 PGM
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lang = lang or (docs[0].lang if docs else "und")
    payload = {'lang': lang, 'documents': [_document_to_raw(d) for d in docs]}
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(payload, f, ensure_ascii=False, indent=1)
        f.write("\n")
    if write_rasters:
        for doc, raw in zip(docs, payload['documents']):
            if doc.raster is not None:
                save_raster(doc.raster, path.parent / raw['img']['fname'])
    logger.info(f"写出数据集 {path}: {len(docs)} 个文档")
    return path


def dataset_statistics(paths: Union[PathLike, Iterable[PathLike]]) -> pd.DataFrame:
    """
    按标签统计实体数（基于原始条目，包括没有词的实体）

    Returns:
        DataFrame，每个文件一行，列为 header/question/answer/other/total
    """
    if isinstance(paths, (str, Path)):
        paths = [paths]
    columns = [label.lower() for label in ENTITY_LABELS]
    rows = []
    for path in paths:
        data = _read_json(path)
        labels = [str(item.get('label', '')).lower()
                  for raw in data['documents'] for item in raw.get('document', [])]
        counts = pd.Series(labels, dtype=object).value_counts()
        row = {label: int(counts.get(label, 0)) for label in columns}
        row['total'] = sum(row.values())
        row['file'] = Path(path).stem
        row['documents'] = len(data['documents'])
        rows.append(row)
    return pd.DataFrame(rows, columns=['file', 'documents', *columns, 'total']).set_index('file')


def find_dataset_files(data_dir: PathLike) -> Dict[str, List[Path]]:
    """按顶层 lang 字段把目录下的 *.json 分组"""
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise ValidationError(f"数据目录不存在: {data_dir}")
    groups: Dict[str, List[Path]] = {}
    for path in sorted(data_dir.glob("*.json")):
        lang = str(_read_json(path).get('lang', '')).lower()
        groups.setdefault(lang, []).append(path)
    return groups


def load_language_splits(data_dir: PathLike, langs: Optional[Sequence[str]] = None,
                         load_rasters: bool = True) -> Dict[str, List[Document]]:
    """
    读取目录下的全部数据集文件并按语言分组

    Args:
        data_dir: 包含 <lang>.json 的目录
        langs: 只保留这些语言；None 表示全部
    """
    result: Dict[str, List[Document]] = {}
    for lang, files in find_dataset_files(data_dir).items():
        if langs is not None and lang not in langs:
            continue
        for path in files:
            result.setdefault(lang, []).extend(parse_dataset(path, load_rasters=load_rasters))
    return result
