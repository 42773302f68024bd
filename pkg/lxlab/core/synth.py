#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
合成多语言表单

生成确定性的小型表单数据（标题、若干键值对、一个 OTHER 实体）与对应的灰度栅格，
以及预训练用的 JSONL 语料记录（含应被过滤掉的过短记录和纯数字记录）。
相同参数总是得到逐字节相同的输出。
"""

import json
import logging
import textwrap
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image, ImageDraw

from lxlab.core.docmodel import normalize_box
from lxlab.core.pipeline import DEFAULT_PROFILE_DIR
from lxlab.errors import ValidationError
from lxlab.models.document import (ANSWER, HEADER, OTHER, QUESTION, Box, Document, EntitySpan,
                                   RelationLink, Word)
from lxlab.storage.dataset_io import save_raster, write_dataset

logger = logging.getLogger(__name__)

PAGE_W = 500
PAGE_H = 700
FIELDS = ("name", "date", "city", "phone", "email", "address")
CJK_LANGS = ("zh", "ja")

PathLike = Union[str, Path]


@dataclass(frozen=True)
class FormTemplate:
    """一种语言的表单文字"""
    header: str
    keys: Dict[str, str]
    names: Tuple[str, ...]
    cities: Tuple[str, ...]
    street: str
    office: str


TEMPLATES: Dict[str, FormTemplate] = {
    "en": FormTemplate(
        header="Registration Form",
        keys={"name": "Name:", "date": "Date:", "city": "City:", "phone": "Phone:",
              "email": "Email:", "address": "Address:"},
        names=("John Smith", "Mary Brown", "David Lee", "Anna White"),
        cities=("London", "Boston", "Sydney", "Toronto"),
        street="Street", office="Office use only"),
    "zh": FormTemplate(
        header="登记表格",
        keys={"name": "姓名：", "date": "日期：", "city": "城市：", "phone": "电话：",
              "email": "邮箱：", "address": "地址："},
        names=("张伟", "李娜", "王芳", "刘洋"),
        cities=("北京", "上海", "广州", "深圳"),
        street="路", office="仅供办公使用"),
    "ja": FormTemplate(
        header="申込用紙",
        keys={"name": "氏名：", "date": "日付：", "city": "都市：", "phone": "電話：",
              "email": "メール：", "address": "住所："},
        names=("山田太郎", "佐藤花子", "鈴木一郎", "高橋美咲"),
        cities=("東京", "大阪", "京都", "札幌"),
        street="丁目", office="事務局使用欄"),
    "es": FormTemplate(
        header="Formulario de Registro",
        keys={"name": "Nombre:", "date": "Fecha:", "city": "Ciudad:", "phone": "Teléfono:",
              "email": "Correo:", "address": "Dirección:"},
        names=("María García", "José López", "Ana Martínez", "Luis Pérez"),
        cities=("Madrid", "Sevilla", "Valencia", "Bilbao"),
        street="Calle", office="Uso oficial"),
    "fr": FormTemplate(
        header="Formulaire d'Inscription",
        keys={"name": "Nom:", "date": "Date:", "city": "Ville:", "phone": "Téléphone:",
              "email": "Courriel:", "address": "Adresse:"},
        names=("Pierre Dubois", "Marie Martin", "Luc Bernard", "Claire Petit"),
        cities=("Paris", "Lyon", "Nantes", "Lille"),
        street="Rue", office="Usage interne"),
    "it": FormTemplate(
        header="Modulo di Registrazione",
        keys={"name": "Nome:", "date": "Data:", "city": "Città:", "phone": "Telefono:",
              "email": "Email:", "address": "Indirizzo:"},
        names=("Marco Rossi", "Giulia Bianchi", "Luca Romano", "Sara Greco"),
        cities=("Roma", "Milano", "Napoli", "Torino"),
        street="Via", office="Uso interno"),
    "de": FormTemplate(
        header="Anmeldeformular",
        keys={"name": "Name:", "date": "Datum:", "city": "Stadt:", "phone": "Telefon:",
              "email": "E-Mail:", "address": "Adresse:"},
        names=("Hans Müller", "Anna Schmidt", "Jörg Weber", "Eva Fischer"),
        cities=("Berlin", "Hamburg", "München", "Köln"),
        street="Straße", office="Nur intern"),
    "pt": FormTemplate(
        header="Formulário de Inscrição",
        keys={"name": "Nome:", "date": "Data:", "city": "Cidade:", "phone": "Telefone:",
              "email": "Email:", "address": "Endereço:"},
        names=("João Silva", "Ana Santos", "Pedro Costa", "Rita Sousa"),
        cities=("Lisboa", "Porto", "Braga", "Faro"),
        street="Rua", office="Uso interno"),
}


@dataclass
class SynthSummary:
    """synth 输出的文件"""
    datasets: Dict[str, Path] = field(default_factory=dict)
    corpus: Optional[Path] = None
    rasters: List[Path] = field(default_factory=list)

    def to_dict(self) -> Dict[str, object]:
        return {
            'datasets': {k: str(v) for k, v in self.datasets.items()},
            'corpus': str(self.corpus) if self.corpus else None,
            'rasters': len(self.rasters),
        }


def _lang_index(lang: str) -> int:
    return sorted(TEMPLATES).index(lang)


def _char_width(lang: str) -> int:
    return 18 if lang in CJK_LANGS else 9


def _split_words(text: str, lang: str) -> List[str]:
    return [text] if lang in CJK_LANGS else text.split()


def _field_value(template: FormTemplate, name: str, lang: str, rng: np.random.Generator) -> str:
    if name == "name":
        return template.names[int(rng.integers(len(template.names)))]
    if name == "city":
        return template.cities[int(rng.integers(len(template.cities)))]
    if name == "date":
        d, m, y = int(rng.integers(1, 29)), int(rng.integers(1, 13)), int(rng.integers(2015, 2024))
        return f"{y}年{m}月{d}日" if lang in CJK_LANGS else f"{d:02d}/{m:02d}/{y}"
    if name == "phone":
        return f"{int(rng.integers(100, 1000))}-{int(rng.integers(1000, 10000))}"
    if name == "email":
        return f"user{int(rng.integers(1, 100))}@mail.com"
    number = int(rng.integers(1, 60))
    if lang == "en":
        return f"{number} {template.street}"
    if lang == "zh":
        return f"{template.cities[int(rng.integers(len(template.cities)))]}{number}{template.street}"
    if lang == "ja":
        return f"{number}{template.street}"
    return f"{template.street} {number}"


class _Layout:
    """按行从左到右放置词，记录像素框与行号"""

    def __init__(self, lang: str):
        self.cw = _char_width(lang)
        self.lang = lang
        self.words: List[Word] = []

    def place(self, text: str, x: int, y: int, line: int) -> Tuple[int, int, int]:
        """放置一段文本，返回 (首词下标, 末词下标, 结束 x)"""
        first = len(self.words)
        for token in _split_words(text, self.lang):
            px: Box = (x, y, x + self.cw * len(token), y + 22)
            self.words.append(Word(text=token, box=normalize_box(px, PAGE_W, PAGE_H), line_id=line, pixel_box=px))
            x = px[2] + self.cw
        return first, len(self.words) - 1, x


def _render(boxes: Sequence[Box], rng: np.random.Generator) -> np.ndarray:
    """白底上把每个词框画成深色块"""
    img = Image.new("L", (PAGE_W, PAGE_H), color=255)
    draw = ImageDraw.Draw(img)
    for x0, y0, x1, y1 in boxes:
        draw.rectangle([x0, y0 + 3, x1 - 1, y1 - 4], fill=int(rng.integers(20, 90)))
    return np.asarray(img, dtype=np.uint8).copy()


def synth_form(lang: str, index: int, seed: int) -> Document:
    """
    生成一份表单文档：标题（HEADER）、3~6 个键值对（QUESTION → ANSWER）、一个 OTHER

    Args:
        lang: 语言代码
        index: 文档序号
        seed: 随机种子
    """
    if lang not in TEMPLATES:
        raise ValidationError(f"synth 不支持语言 {lang}，可选 {sorted(TEMPLATES)}")
    template = TEMPLATES[lang]
    rng = np.random.default_rng([int(seed), _lang_index(lang), int(index)])
    layout = _Layout(lang)
    entities: List[EntitySpan] = []
    links: List[RelationLink] = []

    def add(first: int, last: int, label: str) -> int:
        ent_words = layout.words[first:last + 1]
        box = (ent_words[0].pixel_box[0], min(w.pixel_box[1] for w in ent_words),
               ent_words[-1].pixel_box[2], max(w.pixel_box[3] for w in ent_words))
        joiner = "" if lang in CJK_LANGS else " "
        entities.append(EntitySpan(id=len(entities), first_word=first, last_word=last, label=label,
                                   text=joiner.join(w.text for w in ent_words), box=box))
        return entities[-1].id

    header_width = _char_width(lang) * len(template.header)
    first, last, _ = layout.place(template.header, (PAGE_W - header_width) // 2, 40, 0)
    add(first, last, HEADER)

    n_fields = int(rng.integers(3, len(FIELDS) + 1))
    chosen = sorted(rng.choice(len(FIELDS), size=n_fields, replace=False).tolist())
    for line, k in enumerate(chosen, start=1):
        name = FIELDS[k]
        y = 110 + 60 * (line - 1)
        first, last, _ = layout.place(template.keys[name], 30, y, line)
        question = add(first, last, QUESTION)
        first, last, _ = layout.place(_field_value(template, name, lang, rng), 190, y, line)
        answer = add(first, last, ANSWER)
        links.append(RelationLink(head=question, tail=answer))

    first, last, _ = layout.place(template.office, 30, PAGE_H - 60, len(chosen) + 1)
    add(first, last, OTHER)

    doc_id = f"{lang}_{index:03d}"
    raster = _render([w.pixel_box for w in layout.words], rng)
    return Document(id=doc_id, lang=lang, page_w=PAGE_W, page_h=PAGE_H, words=layout.words,
                    entities=entities, links=links, raster=raster,
                    raster_path=f"images/{doc_id}.pgm").validate()


def synth_documents(lang: str, count: int, seed: int = 7) -> List[Document]:
    return [synth_form(lang, i, seed) for i in range(count)]


def _seed_lines(lang: str) -> List[str]:
    path = DEFAULT_PROFILE_DIR / f"{lang}.txt"
    return [line.strip() for line in path.read_text(encoding='utf-8').splitlines() if line.strip()]


def _wrap(text: str, lang: str) -> List[str]:
    if lang in CJK_LANGS:
        return [text[i:i + 16] for i in range(0, len(text), 16)]
    return textwrap.wrap(text, width=40)


def _corpus_record(record_id: str, lines: List[str], lang: str, rng: np.random.Generator,
                   raster_path: str) -> Tuple[dict, np.ndarray]:
    cw = 20 if lang in CJK_LANGS else 11
    runs, boxes = [], []
    for i, line in enumerate(lines):
        box = (30, 30 + 28 * i, 30 + cw * len(line), 50 + 28 * i)
        runs.append({'text': line, 'box': list(box), 'line': i})
        boxes.append(box)
    record = {'id': record_id, 'text_runs': runs, 'page': {'w': PAGE_W, 'h': PAGE_H, 'raster': raster_path}}
    return record, _render(boxes, rng)


def synth_corpus(langs: Sequence[str], count: int, seed: int) -> List[Tuple[dict, np.ndarray]]:
    """
    预训练语料记录：每种语言 count 条由种子文本轮换句序得到的长记录、
    一条过短记录，另加两条纯数字记录
    """
    records = []
    for lang in langs:
        sentences = _seed_lines(lang)
        joiner = "" if lang in CJK_LANGS else " "
        rng = np.random.default_rng([int(seed), _lang_index(lang), 1_000_000])
        for i in range(count):
            k = i % len(sentences)
            text = joiner.join(sentences[k:] + sentences[:k])
            rec_id = f"corpus_{lang}_{i:03d}"
            records.append(_corpus_record(rec_id, _wrap(text, lang)[:22], lang, rng,
                                          f"corpus_images/{rec_id}.pgm"))
        short = _wrap(sentences[0][:120], lang)
        rec_id = f"corpus_{lang}_short"
        records.append(_corpus_record(rec_id, short, lang, rng, f"corpus_images/{rec_id}.pgm"))

    rng = np.random.default_rng([int(seed), 2_000_000])
    for j in range(2):
        digits = " ".join(f"{int(rng.integers(1000, 10000))}" for _ in range(45))
        rec_id = f"corpus_digits_{j}"
        records.append(_corpus_record(rec_id, textwrap.wrap(digits, width=40), "en", rng,
                                      f"corpus_images/{rec_id}.pgm"))
    return records


def synth_dataset(out_dir: PathLike, docs: int = 8, langs: Sequence[str] = ("en", "zh"),
                  seed: int = 7, corpus_docs: Optional[int] = None) -> SynthSummary:
    """
    写出合成数据：xfund/<lang>.json 与 xfund/images/*.pgm，corpus.jsonl 与 corpus_images/*.pgm

    Args:
        out_dir: 输出目录
        docs: 每种语言的表单数
        langs: 语言列表
        seed: 随机种子
        corpus_docs: 每种语言的长语料记录数，默认等于 docs
    """
    if docs < 0:
        raise ValidationError(f"docs 必须非负: {docs}")
    out_dir = Path(out_dir)
    summary = SynthSummary()
    langs = [l.lower() for l in langs]
    for lang in langs:
        forms = synth_documents(lang, docs, seed)
        path = write_dataset(forms, out_dir / "xfund" / f"{lang}.json", lang=lang, write_rasters=True)
        summary.datasets[lang] = path
        summary.rasters.extend(out_dir / "xfund" / d.raster_path for d in forms)

    corpus_path = out_dir / "corpus.jsonl"
    lines = []
    for record, raster in synth_corpus(langs, docs if corpus_docs is None else corpus_docs, seed):
        summary.rasters.append(save_raster(raster, out_dir / record['page']['raster']))
        lines.append(json.dumps(record, ensure_ascii=False, sort_keys=True))
    corpus_path.write_text("\n".join(lines) + "\n", encoding='utf-8')
    summary.corpus = corpus_path
    logger.info(f"合成数据已写出: {out_dir} ({len(langs)} 种语言，每种 {docs} 份表单，"
                f"{len(lines)} 条语料记录)")
    return summary
