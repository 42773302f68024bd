#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Unigram 子词切分

加载 piece/logprob 词表，用 Viterbi 求对数概率和最大的切分，
并把词框等宽切成字符框后合并出每个子词的坐标框。
"""

import logging
import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

from lxlab.errors import VocabError
from lxlab.models.document import Box, Document, Word
from lxlab.models.vocab import SPECIAL_PIECES, UNK, SubwordToken, UnigramVocab

logger = logging.getLogger(__name__)

DEFAULT_VOCAB_PATH = Path(__file__).resolve().parent.parent / "data" / "vocab.tsv"

# (piece_id, start, end)
Piece = Tuple[int, int, int]


def load_vocab(path: Union[str, Path]) -> UnigramVocab:
    """
    从 TSV 加载 Unigram 词表

    每行 `piece<TAB>logprob`，UTF-8。特殊符号行会被跳过（id 固定为 0..4）。

    Raises:
        VocabError: 文件不存在、行格式错误、logprob 为正或非有限、piece 重复、没有普通 piece
    """
    path = Path(path)
    if not path.exists():
        raise VocabError(f"词表文件不存在: {path}")

    pieces: Dict[str, float] = {}
    with open(path, 'r', encoding='utf-8') as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.rstrip('\n').rstrip('\r')
            if not line.strip():
                continue
            parts = line.split('\t')
            if len(parts) != 2 or not parts[0]:
                raise VocabError(f"{path}:{lineno} 格式应为 piece<TAB>logprob: {line!r}")
            piece, value = parts
            if piece in SPECIAL_PIECES:
                continue
            try:
                logprob = float(value)
            except ValueError as e:
                raise VocabError(f"{path}:{lineno} logprob 不是数字: {value!r}") from e
            if not math.isfinite(logprob) or logprob > 0:
                raise VocabError(f"{path}:{lineno} logprob 必须是 ≤ 0 的有限值: {logprob}")
            if piece in pieces:
                raise VocabError(f"{path}:{lineno} piece 重复: {piece!r}")
            pieces[piece] = logprob

    if not pieces:
        raise VocabError(f"词表为空: {path}")
    vocab = UnigramVocab.from_pieces(pieces)
    logger.info(f"加载词表 {path}: {len(pieces)} 个 piece（含特殊符号共 {vocab.size}）")
    return vocab


def load_default_vocab() -> UnigramVocab:
    """包内置的小型多语言词表"""
    return load_vocab(DEFAULT_VOCAB_PATH)


def _viterbi(text: str, vocab: UnigramVocab) -> Tuple[float, List[Piece]]:
    """
    后缀动态规划：best[i] 为 text[i:] 的最优切分

    比较键为 (-得分, piece 数, 首个 piece 的表面串)，取最小
    """
    n = len(text)
    # best[i] = (score, count, first_surface, next_index, piece_id)
    best: List[Optional[Tuple[float, int, str, int, int]]] = [None] * (n + 1)
    best[n] = (0.0, 0, "", n, -1)

    for i in range(n - 1, -1, -1):
        chosen = None
        chosen_key = None
        for j in range(i + 1, min(n, i + vocab.max_piece_len) + 1):
            surface = text[i:j]
            logprob = vocab.logprob(surface)
            if logprob is None:
                continue
            tail = best[j]
            candidate = (logprob + tail[0], tail[1] + 1, surface, j, vocab.piece_to_id(surface))
            key = (-candidate[0], candidate[1], candidate[2])
            if chosen_key is None or key < chosen_key:
                chosen, chosen_key = candidate, key
        if text[i] not in vocab:
            tail = best[i + 1]
            candidate = (vocab.unk_logprob + tail[0], tail[1] + 1, text[i], i + 1, vocab.unk_id)
            key = (-candidate[0], candidate[1], candidate[2])
            if chosen_key is None or key < chosen_key:
                chosen, chosen_key = candidate, key
        best[i] = chosen

    pieces: List[Piece] = []
    i = 0
    while i < n:
        _, _, _, j, piece_id = best[i]
        pieces.append((piece_id, i, j))
        i = j
    return best[0][0], pieces


def segment_with_spans(text: str, vocab: UnigramVocab) -> List[Piece]:
    """
    Viterbi 切分，返回 (piece_id, start, end)

    没有任何 piece 覆盖的字符输出 UNK，占一个字符
    """
    if not text:
        return []
    return _viterbi(text, vocab)[1]


def segment(text: str, vocab: UnigramVocab) -> List[str]:
    """切分结果的 piece 字符串视图（UNK 显示为 <unk>）"""
    return [vocab.id_to_piece[pid] if pid != vocab.unk_id else UNK
            for pid, _, _ in segment_with_spans(text, vocab)]


def segment_score(text: str, vocab: UnigramVocab) -> float:
    """最优切分的对数概率和"""
    if not text:
        return 0.0
    return _viterbi(text, vocab)[0]


def char_boxes(word: Word) -> List[Box]:
    """
    把词框按字符数等宽切成竖条

    每条宽 ⌊(x1-x0)/k⌋，最后一条吸收余数；高度与词框相同
    """
    x0, y0, x1, y1 = word.box
    k = len(word.text)
    if k <= 1:
        return [tuple(word.box)] * k
    step = (x1 - x0) // k
    boxes = [(x0 + i * step, y0, x0 + (i + 1) * step, y1) for i in range(k - 1)]
    boxes.append((x0 + (k - 1) * step, y0, x1, y1))
    return boxes


def merge_boxes(boxes: Sequence[Box]) -> Box:
    """包含所有输入框的最小轴对齐框"""
    return (
        min(b[0] for b in boxes),
        min(b[1] for b in boxes),
        max(b[2] for b in boxes),
        max(b[3] for b in boxes),
    )


def tokenize_word(word: Word, word_index: int, vocab: UnigramVocab) -> List[SubwordToken]:
    chars = char_boxes(word)
    return [
        SubwordToken(
            piece_id=piece_id,
            char_span=(start, end),
            box=merge_boxes(chars[start:end]),
            word_index=word_index,
            line_id=word.line_id,
        )
        for piece_id, start, end in segment_with_spans(word.text, vocab)
    ]


def tokenize_document(doc: Document, vocab: UnigramVocab) -> List[SubwordToken]:
    """
    按阅读顺序逐词切分

    Returns:
        子词列表；char_span 为词内字符区间，box 为所含字符框的合并
    """
    tokens: List[SubwordToken] = []
    for i, word in enumerate(doc.words):
        tokens.extend(tokenize_word(word, i, vocab))
    return tokens


def detokenize(tokens: Sequence[SubwordToken], vocab: UnigramVocab, words: Sequence[Word]) -> List[str]:
    """
    由子词还原每个词的文本，UNK 还原为源字符

    Returns:
        与 words 等长的字符串列表
    """
    surfaces = [""] * len(words)
    for token in tokens:
        start, end = token.char_span
        if token.piece_id == vocab.unk_id:
            piece = words[token.word_index].text[start:end]
        else:
            piece = vocab.id_to_piece[token.piece_id]
        surfaces[token.word_index] += piece
    return surfaces
