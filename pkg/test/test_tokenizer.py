#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Unigram 切分：与穷举最优解比较，子词坐标框为字符框的最小覆盖
"""

import itertools

import pytest

from lxlab.core.synth import synth_documents
from lxlab.core.tokenizer import (char_boxes, detokenize, load_vocab, merge_boxes, segment,
                                  segment_score, segment_with_spans, tokenize_document, tokenize_word)
from lxlab.errors import VocabError
from lxlab.models.document import Word
from lxlab.models.vocab import UnigramVocab

# 五个 piece；对数概率互不相同，最优切分唯一
SMALL_PIECES = {"a": -1.0, "b": -1.7, "ab": -2.3, "ba": -2.9, "aab": -3.1}

# 对数概率可精确相加，得分相同的切分很多
TIED_PIECES = {"a": -1.0, "b": -1.0, "aa": -2.0, "ab": -2.0}


def _segmentations(text: str, vocab: UnigramVocab):
    """枚举 text 的全部切分，产出 (得分, piece 元组)；词表外的单字符记为 UNK"""
    if not text:
        yield 0.0, ()
        return
    for end in range(1, len(text) + 1):
        piece = text[:end]
        if piece in vocab:
            logprob = vocab.logprob(piece)
        elif end == 1:
            logprob = vocab.unk_logprob
        else:
            continue
        for score, rest in _segmentations(text[end:], vocab):
            yield logprob + score, (piece,) + rest


def _brute_force(text: str, vocab: UnigramVocab) -> float:
    return max(score for score, _ in _segmentations(text, vocab))


def _brute_force_choice(text: str, vocab: UnigramVocab) -> list:
    """得分最高，其次 piece 最少，再按 piece 序列字典序最小"""
    _, pieces = min(_segmentations(text, vocab), key=lambda s: (-s[0], len(s[1]), s[1]))
    return list(pieces)


@pytest.fixture
def small_vocab():
    return UnigramVocab.from_pieces(SMALL_PIECES)


class TestVocab:

    def test_special_ids(self, vocab):
        assert (vocab.pad_id, vocab.unk_id, vocab.bos_id, vocab.eos_id, vocab.mask_id) == (0, 1, 2, 3, 4)
        assert vocab.id_to_piece[:5] == ["<pad>", "<unk>", "<s>", "</s>", "<mask>"]
        assert vocab.size <= 512

    def test_unk_logprob(self, small_vocab):
        assert small_vocab.unk_logprob == pytest.approx(-13.1)
        assert small_vocab.max_piece_len == 3

    @pytest.mark.parametrize("content", [
        "a\t0.5\n",        # 正的对数概率
        "a\t-1\na\t-2\n",  # 重复
        "a -1\n",          # 缺少制表符
        "a\tnan\n",
        "<pad>\t0\n",      # 只有特殊符号
    ])
    def test_invalid_files(self, tmp_path, content):
        path = tmp_path / "vocab.tsv"
        path.write_text(content, encoding='utf-8')
        with pytest.raises(VocabError):
            load_vocab(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(VocabError):
            load_vocab(tmp_path / "none.tsv")


class TestViterbi:

    def test_matches_brute_force(self, small_vocab):
        """{a, b} 上长度 ≤ 12 的全部串，以及 {a, b, c} 上长度 ≤ 6 的全部串，与穷举最优值一致"""
        strings = ["".join(s) for n in range(1, 13) for s in itertools.product("ab", repeat=n)]
        strings += ["".join(s) for n in range(1, 7) for s in itertools.product("abc", repeat=n) if "c" in s]
        for text in strings:
            assert segment_score(text, small_vocab) == pytest.approx(_brute_force(text, small_vocab), abs=1e-12)
            spans = segment_with_spans(text, small_vocab)
            assert "".join(text[s:e] for _, s, e in spans) == text
            total = sum(small_vocab.logprob(text[s:e]) if pid != small_vocab.unk_id else small_vocab.unk_logprob
                        for pid, s, e in spans)
            assert total == pytest.approx(segment_score(text, small_vocab), abs=1e-12)

    def test_ties_prefer_fewer_pieces(self):
        tied = UnigramVocab.from_pieces(TIED_PIECES)
        # ab 与 a+b 同为 -2
        assert segment("ab", tied) == ["ab"]
        assert segment("aa", tied) == ["aa"]

    def test_ties_prefer_smallest_first_piece(self):
        tied = UnigramVocab.from_pieces(TIED_PIECES)
        # a+ab 与 aa+b 同为 -3 且都是两段，首段 "a" < "aa"
        assert segment("aab", tied) == ["a", "ab"]
        assert segment("aaa", tied) == ["a", "aa"]

    def test_tie_break_matches_brute_force(self):
        tied = UnigramVocab.from_pieces(TIED_PIECES)
        for n in range(1, 11):
            for chars in itertools.product("ab", repeat=n):
                text = "".join(chars)
                assert segment(text, tied) == _brute_force_choice(text, tied), text

    def test_pair_beats_two_singles(self):
        vocab = UnigramVocab.from_pieces({"a": -2.3, "b": -2.3, "ab": -3.0})
        assert segment("ab", vocab) == ["ab"]
        assert segment("ba", vocab) == ["b", "a"]
        assert segment("ax", vocab) == ["a", "<unk>"]

    def test_known_segmentation(self, small_vocab):
        # aab: -3.1 胜过 a+ab (-3.3) 与 a+a+b (-3.7)
        assert segment("aab", small_vocab) == ["aab"]
        assert segment("abc", small_vocab) == ["ab", "<unk>"]

    def test_unknown_characters(self, small_vocab):
        spans = segment_with_spans("xyz", small_vocab)
        assert [pid for pid, _, _ in spans] == [small_vocab.unk_id] * 3
        assert [(s, e) for _, s, e in spans] == [(0, 1), (1, 2), (2, 3)]

    def test_empty(self, small_vocab):
        assert segment("", small_vocab) == []
        assert segment_score("", small_vocab) == 0.0

    def test_builtin_vocab_covers_forms(self, vocab):
        assert segment("the", vocab) == ["the"]


class TestBoxes:

    def test_char_slices(self):
        word = Word(text="abcd", box=(10, 0, 31, 5))
        assert char_boxes(word) == [(10, 0, 15, 5), (15, 0, 20, 5), (20, 0, 25, 5), (25, 0, 31, 5)]
        assert char_boxes(Word(text="a", box=(1, 2, 3, 4))) == [(1, 2, 3, 4)]

    def test_token_boxes_are_minimal_covers(self, vocab):
        """1,000 个随机合成文档上：子词框 = 所含字符框的合并，且落在词框内"""
        langs = ("en", "zh", "ja", "es", "fr", "it", "de", "pt")
        docs = [doc for i, lang in enumerate(langs) for doc in synth_documents(lang, 125, seed=100 + i)]
        assert len(docs) == 1000
        for doc in docs:
            for token in tokenize_document(doc, vocab):
                word = doc.words[token.word_index]
                start, end = token.char_span
                chars = char_boxes(word)[start:end]
                assert token.box == merge_boxes(chars)
                x0, y0, x1, y1 = token.box
                assert word.box[0] <= x0 <= x1 <= word.box[2]
                assert word.box[1] <= y0 <= y1 <= word.box[3]
                for c in chars:
                    assert x0 <= c[0] and c[2] <= x1

    def test_detokenize_restores_words(self, vocab, en_docs, zh_docs):
        for doc in en_docs + zh_docs:
            tokens = tokenize_document(doc, vocab)
            assert detokenize(tokens, vocab, doc.words) == [w.text for w in doc.words]

    def test_line_and_word_index(self, vocab):
        word = Word(text="theory", box=(0, 0, 600, 10), line_id=3)
        tokens = tokenize_word(word, 5, vocab)
        assert all(t.word_index == 5 and t.line_id == 3 for t in tokens)
        assert tokens[0].char_span[0] == 0 and tokens[-1].char_span[1] == 6
