#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
词表与子词数据模型
"""

from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

from lxlab.models.document import Box

PAD, UNK, BOS, EOS, MASK = "<pad>", "<unk>", "<s>", "</s>", "<mask>"
SPECIAL_PIECES = (PAD, UNK, BOS, EOS, MASK)


@dataclass
class UnigramVocab:
    """
    Unigram 语言模型词表

    特殊符号固定占用 id 0..4（<pad> <unk> <s> </s> <mask>），
    普通子词从 5 开始按文件顺序编号
    """
    pieces: Dict[str, float]
    id_to_piece: List[str]

    def __post_init__(self):
        self._ids = {piece: i for i, piece in enumerate(self.id_to_piece)}
        self.max_piece_len = max((len(p) for p in self.pieces), default=1)
        self.unk_logprob = min(self.pieces.values(), default=0.0) - 10.0

    @classmethod
    def from_pieces(cls, pieces: Dict[str, float]) -> 'UnigramVocab':
        return cls(pieces=dict(pieces), id_to_piece=list(SPECIAL_PIECES) + list(pieces))

    @property
    def size(self) -> int:
        return len(self.id_to_piece)

    def __len__(self) -> int:
        return self.size

    def __contains__(self, piece: str) -> bool:
        return piece in self.pieces

    def piece_to_id(self, piece: str) -> int:
        return self._ids.get(piece, self.unk_id)

    def logprob(self, piece: str) -> Optional[float]:
        return self.pieces.get(piece)

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def unk_id(self) -> int:
        return 1

    @property
    def bos_id(self) -> int:
        return 2

    @property
    def eos_id(self) -> int:
        return 3

    @property
    def mask_id(self) -> int:
        return 4

    @property
    def special_ids(self) -> Tuple[int, ...]:
        return (0, 1, 2, 3, 4)


@dataclass
class SubwordToken:
    """子词：词表 id、在词内的字符区间 [start, end)、合并后的坐标框、所属词下标"""
    piece_id: int
    char_span: Tuple[int, int]
    box: Box
    word_index: int
    line_id: int = 0
