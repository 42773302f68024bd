#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
测试公共夹具：TINY 配置、内置词表、合成文档、隔离的工作目录
"""

import os
import sys
from pathlib import Path

import pytest

# 添加项目路径
sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from lxlab.config import DEFAULTS_PATH, Config
from lxlab.core.synth import synth_documents
from lxlab.core.tokenizer import load_default_vocab
from lxlab.models.document import Document, EntitySpan, RelationLink, Word
from lxlab.models.model_config import ModelConfig


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: 端到端训练验收（数分钟），默认也会执行")


@pytest.fixture(scope="session")
def vocab():
    return load_default_vocab()


@pytest.fixture
def tiny():
    return ModelConfig.preset("TINY")


@pytest.fixture
def roomy():
    """文本流足够长、合成表单不会被截断的 TINY 配置"""
    return ModelConfig.preset("TINY", max_text_len=192)


@pytest.fixture
def en_docs():
    return synth_documents("en", 8, seed=7)


@pytest.fixture
def zh_docs():
    return synth_documents("zh", 8, seed=7)


@pytest.fixture
def defaults():
    return Config.from_yaml(str(DEFAULTS_PATH))


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    """在空目录中运行，屏蔽 LXLAB_* 环境变量与用户目录配置"""
    for key in list(os.environ):
        if key.startswith("LXLAB_"):
            monkeypatch.delenv(key)
    monkeypatch.setenv("HOME", str(tmp_path / "home"))
    monkeypatch.chdir(tmp_path)
    return tmp_path


@pytest.fixture
def make_doc():
    """
    构造小文档

    words: [(text, box, line)]；entities: [(id, first, last, label)]；links: [(head, tail)]
    """
    def _make(words, entities=(), links=(), doc_id="doc", lang="en", raster=None):
        return Document(
            id=doc_id, lang=lang, page_w=1000, page_h=1000,
            words=[Word(text=t, box=tuple(b), line_id=line) for t, b, line in words],
            entities=[EntitySpan(id=i, first_word=f, last_word=l, label=label) for i, f, l, label in entities],
            links=[RelationLink(head=h, tail=t) for h, t in links],
            raster=raster,
        ).validate()
    return _make
