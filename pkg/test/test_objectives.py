#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
预训练目标：MVLM 掩码比例、TIA 行遮盖、TIM 错排与三项损失
"""

import logging

import numpy as np
import pytest
import torch

from lxlab.core.encoder import LayoutEncoder
from lxlab.core.features import encode_documents, raster_to_patches
from lxlab.core.numerics import IGNORE_INDEX
from lxlab.core.objectives import (ObjectiveConfig, PretrainHeads, apply_mvlm, apply_tia, apply_tim,
                                   build_pretrain_batch, pretrain_loss)
from lxlab.errors import ConfigError


class TestMvlm:

    def test_only_maskable_positions(self, vocab):
        rng = np.random.default_rng(0)
        ids = torch.full((20, 50), 100, dtype=torch.long)
        maskable = torch.from_numpy(rng.random((20, 50)) < 0.5)
        corrupted, targets = apply_mvlm(ids, maskable, vocab, np.random.default_rng(1), mask_prob=0.9)
        selected = targets != IGNORE_INDEX
        assert not bool((selected & ~maskable).any())
        assert bool((corrupted[~maskable] == 100).all())
        assert bool((targets[selected] == 100).all())

    def test_split_statistics(self, vocab):
        """选中比例约 15%，其中约 80% 换成 <mask>、10% 换成随机 id"""
        ids = torch.full((100, 1000), 100, dtype=torch.long)
        maskable = torch.ones_like(ids, dtype=torch.bool)
        corrupted, targets = apply_mvlm(ids, maskable, vocab, np.random.default_rng(2))
        selected = targets != IGNORE_INDEX
        n = int(selected.sum())
        assert abs(n / ids.numel() - 0.15) < 0.01
        masked = int((corrupted[selected] == vocab.mask_id).sum()) / n
        replaced = int(((corrupted[selected] != vocab.mask_id) & (corrupted[selected] != 100)).sum()) / n
        assert abs(masked - 0.8) < 0.02
        assert abs(replaced - 0.1) < 0.02
        # 随机 id 不会落在特殊符号上
        assert int(corrupted[selected & (corrupted != vocab.mask_id)].min()) >= len(vocab.special_ids)

    def test_seeded(self, vocab):
        ids = torch.arange(5, 305, dtype=torch.long).reshape(3, 100)
        maskable = torch.ones_like(ids, dtype=torch.bool)
        a = apply_mvlm(ids, maskable, vocab, np.random.default_rng(9))
        b = apply_mvlm(ids, maskable, vocab, np.random.default_rng(9))
        assert torch.equal(a[0], b[0]) and torch.equal(a[1], b[1])

    def test_batch_keeps_boxes(self, tiny, vocab, en_docs):
        objectives = ObjectiveConfig(mask_prob=0.5)
        batch = build_pretrain_batch(en_docs[:2], vocab, tiny, objectives, np.random.default_rng(0))
        plain = encode_documents(en_docs[:2], vocab, tiny)
        assert torch.equal(batch.encoded.boxes, plain.boxes)
        changed = batch.encoded.input_ids != plain.input_ids
        assert not bool((changed & (batch.mvlm_targets == IGNORE_INDEX)).any())

    def test_invalid_split(self):
        with pytest.raises(ConfigError):
            ObjectiveConfig(mask_split=(0.5, 0.5, 0.5))


class TestTia:

    @pytest.fixture
    def two_lines(self, make_doc):
        words = [("top", (0, 0, 400, 100), 0), ("row", (500, 0, 900, 100), 0),
                 ("low", (0, 500, 400, 600), 1)]
        return make_doc(words)

    def test_line_membership(self, two_lines):
        """只遮盖第 0 行时，恰好第 0 行的子词标签为 1，像素只在第 0 行词框内置零"""
        token_lines = [-1, 0, 0, 0, 1, -1, -1]
        seed = next(s for s in range(100) if np.subtract(*np.random.default_rng(s).random(2)) < 0)
        d0, d1 = np.random.default_rng(seed).random(2)
        raster = np.full((100, 100), 255, dtype=np.uint8)

        result = apply_tia(two_lines, raster, np.random.default_rng(seed), token_lines,
                           cover_prob=(d0 + d1) / 2)
        assert result.covered_lines == [0]
        assert result.labels == [IGNORE_INDEX, 1, 1, 1, 0, IGNORE_INDEX, IGNORE_INDEX]

        expected = np.full((100, 100), 255, dtype=np.uint8)
        expected[0:10, 0:40] = 0
        expected[0:10, 50:90] = 0
        assert np.array_equal(result.raster, expected)
        # 原栅格不被修改
        assert int(raster.min()) == 255

    def test_extreme_probabilities(self, two_lines):
        raster = np.full((100, 100), 255, dtype=np.uint8)
        lines = [-1, 0, 1, -1]
        none = apply_tia(two_lines, raster, np.random.default_rng(0), lines, cover_prob=0.0)
        assert none.covered_lines == [] and none.labels == [IGNORE_INDEX, 0, 0, IGNORE_INDEX]
        full = apply_tia(two_lines, raster, np.random.default_rng(0), lines, cover_prob=1.0)
        assert full.covered_lines == [0, 1] and full.labels == [IGNORE_INDEX, 1, 1, IGNORE_INDEX]

    def test_missing_raster_is_skipped(self, two_lines):
        result = apply_tia(two_lines, None, np.random.default_rng(0), [-1, 0, 1, -1], cover_prob=1.0)
        assert result.skipped and result.raster is None
        assert result.labels == [IGNORE_INDEX] * 4


class TestTim:

    def test_derangement(self):
        """全部被选中时每个样本都换成别的样本的图像"""
        rasters = [np.full((4, 4), i, dtype=np.uint8) for i in range(6)]
        for seed in range(200):
            result, labels = apply_tim(rasters, np.random.default_rng(seed), swap_prob=1.0)
            assert labels == [0] * 6
            assert all(result[i] is not rasters[i] for i in range(6))
            assert sorted(int(r[0, 0]) for r in result) == list(range(6))

    def test_pair_swaps(self):
        a, b = np.zeros((2, 2), np.uint8), np.ones((2, 2), np.uint8)
        result, labels = apply_tim([a, b], np.random.default_rng(0), swap_prob=1.0)
        assert result[0] is b and result[1] is a and labels == [0, 0]

    def test_single_sample_never_swaps(self):
        a = np.zeros((2, 2), np.uint8)
        for seed in range(20):
            result, labels = apply_tim([a], np.random.default_rng(seed), swap_prob=1.0)
            assert result[0] is a and labels == [1]

    def test_rasterless_samples_are_left_out(self):
        """没有栅格的样本不被替换、也不把 None 换给别人"""
        rasters = [np.full((2, 2), i, dtype=np.uint8) for i in range(4)]
        rasters[1] = None
        rasters[3] = None
        for seed in range(50):
            result, labels = apply_tim(rasters, np.random.default_rng(seed), swap_prob=1.0)
            assert labels == [0, 1, 0, 1]
            assert result[0] is rasters[2] and result[2] is rasters[0]
            assert result[1] is None and result[3] is None

    def test_one_raster_never_swaps(self):
        a = np.zeros((2, 2), np.uint8)
        for seed in range(20):
            result, labels = apply_tim([None, a, None], np.random.default_rng(seed), swap_prob=1.0)
            assert labels == [1, 1, 1] and result[1] is a

    def test_no_swap(self):
        rasters = [np.zeros((2, 2), np.uint8) for _ in range(3)]
        result, labels = apply_tim(rasters, np.random.default_rng(0), swap_prob=0.0)
        assert labels == [1, 1, 1] and all(r is s for r, s in zip(result, rasters))

    def test_swap_rate(self):
        rasters = [np.zeros((2, 2), np.uint8) for _ in range(8)]
        rng = np.random.default_rng(4)
        labels = [y for _ in range(500) for y in apply_tim(rasters, rng, swap_prob=0.5)[1]]
        assert abs(labels.count(0) / len(labels) - 0.5) < 0.03


class TestPretrainBatch:

    def test_patches_from_final_rasters(self, tiny, vocab, en_docs):
        objectives = ObjectiveConfig(cover_prob=0.0, swap_prob=1.0)
        batch = build_pretrain_batch(en_docs[:2], vocab, tiny, objectives, np.random.default_rng(0))
        assert batch.tim_targets.tolist() == [0, 0]
        torch.testing.assert_close(batch.encoded.patches[0], raster_to_patches(en_docs[1].raster, tiny))
        torch.testing.assert_close(batch.encoded.patches[1], raster_to_patches(en_docs[0].raster, tiny))
        # 被替换图像的样本：真实文本位置 TIA 目标为 1（MVLM 位置除外）
        for i, align in enumerate(batch.encoded.alignments):
            lines = torch.tensor(align.token_lines)
            keep = (lines >= 0) & (batch.mvlm_targets[i] == IGNORE_INDEX)
            assert bool((batch.tia_targets[i][keep] == 1).all())

    def test_covered_patches_differ(self, tiny, vocab, en_docs):
        objectives = ObjectiveConfig(cover_prob=1.0, swap_prob=0.0)
        batch = build_pretrain_batch(en_docs[:1], vocab, tiny, objectives, np.random.default_rng(0))
        plain = encode_documents(en_docs[:1], vocab, tiny)
        assert batch.covered_lines[0]
        assert float(batch.encoded.patches.sum()) < float(plain.patches.sum())

    def test_tia_ignored_at_masked_positions(self, tiny, vocab, en_docs):
        batch = build_pretrain_batch(en_docs[:3], vocab, tiny, ObjectiveConfig(mask_prob=0.3),
                                     np.random.default_rng(5))
        masked = batch.mvlm_targets != IGNORE_INDEX
        assert bool(masked.any())
        assert bool((batch.tia_targets[masked] == IGNORE_INDEX).all())

    def test_missing_rasters(self, tiny, vocab, en_docs):
        docs = [en_docs[0]]
        docs[0].raster = None
        batch = build_pretrain_batch(docs, vocab, tiny, ObjectiveConfig(), np.random.default_rng(0))
        assert batch.tia_skipped == [True]
        assert bool((batch.tia_targets == IGNORE_INDEX).all())
        assert not bool(batch.encoded.has_raster[0])

    def test_rasterless_document_keeps_tim_label(self, tiny, vocab, en_docs):
        docs = en_docs[:3]
        docs[1].raster = None
        objectives = ObjectiveConfig(cover_prob=0.0, swap_prob=1.0)
        batch = build_pretrain_batch(docs, vocab, tiny, objectives, np.random.default_rng(2))
        assert batch.tim_targets.tolist() == [0, 1, 0]
        assert batch.encoded.has_raster.tolist() == [True, False, True]
        assert float(batch.encoded.patches[1].abs().sum()) == 0.0
        assert bool((batch.tia_targets[1] == IGNORE_INDEX).all())
        torch.testing.assert_close(batch.encoded.patches[0], raster_to_patches(docs[2].raster, tiny))


class TestPretrainLoss:

    def test_total_is_sum(self, tiny, vocab, en_docs):
        model, heads = LayoutEncoder(tiny), PretrainHeads(tiny)
        batch = build_pretrain_batch(en_docs[:4], vocab, tiny, ObjectiveConfig(), np.random.default_rng(1))
        report = pretrain_loss(model(batch.encoded), batch, heads)
        assert float(report.total) == pytest.approx(float(report.mvlm + report.tia + report.tim), abs=1e-12)
        assert all(v > 0 for v in report.to_dict().values())
        report.total.backward()
        assert torch.isfinite(heads.mvlm_decoder.weight.grad).all()
        assert torch.isfinite(model.layers[0].query.weight.grad).all()

    def test_empty_mvlm_warns(self, tiny, vocab, en_docs, caplog):
        model, heads = LayoutEncoder(tiny), PretrainHeads(tiny)
        batch = build_pretrain_batch(en_docs[:2], vocab, tiny, ObjectiveConfig(mask_prob=0.0),
                                     np.random.default_rng(1))
        with caplog.at_level(logging.WARNING):
            report = pretrain_loss(model(batch.encoded), batch, heads)
        assert float(report.mvlm) == 0.0
        assert "MVLM" in caplog.text
