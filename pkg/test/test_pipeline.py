#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
语料流水线：语言检测、过滤边界、按语言分片与指数化采样
"""

import json
import math

import pytest

from lxlab.core.pipeline import (DEFAULT_PROFILE_DIR, LanguageSampler, build_corpus, corpus_stats,
                                 detect_language, filter_record, ingest_record, load_profiles, load_shards,
                                 read_records, sample_stream, sampling_probs, shard_counts,
                                 trigram_frequencies)
from lxlab.core.synth import synth_dataset
from lxlab.errors import SchemaError, ValidationError
from lxlab.models.corpus import CorpusRecord, DiscardReason, SamplingSpec


def _record(text: str, record_id: str = "r0") -> CorpusRecord:
    return CorpusRecord.from_dict({'id': record_id, 'text_runs': [{'text': text, 'box': [0, 0, 400, 20]}],
                                   'page': {'w': 500, 'h': 700}})


@pytest.fixture(scope="module")
def profiles():
    return load_profiles()


class TestSamplingProbs:

    def test_two_languages(self):
        """{A:75, B:25}，α=0.7 → p_A ≈ 0.6833"""
        probs = sampling_probs(SamplingSpec({"A": 75, "B": 25}, alpha=0.7))
        a, b = 0.75 ** 0.7, 0.25 ** 0.7
        assert abs(probs["A"] - a / (a + b)) <= 1e-12
        assert abs(probs["B"] - b / (a + b)) <= 1e-12
        assert round(probs["A"], 4) == 0.6833

    def test_limits(self):
        counts = {"A": 75, "B": 20, "C": 5}
        assert sampling_probs(SamplingSpec(counts, alpha=1.0)) == {"A": 0.75, "B": 0.2, "C": 0.05}
        uniform = sampling_probs(SamplingSpec(counts, alpha=0.0))
        assert all(abs(p - 1 / 3) <= 1e-12 for p in uniform.values())

    def test_zero_count_language(self):
        probs = sampling_probs(SamplingSpec({"A": 10, "B": 0}, alpha=0.0))
        assert probs == {"A": 1.0, "B": 0.0}

    def test_invalid(self):
        with pytest.raises(ValidationError):
            sampling_probs(SamplingSpec({"A": 0, "B": 0}))
        with pytest.raises(ValidationError):
            SamplingSpec({"A": 1}, alpha=-0.1)
        with pytest.raises(ValidationError):
            SamplingSpec({"A": -1})


class TestLanguageSampler:

    def test_empirical_frequency(self):
        """10,000 次抽取的频率落在 5σ 以内"""
        shards = {"A": list(range(75)), "B": list(range(25))}
        sampler = LanguageSampler(shards, SamplingSpec({"A": 75, "B": 25}, alpha=0.7, seed=3))
        n = 10_000
        hits = sum(sampler.next_batch().lang == "A" for _ in range(n))
        p = sampling_probs(SamplingSpec({"A": 75, "B": 25}, alpha=0.7))["A"]
        assert abs(hits - n * p) <= 5 * math.sqrt(n * p * (1 - p))

    def test_round_robin_and_epochs(self):
        sampler = LanguageSampler({"A": [1, 2, 3]}, SamplingSpec({"A": 3}), batch_size=2)
        batches = [sampler.next_batch() for _ in range(3)]
        assert [b.items for b in batches] == [[1, 2], [3, 1], [2, 3]]
        assert [b.epoch for b in batches] == [0, 1, 1]

    def test_stream_is_deterministic(self):
        shards = {"A": list(range(10)), "B": list(range(10, 14))}
        spec = SamplingSpec({"A": 10, "B": 4}, seed=11)
        first = [(b.lang, b.items) for _, b in zip(range(50), sample_stream(shards, spec, 2))]
        second = [(b.lang, b.items) for _, b in zip(range(50), sample_stream(shards, spec, 2))]
        assert first == second

    def test_empty_shard(self):
        with pytest.raises(ValidationError):
            LanguageSampler({"A": [1], "B": []}, SamplingSpec({"A": 1, "B": 1}))
        with pytest.raises(ValidationError):
            LanguageSampler({"A": [1]}, SamplingSpec({"A": 1}), batch_size=0)


class TestDetection:

    def test_trigram_frequencies(self):
        freqs = trigram_frequencies("Ab  ab\nab")
        assert abs(sum(freqs.values()) - 1.0) <= 1e-12
        assert freqs["ab "] == pytest.approx(1 / 3)
        assert trigram_frequencies("ab") == {}

    def test_seed_texts_detect_themselves(self, profiles):
        assert sorted(profiles) == ["de", "en", "es", "fr", "it", "ja", "pt", "zh"]
        for lang in profiles:
            text = (DEFAULT_PROFILE_DIR / f"{lang}.txt").read_text(encoding='utf-8')
            detected, score = detect_language(text, profiles)
            assert detected == lang
            assert score > 0.99

    def test_too_short_to_detect(self, profiles):
        assert detect_language("ab", profiles) == ("und", 0.0)

    def test_empty_profile_dir(self, tmp_path):
        with pytest.raises(ValidationError):
            load_profiles(tmp_path)


class TestFilter:

    def test_length_boundary(self):
        detector = lambda text: ("en", 0.9)
        assert not filter_record(_record("a" * 199), detector=detector).keep
        assert filter_record(_record("a" * 199), detector=detector).reason is DiscardReason.TOO_SHORT
        assert filter_record(_record("a" * 200), detector=detector).keep

    def test_score_boundary(self):
        text = "a" * 300
        at = filter_record(_record(text), detector=lambda t: ("en", 0.5))
        assert not at.keep and at.reason is DiscardReason.LOW_LANG_SCORE
        above = filter_record(_record(text), detector=lambda t: ("en", math.nextafter(0.5, 1.0)))
        assert above.keep and above.lang == "en"

    def test_needs_detector_or_profiles(self):
        with pytest.raises(ValidationError):
            filter_record(_record("abc"))


class TestIngest:

    def test_boxes_and_lines(self):
        record = CorpusRecord.from_dict({
            'id': "r1",
            'text_runs': [{'text': "ab cd", 'box': [0, 0, 100, 20], 'line': 0},
                          {'text': "ef", 'box': [0, 40, 50, 60], 'line': 1}],
            'page': {'w': 500, 'h': 200},
        })
        doc = ingest_record(record, lang="en")
        assert [w.text for w in doc.words] == ["ab", "cd", "ef"]
        assert [w.line_id for w in doc.words] == [0, 0, 1]
        assert doc.words[0].pixel_box == (0, 0, 40, 20)
        assert doc.words[1].box == (120, 0, 200, 100)
        assert doc.lang == "en" and doc.raster is None

    def test_derived_lines(self):
        record = CorpusRecord.from_dict({
            'id': "r2",
            'text_runs': [{'text': "x", 'box': [0, 50, 10, 70]}, {'text': "y", 'box': [0, 0, 10, 20]}],
            'page': {'w': 100, 'h': 100},
        })
        assert [w.line_id for w in ingest_record(record).words] == [1, 0]

    def test_box_outside_page(self):
        record = CorpusRecord.from_dict({'id': "r3", 'text_runs': [{'text': "x", 'box': [0, 0, 10, 20]}],
                                         'page': {'w': 0, 'h': 100}})
        with pytest.raises(SchemaError):
            ingest_record(record)

    def test_record_schema(self, tmp_path):
        with pytest.raises(SchemaError):
            CorpusRecord.from_dict({'id': "x", 'page': {'w': 1, 'h': 1}})
        path = tmp_path / "bad.jsonl"
        path.write_text('{"id": "a"\n', encoding='utf-8')
        with pytest.raises(SchemaError):
            read_records(path)
        with pytest.raises(ValidationError):
            read_records(tmp_path / "none.jsonl")


class TestBuildCorpus:

    @pytest.fixture(scope="class")
    def built(self, tmp_path_factory, profiles):
        root = tmp_path_factory.mktemp("corpus")
        summary = synth_dataset(root / "synth", docs=3, langs=("en", "zh"), seed=7)
        stats = build_corpus(summary.corpus, root / "out", profiles=profiles, workers=3, progress=False)
        return root, summary, stats

    def test_filtering(self, built):
        """短记录与纯数字记录被丢弃，其余按检测到的语言分片"""
        root, _, stats = built
        assert stats.kept == {"en": 3, "zh": 3}
        assert stats.total_discarded == 4
        reasons = [r for by_reason in stats.discarded.values() for r, n in by_reason.items() for _ in range(n)]
        assert sorted(reasons) == ["low_lang_score", "low_lang_score", "too_short", "too_short"]
        assert shard_counts(root / "out" / "shards") == {"en": 3, "zh": 3}

    def test_stats_table(self, built):
        root, _, _ = built
        frame = corpus_stats(root / "out" / "stats.json")
        assert int(frame.loc["all", "total"]) == 10
        assert int(frame.loc["all", "kept"]) == 6
        assert int(frame.loc["all", "too_short"]) == 2 and int(frame.loc["all", "low_lang_score"]) == 2

    def test_inconsistent_stats(self, built, tmp_path):
        root, _, _ = built
        raw = json.loads((root / "out" / "stats.json").read_text(encoding='utf-8'))
        raw['total'] += 1
        path = tmp_path / "stats.json"
        path.write_text(json.dumps(raw), encoding='utf-8')
        with pytest.raises(ValidationError):
            corpus_stats(path)

    def test_shards_load_with_rasters(self, built):
        root, _, _ = built
        shards = load_shards(root / "out" / "shards")
        assert sorted(shards) == ["en", "zh"]
        doc = shards["zh"][0]
        assert doc.lang == "zh" and doc.raster is not None
        assert doc.raster.shape == (700, 500)

    def test_output_independent_of_workers(self, built, tmp_path, profiles):
        root, summary, _ = built
        build_corpus(summary.corpus, tmp_path / "serial", profiles=profiles, workers=1, progress=False)
        for lang in ("en", "zh"):
            serial = (tmp_path / "serial" / "shards" / f"{lang}.jsonl").read_text(encoding='utf-8')
            threaded = (root / "out" / "shards" / f"{lang}.jsonl").read_text(encoding='utf-8')
            assert [json.loads(l)['id'] for l in serial.splitlines()] == \
                   [json.loads(l)['id'] for l in threaded.splitlines()]
