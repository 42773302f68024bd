#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
评估：实体/关系 F1 与多语言报表
"""

import logging

import pytest

from lxlab.core.evalkit import build_report, entity_f1, evaluate_documents, reference_report, relation_f1
from lxlab.errors import ValidationError
from lxlab.models.document import Document, EntitySpan, RelationLink
from lxlab.models.metrics import PRF, MetricReport


def _span(i, first, last, label="QUESTION"):
    return EntitySpan(id=i, first_word=first, last_word=last, label=label)


class TestEntityF1:

    def test_half_overlap(self):
        """{A, B} 对 {A, C}：P = R = F1 = 0.5"""
        gold = [_span(0, 0, 0), _span(1, 1, 2, "ANSWER")]
        pred = [_span(0, 0, 0), _span(1, 3, 3, "ANSWER")]
        prf = entity_f1(gold, pred)
        assert (prf.precision, prf.recall, prf.f1) == (0.5, 0.5, 0.5)
        assert (prf.tp, prf.fp, prf.fn) == (1, 1, 1)

    def test_exact_match_required(self):
        gold = [_span(0, 0, 2, "ANSWER")]
        for pred in ([_span(0, 0, 1, "ANSWER")], [_span(0, 0, 2, "QUESTION")]):
            assert entity_f1(gold, pred).f1 == 0.0

    def test_other_is_not_scored(self):
        gold = [_span(0, 0, 0), _span(1, 1, 1, "OTHER")]
        pred = [_span(0, 0, 0)]
        assert entity_f1(gold, pred).f1 == 1.0

    def test_micro_average_over_documents(self):
        gold = [[_span(0, 0, 0)], [_span(0, 0, 0), _span(1, 1, 1)]]
        pred = [[_span(0, 0, 0)], [_span(0, 5, 5)]]
        prf = entity_f1(gold, pred)
        assert (prf.tp, prf.fp, prf.fn) == (1, 1, 2)
        assert prf.f1 == pytest.approx(0.4)

    def test_empty(self):
        assert entity_f1([], []).f1 == 0.0

    def test_document_count_mismatch(self):
        with pytest.raises(ValidationError):
            entity_f1([[_span(0, 0, 0)], [_span(0, 1, 1)]], [[_span(0, 0, 0)]])


class TestRelationF1:

    def test_precision_recall(self):
        gold = [RelationLink(0, 1), RelationLink(2, 3)]
        pred = [RelationLink(0, 1), RelationLink(1, 0), RelationLink(3, 2)]
        prf = relation_f1(gold, pred)
        assert prf.precision == pytest.approx(1 / 3)
        assert prf.recall == pytest.approx(1 / 2)
        assert prf.f1 == pytest.approx(0.4)

    def test_tuples_and_direction(self):
        assert relation_f1([(0, 1)], [(1, 0)]).f1 == 0.0
        assert relation_f1([(0, 1)], [RelationLink(0, 1)]).f1 == 1.0


class TestEvaluateDocuments:

    def test_gold_against_itself(self, en_docs):
        results = evaluate_documents(en_docs, en_docs)
        assert results["SER"].f1 == 1.0 and results["RE"].f1 == 1.0

    def test_relations_ignore_entity_numbering(self, make_doc):
        words = [("a", (0, 0, 10, 10), 0), ("b", (20, 0, 30, 10), 0)]
        gold = make_doc(words, entities=[(0, 0, 0, "QUESTION"), (1, 1, 1, "ANSWER")], links=[(0, 1)])
        pred = make_doc(words, entities=[(7, 1, 1, "ANSWER"), (3, 0, 0, "QUESTION")], links=[(3, 7)])
        assert evaluate_documents([gold], [pred])["RE"].f1 == 1.0

    def test_missing_prediction(self, en_docs):
        with pytest.raises(ValidationError):
            evaluate_documents(en_docs[:2], en_docs[:1])

    def test_prediction_order_does_not_matter(self, en_docs):
        assert evaluate_documents(en_docs, list(reversed(en_docs)))["SER"].f1 == 1.0


class TestReport:

    def test_reference_average(self):
        report = reference_report("LANG_SPECIFIC", "LARGE")
        assert abs(report.average("SER") - 0.8282) <= 0.00005
        assert report.missing() == []
        frame = report.to_frame()
        assert list(frame.columns)[:2] == ["FUNSD-EN", "ZH"]
        assert list(frame.columns)[-1] == "Avg"

    def test_text_only_baselines(self):
        assert abs(reference_report("LANG_SPECIFIC", "LARGE", baseline="InfoXLM").average("SER") - 0.7471) <= 0.00005
        assert abs(reference_report("ZERO_SHOT", "LARGE", baseline="XLM-R").average("RE") - 0.2765) <= 0.00005
        multimodal = reference_report("MULTITASK", "BASE")
        for name in ("XLM-R", "InfoXLM"):
            text_only = reference_report("MULTITASK", "BASE", baseline=name)
            assert text_only.missing() == []
            assert text_only.average("SER") < multimodal.average("SER")
            assert text_only.average("RE") < multimodal.average("RE")

    def test_unknown_regime(self):
        with pytest.raises(ValidationError):
            reference_report("FEW_SHOT")
        with pytest.raises(ValidationError):
            reference_report("LANG_SPECIFIC", baseline="mBERT")

    def test_gaps(self, caplog):
        results = {"SER": {"en": PRF.from_f1(0.8), "zh": None}, "RE": {"en": PRF.from_f1(0.4)}}
        with caplog.at_level(logging.WARNING):
            report = build_report(results, "ZERO_SHOT", ["en", "zh"])
        assert report.missing() == ["SER/zh", "RE/zh"]
        assert report.average("SER") == pytest.approx(0.8)
        assert "SER/zh" in caplog.text
        table = report.render_table()
        assert table.splitlines()[0] == "regime: ZERO_SHOT"
        assert table.splitlines()[2].split() == ["SER", "0.8000", "-", "0.8000"]

    def test_csv(self, tmp_path):
        report = build_report({"SER": {"en": PRF.from_counts(3, 1, 0), "de": None}}, "MULTITASK", ["en", "de"])
        path = tmp_path / "report.csv"
        report.to_csv(path)
        lines = path.read_text(encoding='utf-8').splitlines()
        assert lines[0] == "task,FUNSD-EN,DE,Avg"
        assert lines[1] == "SER,0.857143,-,0.857143"

    def test_to_dict(self):
        report = MetricReport(regime="LANG_SPECIFIC", langs=["en"], cells={"SER": {"en": PRF.from_counts(1, 0, 0)}})
        data = report.to_dict()
        assert data['avg'] == {"SER": 1.0}
        assert data['cells']["SER"]["en"]['tp'] == 1
