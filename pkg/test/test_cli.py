#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
命令行：退出码、配置快照与端到端流程
"""

import json

import pytest

from lxlab.cli import EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION, SNAPSHOT_NAME, run
from lxlab.storage.checkpoint import load_checkpoint

QUIET = ["--set", "runtime.progress=false", "--log-level", "WARNING"]


def _tree(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*"))
            if p.is_file() and p.name != SNAPSHOT_NAME}


class TestExitCodes:

    def test_unknown_flag(self, workdir, capsys):
        assert run(["synth", "--bogus"]) == EXIT_VALIDATION
        assert "--bogus" in capsys.readouterr().err

    def test_missing_command(self, workdir):
        assert run([]) == EXIT_VALIDATION

    def test_bad_counts(self, workdir):
        assert run(["sample", "probs", "--counts", "A=x"]) == EXIT_VALIDATION

    def test_runtime_error(self, workdir):
        code = run(["predict", "--checkpoint", "absent.lxlm", "--input", "absent.json", *QUIET])
        assert code == EXIT_RUNTIME

    def test_version(self, workdir, capsys):
        assert run(["--version"]) == EXIT_OK
        assert capsys.readouterr().out.startswith("lxlab ")


class TestCommands:

    def test_sample_probs(self, workdir, capsys):
        assert run(["sample", "probs", "--counts", "A=75,B=25", "--alpha", "0.7", "--out", "s"]) == EXIT_OK
        lines = capsys.readouterr().out.splitlines()
        assert lines[0].startswith("A\t0.683")
        assert lines[1].startswith("B\t0.316")

    def test_resolved_config_snapshot(self, workdir):
        assert run(["sample", "probs", "--counts", "A=1", "--seed", "9", "--set", "train.lr=1e-3",
                    "--out", "snap"]) == EXIT_OK
        snapshot = json.loads((workdir / "snap" / SNAPSHOT_NAME).read_text(encoding='utf-8'))
        assert snapshot['runtime']['seed'] == 9
        assert snapshot['train']['lr'] == 0.001
        assert snapshot['cli']['command'] == "sample probs"

    def test_env_seed(self, workdir, monkeypatch):
        monkeypatch.setenv("LXLAB_SEED", "123")
        assert run(["sample", "probs", "--counts", "A=1", "--out", "env"]) == EXIT_OK
        snapshot = json.loads((workdir / "env" / SNAPSHOT_NAME).read_text(encoding='utf-8'))
        assert snapshot['runtime']['seed'] == 123

    def test_tokenize_text(self, workdir, capsys):
        assert run(["tokenize", "--text", "the", "--out", "t"]) == EXIT_OK
        assert capsys.readouterr().out.strip() == "the"

    def test_synth_is_byte_identical(self, workdir):
        for name in ("a", "b"):
            assert run(["synth", "--docs", "2", "--langs", "en,zh", "--out", name, *QUIET]) == EXIT_OK
        a, b = _tree(workdir / "a"), _tree(workdir / "b")
        assert "xfund/en.json" in a and "corpus.jsonl" in a
        assert a == b

    def test_eval_gold_against_itself(self, workdir, capsys):
        assert run(["synth", "--docs", "3", "--langs", "en", "--out", "d", *QUIET]) == EXIT_OK
        gold = str(workdir / "d" / "xfund" / "en.json")
        capsys.readouterr()
        assert run(["eval", "--gold", gold, "--pred", gold, "--out", "ev"]) == EXIT_OK
        out = capsys.readouterr().out
        assert "SER" in out and "RE" in out
        rows = (workdir / "ev" / "report.csv").read_text(encoding='utf-8').splitlines()
        assert rows[1] == "SER,1.000000,1.000000"
        assert rows[2] == "RE,1.000000,1.000000"

    def test_text_only_baseline(self, workdir):
        text_only = ["--set", "model.text_only=true", "--set", "train.batch_size=2", *QUIET]
        assert run(["synth", "--docs", "2", "--langs", "en", "--out", "data", *QUIET]) == EXIT_OK
        assert run(["finetune", "--data", "data/xfund", "--task", "SER", "--train-langs", "en",
                    "--steps", "1", "--out", "ft", *text_only]) == EXIT_OK
        assert load_checkpoint(workdir / "ft" / "checkpoint.lxlm").config.text_only
        assert run(["corpus", "build", "--input", "data/corpus.jsonl", "--out", "corpus", *QUIET]) == EXIT_OK
        assert run(["pretrain", "--shards", "corpus/shards", "--steps", "1", "--out", "pt",
                    *text_only]) == EXIT_VALIDATION


@pytest.mark.slow
class TestWorkflow:

    def test_corpus_pretrain_finetune_predict_eval(self, workdir, capsys):
        """synth → corpus build → pretrain → finetune → predict → eval"""
        small = ["--set", "train.batch_size=2", *QUIET]
        assert run(["synth", "--docs", "2", "--langs", "en,zh", "--out", "data", *QUIET]) == EXIT_OK
        assert run(["corpus", "build", "--input", "data/corpus.jsonl", "--workers", "2",
                    "--out", "corpus", *QUIET]) == EXIT_OK
        assert (workdir / "corpus" / "shards" / "en.jsonl").exists()
        assert run(["corpus", "stats", "--stats", "corpus/stats.json", "--out", "corpus"]) == EXIT_OK

        assert run(["pretrain", "--shards", "corpus/shards", "--steps", "2", "--out", "pt", *small]) == EXIT_OK
        assert (workdir / "pt" / "checkpoint.lxlm").exists()

        assert run(["finetune", "--data", "data/xfund", "--task", "SER", "--train-langs", "en",
                    "--steps", "2", "--checkpoint", "pt/checkpoint.lxlm", "--out", "ft", *small]) == EXIT_OK
        assert (workdir / "ft" / "report.csv").exists()

        assert run(["predict", "--checkpoint", "ft/checkpoint.lxlm", "--input", "data/xfund/en.json",
                    "--out", "pred", *QUIET]) == EXIT_OK
        pred = workdir / "pred" / "en.pred.json"
        assert pred.exists()
        capsys.readouterr()
        assert run(["eval", "--gold", "data/xfund/en.json", "--pred", str(pred), "--out", "ev"]) == EXIT_OK
        assert "regime: LANG_SPECIFIC" in capsys.readouterr().out

    def test_predict_rejects_pretrain_checkpoint(self, workdir):
        small = ["--set", "train.batch_size=2", *QUIET]
        assert run(["synth", "--docs", "2", "--langs", "en", "--out", "data", *QUIET]) == EXIT_OK
        assert run(["corpus", "build", "--input", "data/corpus.jsonl", "--out", "corpus", *QUIET]) == EXIT_OK
        assert run(["pretrain", "--shards", "corpus/shards", "--steps", "1", "--out", "pt", *small]) == EXIT_OK
        assert run(["predict", "--checkpoint", "pt/checkpoint.lxlm", "--input", "data/xfund/en.json",
                    "--out", "pred", *QUIET]) == EXIT_VALIDATION
