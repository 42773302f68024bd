#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
命令行入口

子命令：corpus build / corpus stats / sample probs / tokenize / pretrain / finetune /
predict / eval / synth。退出码：0 成功，1 校验错误（含用法错误），2 运行时错误。
每次运行都在输出目录写出 resolved_config.json。
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from lxlab import __version__
from lxlab.config import Config
from lxlab.core import evalkit, pipeline
from lxlab.core.numerics import configure_runtime
from lxlab.core.objectives import ObjectiveConfig
from lxlab.core.synth import synth_dataset
from lxlab.core.tokenizer import load_default_vocab, load_vocab, segment
from lxlab.core.trainer import FinetuneRunner, PretrainRunner, checkpoint_task
from lxlab.errors import LxlabError, UsageError, ValidationError
from lxlab.logging_config import setup_logging
from lxlab.models.corpus import SamplingSpec
from lxlab.models.model_config import ModelConfig
from lxlab.models.train_config import Task, TrainConfig, XFUND_LANGS
from lxlab.models.vocab import UnigramVocab
from lxlab.storage.checkpoint import load_checkpoint
from lxlab.storage.dataset_io import load_language_splits, parse_dataset, write_dataset

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2
SNAPSHOT_NAME = "resolved_config.json"


class LxlabArgumentParser(argparse.ArgumentParser):
    """用法错误抛出 UsageError 而不是直接退出"""

    def error(self, message: str):
        raise UsageError(f"{message}\n{self.format_usage().rstrip()}")


def _common_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="配置文件（YAML，或扁平点号键的 JSON）")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="覆盖配置项，可重复")
    common.add_argument("--seed", type=int, help="随机种子（默认取 LXLAB_SEED 或配置）")
    common.add_argument("--out", default="lxlab_out", help="输出目录")
    common.add_argument("--log-level", help="日志级别，如 DEBUG/INFO/WARNING")
    return common


def build_parser() -> LxlabArgumentParser:
    common = _common_flags()
    parser = LxlabArgumentParser(prog="lxlab", description="多语言版式文档理解工具")
    parser.add_argument("--version", action="version", version=f"lxlab {__version__}")
    commands = parser.add_subparsers(dest="command", metavar="COMMAND")
    commands.required = True

    corpus = commands.add_parser("corpus", help="语料过滤与统计")
    corpus_cmds = corpus.add_subparsers(dest="action", metavar="ACTION")
    corpus_cmds.required = True
    build = corpus_cmds.add_parser("build", parents=[common], help="过滤语料并按语言分片")
    build.add_argument("--input", required=True, help="JSONL 语料")
    build.add_argument("--workers", type=int)
    build.add_argument("--min-chars", type=int)
    build.add_argument("--min-score", type=float)
    stats = corpus_cmds.add_parser("stats", parents=[common], help="显示分片统计")
    stats.add_argument("--stats", required=True, help="stats.json 路径")

    sample = commands.add_parser("sample", help="语言采样")
    sample_cmds = sample.add_subparsers(dest="action", metavar="ACTION")
    sample_cmds.required = True
    probs = sample_cmds.add_parser("probs", parents=[common], help="计算各语言采样概率")
    source = probs.add_mutually_exclusive_group(required=True)
    source.add_argument("--counts", help="形如 A=75,B=25")
    source.add_argument("--shards", help="分片目录（按记录数计数）")
    probs.add_argument("--alpha", type=float)
    probs.add_argument("--draws", type=int, default=0, help="额外抽样次数，输出经验频率")

    tokenize = commands.add_parser("tokenize", parents=[common], help="子词切分")
    text_source = tokenize.add_mutually_exclusive_group(required=True)
    text_source.add_argument("--text")
    text_source.add_argument("--input", help="数据集 JSON，逐词输出")
    tokenize.add_argument("--vocab", help="词表 TSV（默认使用内置词表）")

    pretrain = commands.add_parser("pretrain", parents=[common], help="预训练")
    pretrain.add_argument("--shards", required=True, help="分片目录（corpus build 的 shards/）")
    pretrain.add_argument("--steps", type=int)
    pretrain.add_argument("--resume", help="继续训练的检查点")

    finetune = commands.add_parser("finetune", parents=[common], help="SER/RE 微调")
    finetune.add_argument("--data", help="包含 <lang>.json 的训练数据目录（默认取 paths.xfund）")
    finetune.add_argument("--eval-data", help="评估数据目录（默认同 --data）")
    finetune.add_argument("--task", choices=["SER", "RE", "ser", "re"])
    finetune.add_argument("--regime", choices=["LANG_SPECIFIC", "ZERO_SHOT", "MULTITASK"])
    finetune.add_argument("--train-langs")
    finetune.add_argument("--eval-langs")
    finetune.add_argument("--steps", type=int)
    finetune.add_argument("--checkpoint", help="预训练检查点（只取编码器）")
    finetune.add_argument("--resume", action="store_true", help="从 --checkpoint 的步数继续微调")

    predict = commands.add_parser("predict", parents=[common], help="用微调检查点预测")
    predict.add_argument("--checkpoint", required=True)
    predict.add_argument("--input", required=True, help="数据集 JSON")

    evaluate = commands.add_parser("eval", parents=[common], help="评估预测结果")
    evaluate.add_argument("--gold", required=True, help="标注数据集 JSON 或目录")
    evaluate.add_argument("--pred", required=True, help="预测数据集 JSON 或目录")
    evaluate.add_argument("--regime")

    synth = commands.add_parser("synth", parents=[common], help="生成合成表单与语料")
    synth.add_argument("--docs", type=int, default=8)
    synth.add_argument("--langs", default="en,zh")
    synth.add_argument("--corpus-docs", type=int)
    return parser


def _parse_counts(raw: str) -> Dict[str, int]:
    counts = {}
    for item in raw.split(','):
        if '=' not in item:
            raise UsageError(f"--counts 项应为 lang=n: {item!r}")
        lang, n = item.split('=', 1)
        try:
            counts[lang.strip()] = int(n)
        except ValueError as e:
            raise UsageError(f"--counts 的计数不是整数: {item!r}") from e
    return counts


def _langs(raw: Optional[str]) -> Optional[List[str]]:
    if raw is None:
        return None
    return [l.strip().lower() for l in raw.split(',') if l.strip()]


def _load_config(args: argparse.Namespace) -> Config:
    """默认配置 ← 配置文件 ← 环境变量 ← --set ← --seed 与子命令参数"""
    config = Config.load(args.config)
    config.apply_overrides(args.overrides)
    if args.seed is not None:
        config.set('runtime.seed', int(args.seed))
    config.set('cli.command', " ".join(filter(None, [args.command, getattr(args, 'action', None)])))
    config.set('cli.args', {k: v for k, v in sorted(vars(args).items())
                            if k not in ('config', 'overrides', 'command', 'action')})
    return config


def _vocab(config: Config, path: Optional[str] = None) -> UnigramVocab:
    path = path or config.get('paths.vocab')
    return load_vocab(path) if path else load_default_vocab()


def _model_config(config: Config, vocab: UnigramVocab) -> ModelConfig:
    overrides: Dict[str, Any] = {k: v for k, v in config.section('model').items() if k != 'preset'}
    for key in ('visual_grid', 'rel_1d', 'rel_2d'):
        if key in overrides:
            overrides[key] = tuple(overrides[key])
    overrides['seed'] = int(config.get('runtime.seed', 42))
    return ModelConfig.preset(config.get('model.preset', 'TINY'), **overrides).fit_vocab(vocab.size)


def _train_config(config: Config, **overrides) -> TrainConfig:
    return TrainConfig.from_config(config, seed=int(config.get('runtime.seed', 42)), **overrides)


def _read_datasets(path: str) -> Dict[str, list]:
    """文件或目录 → 语言 → 文档"""
    p = Path(path)
    if p.is_dir():
        return load_language_splits(p, load_rasters=False)
    docs = parse_dataset(p, load_rasters=False)
    return {docs[0].lang if docs else "und": docs}


def cmd_corpus_build(args, config: Config, out: Path) -> int:
    if args.workers is not None:
        config.set('pipeline.workers', args.workers)
    if args.min_chars is not None:
        config.set('pipeline.min_chars', args.min_chars)
    if args.min_score is not None:
        config.set('pipeline.min_lang_score', args.min_score)
    profiles = pipeline.load_profiles(config.get('paths.profiles'))
    pipeline.build_corpus(
        args.input, out, profiles,
        workers=int(config.get('pipeline.workers', 4)),
        min_chars=int(config.get('pipeline.min_chars', pipeline.MIN_CHARS)),
        min_score=float(config.get('pipeline.min_lang_score', pipeline.MIN_LANG_SCORE)),
        progress=bool(config.get('runtime.progress', True)),
    )
    print(pipeline.corpus_stats(out / "stats.json").to_string())
    return EXIT_OK


def cmd_corpus_stats(args, config: Config, out: Path) -> int:
    print(pipeline.corpus_stats(args.stats).to_string())
    return EXIT_OK


def cmd_sample_probs(args, config: Config, out: Path) -> int:
    if args.alpha is not None:
        config.set('pipeline.alpha', args.alpha)
    counts = _parse_counts(args.counts) if args.counts else pipeline.shard_counts(args.shards)
    spec = SamplingSpec(counts=counts, alpha=float(config.get('pipeline.alpha', 0.7)),
                        seed=int(config.get('runtime.seed', 42)))
    probs = pipeline.sampling_probs(spec)
    empirical = {}
    if args.draws > 0:
        sampler = pipeline.LanguageSampler({lang: [lang] for lang in counts}, spec)
        drawn = [sampler.next_batch().lang for _ in range(args.draws)]
        empirical = {lang: drawn.count(lang) / args.draws for lang in probs}
    for lang, p in probs.items():
        line = f"{lang}\t{p:.6f}"
        if empirical:
            line += f"\t{empirical[lang]:.6f}"
        print(line)
    return EXIT_OK


def cmd_tokenize(args, config: Config, out: Path) -> int:
    vocab = _vocab(config, args.vocab)
    if args.text is not None:
        print(" ".join(segment(args.text, vocab)))
        return EXIT_OK
    for doc in parse_dataset(args.input, load_rasters=False):
        for word in doc.words:
            print(f"{doc.id}\t{word.text}\t{' '.join(segment(word.text, vocab))}")
    return EXIT_OK


def cmd_pretrain(args, config: Config, out: Path) -> int:
    if args.steps is not None:
        config.set('train.steps', args.steps)
    config.set('train.task', Task.PRETRAIN.value)
    train_config = _train_config(config)
    resume = load_checkpoint(args.resume) if args.resume else None
    vocab = _vocab(config)
    model_config = resume.config if resume else _model_config(config, vocab)
    shards = pipeline.load_shards(args.shards)
    if not shards:
        raise ValidationError(f"分片目录为空: {args.shards}")
    runner = PretrainRunner(
        train_config, vocab, model_config=model_config,
        objectives=ObjectiveConfig.from_dict(config.section('objectives')),
        alpha=float(config.get('pipeline.alpha', 0.7)), out_dir=out,
        progress=bool(config.get('runtime.progress', True)),
        num_threads=int(config.get('runtime.num_threads', 1)),
    )
    result = runner.execute(shards, resume=resume)
    curve = result.loss_curve
    if len(curve):
        print(f"steps={len(curve)} first_total={curve['total'].iloc[0]:.6f} last_total={curve['total'].iloc[-1]:.6f}")
    print(f"checkpoint: {result.paths.get('checkpoint')}")
    return EXIT_OK


def cmd_finetune(args, config: Config, out: Path) -> int:
    for key, value in (('train.task', args.task), ('train.regime', args.regime), ('train.steps', args.steps),
                       ('train.train_langs', _langs(args.train_langs)),
                       ('train.eval_langs', _langs(args.eval_langs))):
        if value is not None:
            config.set(key, value.upper() if key in ('train.task', 'train.regime') else value)
    train_config = _train_config(config)

    init = load_checkpoint(args.checkpoint) if args.checkpoint else None
    if args.resume and init is None:
        raise UsageError("--resume 需要 --checkpoint")
    data_dir = args.data or config.get('paths.xfund')
    if not data_dir:
        raise UsageError("finetune 需要 --data 或配置项 paths.xfund")
    train_docs = load_language_splits(data_dir)
    eval_docs = load_language_splits(args.eval_data) if args.eval_data else train_docs
    vocab = _vocab(config)
    runner = FinetuneRunner(
        train_config, vocab, init=init, resume=args.resume,
        model_config=None if init else _model_config(config, vocab), out_dir=out,
        progress=bool(config.get('runtime.progress', True)),
        num_threads=int(config.get('runtime.num_threads', 1)),
    )
    result = runner.execute(train_docs, eval_docs)
    print(result.report.render_table())
    return EXIT_OK


def cmd_predict(args, config: Config, out: Path) -> int:
    state = load_checkpoint(args.checkpoint)
    task = checkpoint_task(state)
    if task not in (Task.SER, Task.RE):
        raise ValidationError(f"检查点不是微调检查点（task={task.value if task else None}）")
    docs = parse_dataset(args.input, load_rasters=True)
    lang = docs[0].lang if docs else "und"
    train_config = TrainConfig(task=task, train_langs=[lang], seed=int(config.get('runtime.seed', 42)),
                               batch_size=int(config.get('train.batch_size', 8)))
    runner = FinetuneRunner(train_config, _vocab(config), init=state, resume=True,
                            num_threads=int(config.get('runtime.num_threads', 1)))
    predicted = runner.predict(docs)
    path = write_dataset(predicted, out / f"{Path(args.input).stem}.pred.json", lang=lang)
    print(f"{task.value} 预测已写出: {path}")
    return EXIT_OK


def cmd_eval(args, config: Config, out: Path) -> int:
    gold = _read_datasets(args.gold)
    pred = _read_datasets(args.pred)
    pred_docs = [d for docs in pred.values() for d in docs]
    results: Dict[str, Dict[str, Any]] = {evalkit.SER: {}, evalkit.RE: {}}
    for lang, docs in gold.items():
        scores = evalkit.evaluate_documents(docs, pred_docs)
        for task, prf in scores.items():
            results[task][lang] = prf
    regime = args.regime or config.get('train.regime', 'LANG_SPECIFIC')
    langs = [l for l in XFUND_LANGS if l in gold] + sorted(set(gold) - set(XFUND_LANGS))
    report = evalkit.build_report(results, regime, langs)
    report.to_csv(out / "report.csv")
    print(report.render_table())
    return EXIT_OK


def cmd_synth(args, config: Config, out: Path) -> int:
    langs = _langs(args.langs) or ["en"]
    summary = synth_dataset(out, docs=args.docs, langs=langs, seed=int(config.get('runtime.seed', 42)),
                            corpus_docs=args.corpus_docs)
    for lang, path in summary.datasets.items():
        print(f"{lang}\t{path}")
    print(f"corpus\t{summary.corpus}")
    return EXIT_OK


COMMANDS = {
    ('corpus', 'build'): cmd_corpus_build,
    ('corpus', 'stats'): cmd_corpus_stats,
    ('sample', 'probs'): cmd_sample_probs,
    ('tokenize', None): cmd_tokenize,
    ('pretrain', None): cmd_pretrain,
    ('finetune', None): cmd_finetune,
    ('predict', None): cmd_predict,
    ('eval', None): cmd_eval,
    ('synth', None): cmd_synth,
}


def run(argv: Optional[Sequence[str]] = None) -> int:
    """
    执行一条命令

    Args:
        argv: 命令行参数（不含程序名），默认取 sys.argv[1:]

    Returns:
        退出码
    """
    parser = build_parser()
    try:
        args = parser.parse_args(list(sys.argv[1:] if argv is None else argv))
    except UsageError as e:
        print(f"lxlab: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except SystemExit as e:
        return int(e.code or 0)

    try:
        config = _load_config(args)
        setup_logging(config, level=args.log_level)
        configure_runtime(int(config.get('runtime.num_threads', 1)))
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        handler = COMMANDS[(args.command, getattr(args, 'action', None))]
        code = handler(args, config, out)
        config.snapshot(out / SNAPSHOT_NAME)
        return code
    except ValidationError as e:
        logger.error(f"{type(e).__name__}: {e}")
        print(f"lxlab: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except LxlabError as e:
        logger.error(f"{type(e).__name__}: {e}", exc_info=True)
        return EXIT_RUNTIME
    except Exception as e:
        logger.error(f"未预期的错误: {e}", exc_info=True)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
