#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
训练执行器

PretrainRunner：按语言采样批次，优化 MVLM + TIA + TIM 三个目标
FinetuneRunner：在 SER 或 RE 任务上端到端微调编码器与任务层，按语言评估

两者都使用带偏差修正的 Adam、线性预热后线性衰减的学习率和全局范数裁剪。
每一步的随机数由 (seed, step) 派生，因此从检查点恢复后的下一步与不中断时完全一致。
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import torch
from tqdm import tqdm

from lxlab.core.encoder import LayoutEncoder
from lxlab.core.evalkit import build_report, entity_f1, relation_f1
from lxlab.core.features import encode_documents
from lxlab.core.heads import (ReHead, SerHead, entity_positions, re_labels, re_predict, re_score,
                              scorable_pairs, ser_labels, ser_predict, subsample_negatives)
from lxlab.core.numerics import AdamState, adam_step, configure_runtime
from lxlab.core.objectives import ObjectiveConfig, PretrainHeads, build_pretrain_batch, pretrain_loss
from lxlab.core.pipeline import LanguageSampler
from lxlab.errors import ConfigError, TrainingDivergedError
from lxlab.models.corpus import SamplingSpec
from lxlab.models.document import Document
from lxlab.models.metrics import PRF, MetricReport
from lxlab.models.model_config import ModelConfig
from lxlab.models.train_config import Regime, Task, TrainConfig
from lxlab.models.vocab import UnigramVocab
from lxlab.storage.checkpoint import (CheckpointState, collect_tensors, optimizer_for,
                                      restore_modules, save_checkpoint)

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.lxlm"
LOSS_CURVE_NAME = "loss_curve.csv"
METRIC_CURVE_NAME = "metric_curve.csv"
REPORT_NAME = "report.csv"

PathLike = Union[str, Path]


def lr_at(step: int, total: int, warmup_frac: float, peak: float) -> float:
    """
    分段线性学习率：[0, w] 从 0 升到 peak，[w, total] 降到 0，w = round(warmup_frac·total)

    Args:
        step: 当前步（0..total）
        total: 总步数
        warmup_frac: 预热比例
        peak: 峰值学习率
    """
    if total <= 0:
        return 0.0
    warmup = int(round(warmup_frac * total))
    step = min(max(step, 0), total)
    if warmup > 0 and step <= warmup:
        return peak * step / warmup
    if total == warmup:
        return 0.0
    return peak * (total - step) / (total - warmup)


def clip_gradients(params: Sequence[torch.nn.Parameter], max_norm: float) -> float:
    """全局范数裁剪，返回裁剪前的范数"""
    return float(torch.nn.utils.clip_grad_norm_(params, max_norm))


def step_rng(seed: int, step: int, stream: int = 0) -> np.random.Generator:
    """第 step 步的随机数生成器"""
    return np.random.default_rng([int(seed), int(step), int(stream)])


@dataclass
class TrainResult:
    """一次训练的产物"""
    state: CheckpointState
    loss_curve: pd.DataFrame
    metric_curve: Optional[pd.DataFrame] = None
    report: Optional[MetricReport] = None
    paths: Dict[str, Path] = field(default_factory=dict)


class _Runner:
    """两种训练共用的优化步骤与产物写出"""

    def __init__(self, train_config: TrainConfig, vocab: UnigramVocab,
                 out_dir: Optional[PathLike] = None, progress: bool = False, num_threads: int = 1):
        self.config = train_config
        self.vocab = vocab
        self.out_dir = Path(out_dir) if out_dir else None
        self.progress = progress
        configure_runtime(num_threads)
        self.modules: Dict[str, torch.nn.Module] = {}
        self.optimizer = AdamState()
        self.start_step = 0
        self.loss_rows: List[Dict[str, float]] = []

    @property
    def parameters(self) -> List[torch.nn.Parameter]:
        return [p for _, p in optimizer_for(self.modules)]

    def _optimize(self, loss: torch.Tensor, step: int) -> Tuple[float, float]:
        """反向、裁剪、更新；返回 (学习率, 裁剪前梯度范数)"""
        value = float(loss.item())
        if not math.isfinite(value):
            raise TrainingDivergedError(step, value)
        for p in self.parameters:
            p.grad = None
        loss.backward()
        norm = clip_gradients(self.parameters, self.config.grad_clip)
        lr = lr_at(step + 1, self.config.steps, self.config.warmup_frac, self.config.lr)
        adam_step(optimizer_for(self.modules), self.optimizer, lr,
                  self.config.beta1, self.config.beta2, self.config.eps)
        return lr, norm

    def _state(self, model_config: ModelConfig, step: int, **meta) -> CheckpointState:
        return CheckpointState(
            config=model_config,
            tensors=collect_tensors(self.modules),
            optimizer=self.optimizer,
            meta={'step': step, 'train': self.config.to_dict(), **meta},
        )

    def _restore(self, state: CheckpointState, resume: bool) -> None:
        if resume:
            restore_modules(state, self.modules)
            if state.optimizer is not None:
                self.optimizer = state.optimizer
            self.start_step = state.step
            logger.info(f"从第 {self.start_step} 步恢复训练")
        else:
            restore_modules(state, {'encoder': self.modules['encoder']})
            logger.info("已从检查点加载编码器参数")

    def _save_outputs(self, state: CheckpointState, metric_rows: Optional[List[Dict]] = None,
                      report: Optional[MetricReport] = None) -> Dict[str, Path]:
        if self.out_dir is None:
            return {}
        self.out_dir.mkdir(parents=True, exist_ok=True)
        paths = {'checkpoint': save_checkpoint(state, self.out_dir / CHECKPOINT_NAME)}
        paths['loss_curve'] = self.out_dir / LOSS_CURVE_NAME
        self.loss_frame().to_csv(paths['loss_curve'], index=False, float_format="%.17g")
        if metric_rows is not None:
            paths['metric_curve'] = self.out_dir / METRIC_CURVE_NAME
            metric_frame(metric_rows).to_csv(paths['metric_curve'], index=False, float_format="%.17g")
        if report is not None:
            paths['report'] = self.out_dir / REPORT_NAME
            report.to_csv(paths['report'])
        return paths

    def loss_frame(self) -> pd.DataFrame:
        raise NotImplementedError


def metric_frame(rows: List[Dict]) -> pd.DataFrame:
    return pd.DataFrame(rows, columns=['step', 'task', 'lang', 'precision', 'recall', 'f1'])


class PretrainRunner(_Runner):
    """在按语言分片的文档上预训练编码器"""

    def __init__(self, train_config: TrainConfig, vocab: UnigramVocab,
                 model_config: Optional[ModelConfig] = None,
                 objectives: Optional[ObjectiveConfig] = None, alpha: float = 0.7,
                 out_dir: Optional[PathLike] = None, progress: bool = False, num_threads: int = 1):
        """
        Args:
            train_config: 训练配置（task 应为 PRETRAIN）
            vocab: 词表
            model_config: 模型配置，默认取 train_config.preset 并使用训练种子
            objectives: 三个预训练目标的比例
            alpha: 语言采样指数
        """
        super().__init__(train_config, vocab, out_dir, progress, num_threads)
        self.model_config = model_config or ModelConfig.preset(
            train_config.preset, seed=train_config.seed).fit_vocab(vocab.size)
        if self.model_config.text_only:
            raise ConfigError("纯文本基线没有图像与坐标输入，只用于微调，不能预训练")
        self.objectives = objectives or ObjectiveConfig()
        self.alpha = alpha
        self.model = LayoutEncoder(self.model_config)
        self.heads = PretrainHeads(self.model_config)
        self.modules = {'encoder': self.model, 'pretrain': self.heads}

    def execute(self, shards: Dict[str, List[Document]],
                resume: Optional[CheckpointState] = None) -> TrainResult:
        """
        预训练主入口

        Args:
            shards: 语言 → 文档列表
            resume: 上次保存的检查点，从其步数继续

        Returns:
            TrainResult，loss_curve 列为 step, lr, mvlm, tia, tim, total
        """
        # 1. 恢复状态
        if resume is not None:
            self._restore(resume, resume=True)

        # 2. 构造采样器
        sampler = self._build_sampler(shards)

        # 3. 训练循环
        self._train(sampler)

        # 4. 保存检查点与损失曲线
        state = self._state(self.model_config, self.config.steps, task=Task.PRETRAIN.value)
        paths = self._save_outputs(state)
        return TrainResult(state=state, loss_curve=self.loss_frame(), paths=paths)

    def _build_sampler(self, shards: Dict[str, List[Document]]) -> LanguageSampler:
        counts = {lang: len(docs) for lang, docs in shards.items()}
        spec = SamplingSpec(counts=counts, alpha=self.alpha, seed=self.config.seed)
        sampler = LanguageSampler(shards, spec, batch_size=self.config.batch_size)
        for _ in range(self.start_step):
            sampler.next_batch()
        logger.info(f"预训练语料: {', '.join(f'{k}={v}' for k, v in sorted(counts.items()))}")
        return sampler

    def _train(self, sampler: LanguageSampler) -> None:
        steps = range(self.start_step, self.config.steps)
        pbar = tqdm(steps, desc="预训练", disable=not self.progress, leave=False)
        for step in pbar:
            batch = sampler.next_batch()
            pretrain = build_pretrain_batch(batch.items, self.vocab, self.model_config,
                                            self.objectives, step_rng(self.config.seed, step))
            hidden = self.model(pretrain.encoded)
            losses = pretrain_loss(hidden, pretrain, self.heads)
            lr, norm = self._optimize(losses.total, step)

            row = {'step': step, 'lr': lr, **{k: float(v) for k, v in losses.to_dict().items()}}
            self.loss_rows.append(row)
            pbar.set_postfix({'loss': f"{row['total']:.4f}", 'lang': batch.lang}, refresh=False)
            if self.config.log_every and (step + 1) % self.config.log_every == 0:
                logger.info(f"预训练 step {step + 1}/{self.config.steps}: total={row['total']:.6f} "
                            f"mvlm={row['mvlm']:.6f} tia={row['tia']:.6f} tim={row['tim']:.6f} "
                            f"lr={lr:.3e} grad_norm={norm:.4f}")
        pbar.close()

    def loss_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.loss_rows, columns=['step', 'lr', 'mvlm', 'tia', 'tim', 'total'])


class FinetuneRunner(_Runner):
    """SER 或 RE 微调，按微调设置选择训练与评估语言"""

    def __init__(self, train_config: TrainConfig, vocab: UnigramVocab,
                 init: Optional[CheckpointState] = None, resume: bool = False,
                 model_config: Optional[ModelConfig] = None,
                 out_dir: Optional[PathLike] = None, progress: bool = False, num_threads: int = 1):
        """
        Args:
            train_config: 训练配置（task 为 SER 或 RE）
            vocab: 词表
            init: 预训练检查点（只取编码器）或上次微调的检查点（resume=True 时全部恢复）
            resume: 是否从 init 的步数继续
            model_config: 没有检查点时使用的模型配置
        """
        if train_config.task not in (Task.SER, Task.RE):
            raise ConfigError(f"微调任务必须是 SER 或 RE: {train_config.task.value}")
        super().__init__(train_config, vocab, out_dir, progress, num_threads)
        if init is not None:
            self.model_config = init.config
        else:
            self.model_config = model_config or ModelConfig.preset(
                train_config.preset, seed=train_config.seed).fit_vocab(vocab.size)
        self.task = train_config.task
        self.model = LayoutEncoder(self.model_config)
        self.head = SerHead(self.model_config) if self.task is Task.SER else ReHead(self.model_config)
        self.modules = {'encoder': self.model, self.task.value.lower(): self.head}
        self.metric_rows: List[Dict] = []
        if init is not None:
            self._restore(init, resume)

    def execute(self, train_docs: Dict[str, List[Document]],
                eval_docs: Optional[Dict[str, List[Document]]] = None) -> TrainResult:
        """
        微调主入口

        Args:
            train_docs: 语言 → 训练文档
            eval_docs: 语言 → 评估文档，默认与训练文档相同

        Returns:
            TrainResult，含按语言的最终报表与每次评估的指标曲线
        """
        eval_docs = eval_docs if eval_docs is not None else train_docs

        # 1. 按微调设置确定训练与评估语言
        train_langs, eval_langs = self._select_languages(train_docs, eval_docs)

        # 2. 合并训练文档
        pool = [doc for lang in train_langs for doc in train_docs[lang]]
        if not pool:
            raise ConfigError(f"训练语言 {train_langs} 没有文档")
        logger.info(f"{self.config.regime.value} {self.task.value} 微调: 训练 {train_langs} "
                    f"({len(pool)} 篇)，评估 {eval_langs}")

        # 3. 训练循环（周期性评估）
        self._train(pool, eval_docs, eval_langs)

        # 4. 最终评估与报表
        final = self.evaluate({lang: eval_docs[lang] for lang in eval_langs if lang in eval_docs})
        self._record_metrics(self.config.steps, final)
        report = build_report({self.task.value: final}, self.config.regime.value, self.config.eval_langs)

        # 5. 保存
        state = self._state(self.model_config, self.config.steps, task=self.task.value)
        paths = self._save_outputs(state, self.metric_rows, report)
        return TrainResult(state=state, loss_curve=self.loss_frame(), metric_curve=metric_frame(self.metric_rows),
                           report=report, paths=paths)

    def _select_languages(self, train_docs: Dict[str, List[Document]],
                          eval_docs: Dict[str, List[Document]]) -> Tuple[List[str], List[str]]:
        cfg = self.config
        present = {lang for lang, docs in train_docs.items() if docs}
        train_langs = list(cfg.train_langs)
        if cfg.regime is Regime.MULTITASK:
            absent = [l for l in train_langs if l not in present]
            if absent:
                logger.warning(f"MULTITASK 训练语言 {absent} 没有数据，只在 {sorted(present & set(train_langs))} 上训练")
            train_langs = [l for l in train_langs if l in present]
        else:
            absent = [l for l in train_langs if l not in present]
            if absent:
                raise ConfigError(f"{cfg.regime.value} 的训练语言 {absent} 没有数据")
        eval_langs = [l for l in cfg.eval_langs if eval_docs.get(l)]
        skipped = [l for l in cfg.eval_langs if not eval_docs.get(l)]
        if skipped:
            logger.warning(f"评估语言 {skipped} 没有数据，报表中记为缺失")
        return train_langs, eval_langs

    def _batches_per_epoch(self, n_docs: int) -> int:
        return max(1, math.ceil(n_docs / self.config.batch_size))

    def _batch(self, pool: List[Document], step: int) -> List[Document]:
        """第 step 步的批次：每个 epoch 用 (seed, epoch) 派生的排列"""
        per_epoch = self._batches_per_epoch(len(pool))
        epoch, k = divmod(step, per_epoch)
        order = np.random.default_rng([int(self.config.seed), int(epoch)]).permutation(len(pool))
        chosen = order[k * self.config.batch_size:(k + 1) * self.config.batch_size]
        return [pool[int(i)] for i in chosen]

    def _loss(self, docs: List[Document], step: int) -> Optional[torch.Tensor]:
        encoded = encode_documents(docs, self.vocab, self.model_config)
        hidden = self.model(encoded)
        if self.task is Task.SER:
            return SerHead.loss(self.head(hidden, encoded.num_visual), ser_labels(docs, encoded))

        rng = step_rng(self.config.seed, step, stream=1)
        logits, labels = [], []
        for i, (doc, align) in enumerate(zip(docs, encoded.alignments)):
            positions = entity_positions(doc.entities, align, encoded.num_visual)
            pairs = scorable_pairs(doc.entities, positions)
            if not pairs:
                continue
            y = re_labels(pairs, doc.links)
            pairs, y = subsample_negatives(pairs, y, self.config.re_negative_ratio, rng)
            logits.append(re_score(hidden[i], pairs, self.head, positions))
            labels.append(y)
        if not logits:
            return None
        return ReHead.loss(torch.cat(logits), torch.cat(labels))

    def _train(self, pool: List[Document], eval_docs: Dict[str, List[Document]], eval_langs: List[str]) -> None:
        every = self.config.eval_every or self._batches_per_epoch(len(pool))
        pbar = tqdm(range(self.start_step, self.config.steps), desc=f"微调 {self.task.value}",
                    disable=not self.progress, leave=False)
        for step in pbar:
            loss = self._loss(self._batch(pool, step), step)
            if loss is None:
                logger.debug(f"第 {step} 步的批次没有可打分的实体对，跳过")
                continue
            lr, norm = self._optimize(loss, step)
            value = float(loss.item())
            self.loss_rows.append({'step': step, 'lr': lr, 'loss': value})
            pbar.set_postfix({'loss': f"{value:.4f}"}, refresh=False)
            if self.config.log_every and (step + 1) % self.config.log_every == 0:
                logger.info(f"微调 step {step + 1}/{self.config.steps}: loss={value:.6f} "
                            f"lr={lr:.3e} grad_norm={norm:.4f}")
            if (step + 1) % every == 0 and step + 1 < self.config.steps:
                self._record_metrics(step + 1, self.evaluate({l: eval_docs[l] for l in eval_langs}))
        pbar.close()

    def _record_metrics(self, step: int, results: Dict[str, PRF]) -> None:
        for lang, prf in results.items():
            self.metric_rows.append({'step': step, 'task': self.task.value, 'lang': lang,
                                     'precision': prf.precision, 'recall': prf.recall, 'f1': prf.f1})

    @torch.no_grad()
    def evaluate(self, docs_by_lang: Dict[str, List[Document]]) -> Dict[str, PRF]:
        """按语言计算 SER 实体 F1 或 RE 关系 F1（RE 使用标注实体）"""
        return {lang: self._evaluate_docs(docs) for lang, docs in docs_by_lang.items()}

    def predict(self, docs: List[Document]) -> List[Document]:
        """
        返回带预测结果的文档副本：SER 替换实体，RE 保留标注实体并替换关系
        """
        predicted = []
        for start in range(0, len(docs), self.config.batch_size):
            chunk = docs[start:start + self.config.batch_size]
            for doc, (entities, links) in zip(chunk, self._predict_chunk(chunk)):
                predicted.append(Document(id=doc.id, lang=doc.lang, page_w=doc.page_w, page_h=doc.page_h,
                                          words=doc.words, entities=entities, links=links,
                                          raster=doc.raster, raster_path=doc.raster_path))
        return predicted

    @torch.no_grad()
    def _predict_chunk(self, docs: List[Document]):
        encoded = encode_documents(docs, self.vocab, self.model_config)
        hidden = self.model(encoded)
        if self.task is Task.SER:
            spans = ser_predict(hidden, encoded, self.head, docs)
            return [(s, []) for s in spans]
        return [(doc.entities, re_predict(hidden[i], doc.entities, self.head, align, encoded.num_visual))
                for i, (doc, align) in enumerate(zip(docs, encoded.alignments))]

    def _evaluate_docs(self, docs: List[Document]) -> PRF:
        predicted = self.predict(docs)
        if self.task is Task.SER:
            return entity_f1([d.entities for d in docs], [p.entities for p in predicted])
        return relation_f1([list(d.links) for d in docs], [list(p.links) for p in predicted])

    def loss_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.loss_rows, columns=['step', 'lr', 'loss'])


def checkpoint_task(state: CheckpointState) -> Optional[Task]:
    task = state.meta.get('task')
    return Task(task) if task else None

