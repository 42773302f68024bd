#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
训练配置模型
定义预训练/微调任务、三种微调设置及其校验
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional

from lxlab.config import Config
from lxlab.errors import ConfigError

logger = logging.getLogger(__name__)

# 报表列顺序：FUNSD 作为英文列
XFUND_LANGS = ("en", "zh", "ja", "es", "fr", "it", "de", "pt")


class Regime(Enum):
    """微调设置"""
    LANG_SPECIFIC = "LANG_SPECIFIC"   # 在 X 上训练，在 X 上测试
    ZERO_SHOT = "ZERO_SHOT"           # 只在英文上训练，在各语言上测试
    MULTITASK = "MULTITASK"           # 在所有语言上训练，分语言测试


class Task(Enum):
    PRETRAIN = "PRETRAIN"
    SER = "SER"
    RE = "RE"


@dataclass
class TrainConfig:
    """训练配置"""
    preset: str = "TINY"
    lr: float = 1e-3
    warmup_frac: float = 0.1
    steps: int = 500
    batch_size: int = 8
    grad_clip: float = 1.0
    seed: int = 42
    regime: Regime = Regime.LANG_SPECIFIC
    train_langs: List[str] = field(default_factory=lambda: ["en"])
    eval_langs: List[str] = field(default_factory=list)
    task: Task = Task.SER
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    log_every: int = 50
    eval_every: Optional[int] = None
    re_negative_ratio: Optional[float] = None

    def __post_init__(self):
        if isinstance(self.regime, str):
            self.regime = Regime(self.regime.upper())
        if isinstance(self.task, str):
            self.task = Task(self.task.upper())
        self.train_langs = [l.lower() for l in self.train_langs]
        self.eval_langs = [l.lower() for l in (self.eval_langs or self.train_langs)]
        self.validate()

    def validate(self) -> 'TrainConfig':
        """
        校验数值范围与微调设置约束

        Raises:
            ConfigError: 设置与语言不匹配或数值非法
        """
        if self.steps < 0 or self.batch_size < 1:
            raise ConfigError(f"steps 必须 ≥ 0 且 batch_size ≥ 1: {self.steps}/{self.batch_size}")
        if not 0.0 <= self.warmup_frac <= 1.0:
            raise ConfigError(f"warmup_frac 必须在 [0, 1]: {self.warmup_frac}")
        if self.lr < 0 or self.grad_clip <= 0:
            raise ConfigError(f"lr 必须非负且 grad_clip 必须为正: {self.lr}/{self.grad_clip}")
        if self.task is Task.PRETRAIN:
            return self
        if not self.train_langs:
            raise ConfigError("train_langs 不能为空")

        if self.regime is Regime.ZERO_SHOT and set(self.train_langs) != {"en"}:
            raise ConfigError(f"ZERO_SHOT 只能在英文上训练，得到 train_langs={self.train_langs}")
        if self.regime is Regime.LANG_SPECIFIC:
            if len(self.train_langs) != 1 or self.eval_langs != self.train_langs:
                raise ConfigError(
                    f"LANG_SPECIFIC 需要单一语言且在同一语言上评估: {self.train_langs}/{self.eval_langs}"
                )
        if self.regime is Regime.MULTITASK:
            if sorted(self.train_langs) != sorted(XFUND_LANGS):
                raise ConfigError(f"MULTITASK 必须在全部八种语言上训练 {list(XFUND_LANGS)}，得到 {self.train_langs}")
            unknown = sorted(set(self.eval_langs) - set(self.train_langs))
            if unknown:
                raise ConfigError(f"MULTITASK 的评估语言 {unknown} 不在训练语言中")
        return self

    @classmethod
    def from_config(cls, config: Config, **overrides) -> 'TrainConfig':
        """
        从 Config 的 train.* 节创建，overrides 优先

        未给出语言时：MULTITASK 在全部八种语言上训练，
        ZERO_SHOT 在八种语言上评估，其余设置默认只用英文
        """
        section = dict(config.section('train'))
        section.update({k: v for k, v in overrides.items() if v is not None})
        regime = Regime(str(section.get('regime', 'LANG_SPECIFIC')).upper())

        train_langs = _as_lang_list(section.get('train_langs'))
        eval_langs = _as_lang_list(section.get('eval_langs'))
        if not train_langs:
            train_langs = list(XFUND_LANGS) if regime is Regime.MULTITASK else ['en']
        if not eval_langs:
            eval_langs = list(XFUND_LANGS) if regime is Regime.ZERO_SHOT else list(train_langs)

        values: Dict[str, Any] = {
            'preset': section.get('preset', config.get('model.preset', 'TINY')),
            'seed': int(section.get('seed', config.get('runtime.seed', 42))),
            're_negative_ratio': section.get('re_negative_ratio', config.get('heads.re_negative_ratio')),
            'eval_every': section.get('eval_every'),
            'regime': regime,
            'train_langs': train_langs,
            'eval_langs': eval_langs,
        }
        for key in ('lr', 'warmup_frac', 'grad_clip', 'beta1', 'beta2', 'eps'):
            if section.get(key) is not None:
                values[key] = float(section[key])
        for key in ('steps', 'batch_size', 'log_every'):
            if section.get(key) is not None:
                values[key] = int(section[key])
        if section.get('task') is not None:
            values['task'] = section['task']
        return cls(**values)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'preset': self.preset,
            'lr': self.lr,
            'warmup_frac': self.warmup_frac,
            'steps': self.steps,
            'batch_size': self.batch_size,
            'grad_clip': self.grad_clip,
            'seed': self.seed,
            'regime': self.regime.value,
            'train_langs': list(self.train_langs),
            'eval_langs': list(self.eval_langs),
            'task': self.task.value,
            'beta1': self.beta1,
            'beta2': self.beta2,
            'eps': self.eps,
            'log_every': self.log_every,
            'eval_every': self.eval_every,
            're_negative_ratio': self.re_negative_ratio,
        }


def _as_lang_list(value) -> List[str]:
    """接受 "en,zh" 或列表"""
    if value is None:
        return []
    if isinstance(value, str):
        return [v.strip().lower() for v in value.split(',') if v.strip()]
    return [str(v).lower() for v in value]
