#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
检查点读写

文件布局：
    b"LXLM" | u32 版本 | u64 头长度 | JSON 头 | 小端 float64 数据区

JSON 头包含模型配置、张量索引（名称 → 偏移/形状，偏移以元素计）与元数据。
Adam 的一阶/二阶矩以 optim.m.<name> / optim.v.<name> 存放，步数在元数据中。
"""

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

import numpy as np
import torch
from torch import nn

from lxlab.core.numerics import DTYPE, AdamState
from lxlab.errors import (CheckpointError, CheckpointVersionError, CorruptCheckpointError,
                          ShapeMismatchError)
from lxlab.models.model_config import ModelConfig

logger = logging.getLogger(__name__)

MAGIC = b"LXLM"
VERSION = 1
_PREAMBLE = struct.Struct("<4sIQ")
_OPTIM_M = "optim.m."
_OPTIM_V = "optim.v."

PathLike = Union[str, Path]


@dataclass
class CheckpointState:
    """检查点内容：模型配置、命名张量、可选的优化器状态与元数据"""
    config: ModelConfig
    tensors: Dict[str, torch.Tensor] = field(default_factory=dict)
    optimizer: Optional[AdamState] = None
    meta: Dict[str, Any] = field(default_factory=dict)

    @property
    def step(self) -> int:
        return int(self.meta.get('step', 0))


def collect_tensors(modules: Mapping[str, nn.Module]) -> Dict[str, torch.Tensor]:
    """{前缀: 模块} → {前缀.参数名: 参数副本}，按模块与注册顺序"""
    tensors = {}
    for prefix, module in modules.items():
        for name, p in module.named_parameters():
            tensors[f"{prefix}.{name}"] = p.detach().clone()
    return tensors


def optimizer_for(modules: Mapping[str, nn.Module]):
    """把多个模块的参数合并为 adam_step 可用的 (名称, 参数) 列表，名称与 collect_tensors 一致"""
    return [(f"{prefix}.{name}", p) for prefix, module in modules.items()
            for name, p in module.named_parameters()]


@torch.no_grad()
def restore_modules(state: CheckpointState, modules: Mapping[str, nn.Module]) -> None:
    """
    把检查点张量写回模块参数，只处理给出的前缀

    Raises:
        ShapeMismatchError: 第一个形状不一致的张量
        CheckpointError: 检查点缺少某个参数
    """
    for prefix, module in modules.items():
        for name, p in module.named_parameters():
            key = f"{prefix}.{name}"
            if key not in state.tensors:
                raise CheckpointError(f"检查点缺少张量 {key}")
            src = state.tensors[key]
            if tuple(src.shape) != tuple(p.shape):
                raise ShapeMismatchError(key, tuple(p.shape), tuple(src.shape))
            p.copy_(src)


def save_checkpoint(state: CheckpointState, path: PathLike) -> Path:
    """
    写出检查点；相同内容总是得到相同字节

    Args:
        state: 检查点内容
        path: 目标文件

    Returns:
        写出的路径
    """
    path = Path(path)
    tensors: Dict[str, torch.Tensor] = dict(state.tensors)
    meta = dict(state.meta)
    if state.optimizer is not None:
        meta['optim_step'] = state.optimizer.step
        for name, m in state.optimizer.m.items():
            tensors[_OPTIM_M + name] = m
        for name, v in state.optimizer.v.items():
            tensors[_OPTIM_V + name] = v

    index = {}
    chunks = []
    offset = 0
    for name, tensor in tensors.items():
        array = np.ascontiguousarray(tensor.detach().cpu().numpy(), dtype='<f8')
        index[name] = {'offset': offset, 'shape': list(array.shape)}
        chunks.append(array.tobytes())
        offset += array.size

    header = json.dumps({
        'config': state.config.to_dict(),
        'tensors': index,
        'meta': meta,
        'has_optimizer': state.optimizer is not None,
    }, sort_keys=True, ensure_ascii=False).encode('utf-8')

    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'wb') as f:
        f.write(_PREAMBLE.pack(MAGIC, VERSION, len(header)))
        f.write(header)
        for chunk in chunks:
            f.write(chunk)
    logger.info(f"检查点已保存: {path} ({len(tensors)} 个张量, {offset} 个元素)")
    return path


def load_checkpoint(path: PathLike) -> CheckpointState:
    """
    读取检查点，张量逐位还原

    Raises:
        CorruptCheckpointError: 魔数错误、头部无法解析或数据区被截断
        CheckpointVersionError: 版本号不受支持
    """
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"检查点不存在: {path}")
    data = path.read_bytes()
    if len(data) < _PREAMBLE.size:
        raise CorruptCheckpointError(f"检查点过短: {path} ({len(data)} 字节)")
    magic, version, header_len = _PREAMBLE.unpack_from(data)
    if magic != MAGIC:
        raise CorruptCheckpointError(f"不是 lxlab 检查点: {path}")
    if version != VERSION:
        raise CheckpointVersionError(f"检查点版本 {version} 不受支持（当前 {VERSION}）: {path}")

    start = _PREAMBLE.size
    if start + header_len > len(data):
        raise CorruptCheckpointError(f"检查点头部被截断: {path}")
    try:
        header = json.loads(data[start:start + header_len].decode('utf-8'))
        config = ModelConfig.from_dict(header['config'])
        index = header['tensors']
    except (ValueError, KeyError, TypeError) as e:
        raise CorruptCheckpointError(f"检查点头部无法解析: {path}: {e}") from e

    payload = data[start + header_len:]
    n_values = len(payload) // 8
    values = np.frombuffer(payload, dtype='<f8', count=n_values)
    expected = max((spec['offset'] + int(np.prod(spec['shape'], dtype=np.int64)) for spec in index.values()),
                   default=0)
    if len(payload) != expected * 8:
        raise CorruptCheckpointError(f"检查点数据区长度 {len(payload)} 与索引不符（应为 {expected * 8}）: {path}")

    tensors: Dict[str, torch.Tensor] = {}
    for name, spec in index.items():
        size = int(np.prod(spec['shape'], dtype=np.int64))
        array = values[spec['offset']:spec['offset'] + size].reshape(spec['shape'])
        tensors[name] = torch.from_numpy(array.astype(np.float64, copy=True)).to(DTYPE)

    meta = dict(header.get('meta', {}))
    optimizer = None
    if header.get('has_optimizer'):
        optimizer = AdamState(step=int(meta.pop('optim_step', 0)))
        for name in list(tensors):
            if name.startswith(_OPTIM_M):
                optimizer.m[name[len(_OPTIM_M):]] = tensors.pop(name)
            elif name.startswith(_OPTIM_V):
                optimizer.v[name[len(_OPTIM_V):]] = tensors.pop(name)
    logger.info(f"检查点已加载: {path} ({len(tensors)} 个张量)")
    return CheckpointState(config=config, tensors=tensors, optimizer=optimizer, meta=meta)
