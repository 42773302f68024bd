#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
异常定义
校验类错误（命令行退出码 1）与运行时错误（退出码 2）分属两个分支
"""

from typing import Optional


class LxlabError(Exception):
    """所有 lxlab 异常的基类"""


class ValidationError(LxlabError, ValueError):
    """输入、配置或数据不合法"""


class ConfigError(ValidationError):
    """配置项缺失或取值不合法"""


class UsageError(ValidationError):
    """命令行用法错误"""


class SchemaError(ValidationError):
    """数据集或语料记录不符合约定格式"""

    def __init__(self, message: str, field: Optional[str] = None, doc_id: Optional[str] = None):
        self.field = field
        self.doc_id = doc_id
        where = []
        if doc_id is not None:
            where.append(f"document={doc_id}")
        if field is not None:
            where.append(f"field={field}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


class VocabError(ValidationError):
    """词表文件不合法"""


class DimensionError(ValidationError):
    """张量形状不匹配"""


class CoordinateRangeError(ValidationError):
    """坐标超出 [0, 1000] 归一化范围"""


class EmptyTargetError(ValidationError):
    """交叉熵的所有目标都被忽略，均值无定义"""


class NumericError(LxlabError, ArithmeticError):
    """计算中出现 NaN/Inf"""

    def __init__(self, message: str, where: Optional[str] = None):
        self.where = where
        super().__init__(f"{message} [{where}]" if where else message)


class TrainingDivergedError(NumericError):
    """训练损失出现非有限值"""

    def __init__(self, step: int, value: float):
        self.step = step
        self.value = value
        super().__init__(f"损失在第 {step} 步变为 {value}", where=f"step={step}")


class CheckpointError(LxlabError):
    """检查点读写失败"""


class CorruptCheckpointError(CheckpointError):
    """检查点文件损坏或被截断"""


class CheckpointVersionError(CheckpointError):
    """检查点格式版本不受支持"""


class ShapeMismatchError(CheckpointError):
    """检查点张量形状与模型不一致"""

    def __init__(self, name: str, expected, found):
        self.name = name
        self.expected = tuple(expected)
        self.found = tuple(found)
        super().__init__(f"张量 {name} 形状不匹配: 模型 {self.expected}, 检查点 {self.found}")
