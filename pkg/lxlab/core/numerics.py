#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
数值计算内核

编码器、预训练目标和任务层用到的可微算子：matmul、softmax、layernorm、
gelu、cross_entropy。每个算子是一个 torch.autograd.Function，反向传播手写，
由 torch 的 autograd 磁带负责拓扑排序。所有计算使用 float64。
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Sequence, Tuple

import torch
from torch import nn
from torch.autograd import Function

from lxlab.errors import DimensionError, EmptyTargetError, NumericError

logger = logging.getLogger(__name__)

DTYPE = torch.float64
IGNORE_INDEX = -100
# 注意力掩码的加性常数；exp 后在 float64 下精确为 0
MASK_VALUE = -1.0e9

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def configure_runtime(num_threads: int = 1) -> None:
    """设置线程数并启用确定性算法"""
    torch.set_num_threads(max(1, int(num_threads)))
    torch.use_deterministic_algorithms(True, warn_only=True)


def check_finite(tensor: torch.Tensor, where: str) -> torch.Tensor:
    """非有限值视为错误状态"""
    if not torch.isfinite(tensor).all():
        raise NumericError("出现 NaN/Inf", where=where)
    return tensor


class _MatMul(Function):
    @staticmethod
    def forward(ctx, a, b):
        ctx.save_for_backward(a, b)
        return check_finite(a @ b, "matmul")

    @staticmethod
    def backward(ctx, grad):
        a, b = ctx.saved_tensors
        grad_a = grad_b = None
        if ctx.needs_input_grad[0]:
            grad_a = grad @ b.transpose(-1, -2)
        if ctx.needs_input_grad[1]:
            if b.dim() == 2:
                # 前导批维只出现在 a 上，dB 在批维上累加
                grad_b = a.reshape(-1, a.shape[-1]).t() @ grad.reshape(-1, grad.shape[-1])
            else:
                grad_b = a.transpose(-1, -2) @ grad
        return grad_a, grad_b


class _Softmax(Function):
    @staticmethod
    def forward(ctx, x, axis):
        shifted = x - x.amax(dim=axis, keepdim=True)
        e = torch.exp(shifted)
        y = e / e.sum(dim=axis, keepdim=True)
        ctx.axis = axis
        ctx.save_for_backward(y)
        return check_finite(y, "softmax")

    @staticmethod
    def backward(ctx, grad):
        (y,) = ctx.saved_tensors
        dot = (grad * y).sum(dim=ctx.axis, keepdim=True)
        return y * (grad - dot), None


class _LayerNorm(Function):
    @staticmethod
    def forward(ctx, x, gamma, beta, eps):
        mu = x.mean(dim=-1, keepdim=True)
        xc = x - mu
        var = (xc * xc).mean(dim=-1, keepdim=True)
        rstd = 1.0 / torch.sqrt(var + eps)
        xhat = xc * rstd
        ctx.save_for_backward(xhat, rstd, gamma)
        return check_finite(xhat * gamma + beta, "layernorm")

    @staticmethod
    def backward(ctx, grad):
        xhat, rstd, gamma = ctx.saved_tensors
        n = xhat.shape[-1]
        dxhat = grad * gamma
        dx = (rstd / n) * (
            n * dxhat
            - dxhat.sum(dim=-1, keepdim=True)
            - xhat * (dxhat * xhat).sum(dim=-1, keepdim=True)
        )
        dgamma = (grad * xhat).reshape(-1, n).sum(dim=0)
        dbeta = grad.reshape(-1, n).sum(dim=0)
        return dx, dgamma, dbeta, None


class _Gelu(Function):
    @staticmethod
    def forward(ctx, x):
        ctx.save_for_backward(x)
        return check_finite(0.5 * x * (1.0 + torch.erf(x * _INV_SQRT2)), "gelu")

    @staticmethod
    def backward(ctx, grad):
        (x,) = ctx.saved_tensors
        cdf = 0.5 * (1.0 + torch.erf(x * _INV_SQRT2))
        pdf = torch.exp(-0.5 * x * x) * _INV_SQRT2PI
        return grad * (cdf + x * pdf)


class _CrossEntropy(Function):
    @staticmethod
    def forward(ctx, logits, targets, ignore_index):
        valid = targets != ignore_index
        n_valid = int(valid.sum())
        if n_valid == 0:
            raise EmptyTargetError("所有目标均为 ignore_index，交叉熵均值无定义")
        safe = torch.where(valid, targets, torch.zeros_like(targets))
        if bool(((safe < 0) | (safe >= logits.shape[-1])).any()):
            raise DimensionError(f"目标类别超出 [0, {logits.shape[-1]})")

        m = logits.amax(dim=-1, keepdim=True)
        lse = m.squeeze(-1) + torch.log(torch.exp(logits - m).sum(dim=-1))
        picked = logits.gather(1, safe.unsqueeze(1)).squeeze(1)
        losses = torch.where(valid, lse - picked, torch.zeros_like(lse))
        ctx.n_valid = n_valid
        ctx.save_for_backward(logits, lse, safe, valid)
        return check_finite(losses.sum() / n_valid, "cross_entropy")

    @staticmethod
    def backward(ctx, grad):
        logits, lse, safe, valid = ctx.saved_tensors
        probs = torch.exp(logits - lse.unsqueeze(1))
        probs[torch.arange(probs.shape[0]), safe] -= 1.0
        probs = probs * valid.unsqueeze(1).to(probs.dtype)
        return probs * (grad / ctx.n_valid), None, None


def matmul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """
    矩阵乘法 A[..×m×k]·B[k×n] 或同批维的 A[..×m×k]·B[..×k×n]

    Raises:
        DimensionError: 内维不一致或批维不一致
    """
    if a.dim() < 2 or b.dim() < 2:
        raise DimensionError(f"matmul 需要至少二维输入: {tuple(a.shape)} · {tuple(b.shape)}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul 内维不一致: {tuple(a.shape)} · {tuple(b.shape)}")
    if b.dim() > 2 and a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul 批维不一致: {tuple(a.shape)} · {tuple(b.shape)}")
    return _MatMul.apply(a, b)


def softmax(x: torch.Tensor, axis: int = -1) -> torch.Tensor:
    """减去最大值后的数值稳定 softmax"""
    if x.shape[axis] < 1:
        raise DimensionError("softmax 轴长度必须 ≥ 1")
    return _Softmax.apply(x, axis)


def layernorm(x: torch.Tensor, gamma: torch.Tensor, beta: torch.Tensor, eps: float = 1e-12) -> torch.Tensor:
    """逐行零均值单位方差归一化后做仿射变换"""
    if x.shape[-1] < 2:
        raise DimensionError("layernorm 的特征维必须 ≥ 2")
    if gamma.shape != x.shape[-1:] or beta.shape != x.shape[-1:]:
        raise DimensionError(f"layernorm 仿射参数形状应为 {tuple(x.shape[-1:])}")
    return _LayerNorm.apply(x, gamma, beta, eps)


def gelu(x: torch.Tensor) -> torch.Tensor:
    """基于 erf 的精确 GELU"""
    return _Gelu.apply(x)


def cross_entropy(logits: torch.Tensor, targets: torch.Tensor, ignore_index: int = IGNORE_INDEX) -> torch.Tensor:
    """
    非忽略行上 -log softmax 的均值

    Args:
        logits: [n×c]
        targets: [n] 类别 id 或 ignore_index

    Raises:
        EmptyTargetError: 所有行都被忽略
    """
    if logits.dim() != 2 or targets.shape != logits.shape[:1]:
        raise DimensionError(f"cross_entropy 形状不匹配: {tuple(logits.shape)} / {tuple(targets.shape)}")
    return _CrossEntropy.apply(logits, targets.long(), ignore_index)


@dataclass
class AdamState:
    """Adam 一阶/二阶矩与步数"""
    step: int = 0
    m: Dict[str, torch.Tensor] = field(default_factory=dict)
    v: Dict[str, torch.Tensor] = field(default_factory=dict)


@torch.no_grad()
def adam_step(params: Iterable[Tuple[str, nn.Parameter]], state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> int:
    """
    带偏差修正的 Adam 更新，原地修改参数

    Args:
        params: (名称, 参数) 序列，通常来自 named_parameters()
        state: 优化器状态，step 在此递增（t ≥ 1）
        lr: 本步学习率

    Returns:
        本步的 t
    """
    state.step += 1
    t = state.step
    bias1 = 1.0 - beta1 ** t
    bias2 = 1.0 - beta2 ** t
    for name, p in params:
        if p.grad is None:
            continue
        g = p.grad
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = torch.zeros_like(p)
            state.v[name] = torch.zeros_like(p)
        v = state.v[name]
        m.mul_(beta1).add_(g, alpha=1.0 - beta1)
        v.mul_(beta2).addcmul_(g, g, value=1.0 - beta2)
        p.sub_(lr * (m / bias1) / (torch.sqrt(v / bias2) + eps))
    return t


class Dense(nn.Module):
    """x·W + b，权重按 [in×out] 存放"""

    def __init__(self, in_dim: int, out_dim: int, bias: bool = True):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(in_dim, out_dim, dtype=DTYPE))
        self.bias = nn.Parameter(torch.zeros(out_dim, dtype=DTYPE)) if bias else None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class LayerNorm(nn.Module):
    def __init__(self, dim: int, eps: float = 1e-12):
        super().__init__()
        self.gamma = nn.Parameter(torch.ones(dim, dtype=DTYPE))
        self.beta = nn.Parameter(torch.zeros(dim, dtype=DTYPE))
        self.eps = eps

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return layernorm(x, self.gamma, self.beta, self.eps)


@torch.no_grad()
def init_parameters(module: nn.Module, seed: int, scale: float = 0.02) -> None:
    """
    按注册顺序用种子生成器初始化参数：
    gamma=1，beta/bias=0，其余 uniform(-scale, scale)
    """
    gen = torch.Generator().manual_seed(int(seed))
    for name, p in module.named_parameters():
        leaf = name.rsplit('.', 1)[-1]
        if leaf == 'gamma':
            p.fill_(1.0)
        elif leaf in ('beta', 'bias'):
            p.zero_()
        else:
            p.copy_(torch.rand(p.shape, generator=gen, dtype=DTYPE) * (2 * scale) - scale)


@dataclass
class GradCheckResult:
    """有限差分检查结果"""
    analytic: List[float]
    numeric: List[float]

    @property
    def max_rel_err(self) -> float:
        errs = [abs(a - n) / max(abs(a), abs(n), 1e-300) for a, n in zip(self.analytic, self.numeric)]
        return max(errs, default=0.0)

    def ok(self, rtol: float = 1e-6, atol: float = 1e-9) -> bool:
        return all(abs(a - n) <= rtol * max(abs(a), abs(n)) + atol
                   for a, n in zip(self.analytic, self.numeric))


def finite_difference_check(loss_fn: Callable[[], torch.Tensor], param: torch.Tensor,
                            indices: Sequence[Tuple[int, ...]], h: float = 1e-5) -> GradCheckResult:
    """
    对 param 的若干元素比较解析梯度与中心差分

    Args:
        loss_fn: 无参函数，返回标量损失（每次调用重新前向）
        param: 需要检查的叶子张量（requires_grad=True）
        indices: 元素下标列表
        h: 差分步长
    """
    if param.grad is not None:
        param.grad = None
    loss_fn().backward()
    grad = param.grad.detach().clone()

    analytic, numeric = [], []
    with torch.no_grad():
        for idx in indices:
            original = param[idx].item()
            param[idx] = original + h
            plus = loss_fn().item()
            param[idx] = original - h
            minus = loss_fn().item()
            param[idx] = original
            analytic.append(grad[idx].item())
            numeric.append((plus - minus) / (2 * h))
    return GradCheckResult(analytic=analytic, numeric=numeric)
