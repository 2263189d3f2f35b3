"""Transformer building blocks that expose their attention queries and keys.

Gradients come from torch autograd; :mod:`mra.gradcheck` holds the
finite-difference oracle that the test-suite checks them against.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .errors import NumericError, ValidationError


@dataclass
class AttentionRecord:
    """Per-head queries and keys of one attention layer.

    ``q`` and ``k`` have shape (B, heads, T, head_dim); token 0 is the class
    token when the record comes from the encoder.
    """
    q: torch.Tensor
    k: torch.Tensor
    block_index: int = -1


def check_finite(t: torch.Tensor, where: str) -> torch.Tensor:
    if not torch.isfinite(t).all():
        raise NumericError(f"non-finite values in {where}")
    return t


def softmax(scores, dim: int = -1):
    """Numerically stable softmax (max-subtracted)."""
    scores = torch.as_tensor(scores)
    shifted = scores - scores.amax(dim=dim, keepdim=True)
    e = shifted.exp()
    return e / e.sum(dim=dim, keepdim=True)


def mse_loss(pred: torch.Tensor, target: torch.Tensor, weights: torch.Tensor | None = None):
    """Weighted mean of squared differences.

    ``weights`` broadcasts against ``pred``; the result is
    ``sum(w * (pred - target)**2) / sum(w * ones_like(pred))``.
    """
    if pred.shape != target.shape:
        raise ValidationError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    sq = (pred - target) ** 2
    if weights is None:
        return sq.mean()
    try:
        w = torch.broadcast_to(weights.to(sq.dtype), sq.shape)
    except RuntimeError as e:
        raise ValidationError(f"weights of shape {tuple(weights.shape)} do not broadcast "
                              f"to {tuple(sq.shape)}") from e
    total = w.sum()
    if total <= 0:
        raise ValidationError("weights sum to zero")
    return (sq * w).sum() / total


def init_weights(module: nn.Module, std: float = 0.02):
    """Truncated-normal projections, zero biases, unit layer-norm gains."""
    for m in module.modules():
        if isinstance(m, nn.Linear):
            nn.init.trunc_normal_(m.weight, std=std, a=-2 * std, b=2 * std)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.LayerNorm):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


class Attention(nn.Module):
    def __init__(self, dim: int, num_heads: int):
        super().__init__()
        if dim % num_heads:
            raise ValidationError(f"embed dim {dim} not divisible by {num_heads} heads")
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.scale = self.head_dim ** -0.5
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x, record: bool = False):
        B, T, D = x.shape
        qkv = self.qkv(x).reshape(B, T, 3, self.num_heads, self.head_dim).permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        attn = softmax((q @ k.transpose(-2, -1)) * self.scale)
        out = (attn @ v).transpose(1, 2).reshape(B, T, D)
        out = self.proj(out)
        return out, (AttentionRecord(q=q, k=k) if record else None)


class Mlp(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x):
        return self.fc2(self.act(self.fc1(x)))


class Block(nn.Module):
    """Pre-norm transformer block: ``x + Attn(LN(x))`` then ``+ MLP(LN(.))``."""

    def __init__(self, dim: int, num_heads: int, mlp_ratio: float = 4.0, name: str = "block"):
        super().__init__()
        self.name = name
        self.norm1 = nn.LayerNorm(dim, eps=1e-6)
        self.attn = Attention(dim, num_heads)
        self.norm2 = nn.LayerNorm(dim, eps=1e-6)
        self.mlp = Mlp(dim, int(dim * mlp_ratio))

    @property
    def embed_dim(self) -> int:
        return self.norm1.normalized_shape[0]

    def forward(self, x, record: bool = False):
        if x.shape[-1] != self.embed_dim:
            raise ValidationError(f"{self.name}: token dim {x.shape[-1]} != {self.embed_dim}")
        a, rec = self.attn(self.norm1(x), record=record)
        x = x + a
        x = x + self.mlp(self.norm2(x))
        check_finite(x, self.name)
        return x, rec


def sincos_pos_embed(dim: int, grid_h: int, grid_w: int) -> np.ndarray:
    """Fixed 2-D sine-cosine embeddings, shape (grid_h * grid_w, dim), row-major."""
    if dim % 4:
        raise ValidationError(f"sin-cos embedding needs dim divisible by 4, got {dim}")

    def one_axis(d, pos):
        omega = 1.0 / 10000 ** (np.arange(d // 2, dtype=np.float64) / (d / 2.0))
        out = np.outer(pos.reshape(-1), omega)
        return np.concatenate([np.sin(out), np.cos(out)], axis=1)

    rows, cols = np.meshgrid(np.arange(grid_h, dtype=np.float64),
                             np.arange(grid_w, dtype=np.float64), indexing="ij")
    return np.concatenate([one_axis(dim // 2, rows), one_axis(dim // 2, cols)], axis=1)


def make_optimizer(params, kind: str = "sgd", lr: float = 0.1, momentum: float = 0.9,
                   weight_decay: float = 0.0, betas=(0.9, 0.95)) -> torch.optim.Optimizer:
    params = list(params)
    if kind == "sgd":
        return torch.optim.SGD(params, lr=lr, momentum=momentum, weight_decay=weight_decay)
    if kind == "adamw":
        return torch.optim.AdamW(params, lr=lr, betas=tuple(betas), weight_decay=weight_decay)
    raise ValidationError(f"unknown optimizer {kind!r} (expected 'sgd' or 'adamw')")


def optimizer_step(optimizer: torch.optim.Optimizer, lr: float | None = None):
    """Apply one update; refuses (and leaves params untouched) on non-finite grads."""
    for group in optimizer.param_groups:
        for p in group["params"]:
            if p.grad is not None and not torch.isfinite(p.grad).all():
                raise NumericError("non-finite gradient; optimizer step refused")
    if lr is not None:
        for group in optimizer.param_groups:
            group["lr"] = lr
    optimizer.step()


def cosine_lr(base_lr: float, step: int, total_steps: int, warmup_steps: int = 0) -> float:
    if warmup_steps and step < warmup_steps:
        return base_lr * (step + 1) / warmup_steps
    span = max(1, total_steps - warmup_steps)
    t = min(1.0, (step - warmup_steps) / span)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * t))


def step_lr(base_lr: float, epoch: int, total_epochs: int) -> float:
    """x0.1 at one third and two thirds of training (0-based epoch)."""
    drops = sum(epoch >= m for m in (total_epochs // 3, 2 * total_epochs // 3) if m > 0)
    return base_lr * 0.1 ** drops
