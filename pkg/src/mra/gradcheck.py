"""Central finite-difference oracle for autograd gradients (float64)."""
from __future__ import annotations

from typing import Callable, Iterable

import torch


def relative_error(a: torch.Tensor, b: torch.Tensor) -> float:
    """``||a - b|| / max(||a||, ||b||)``; 0 when both vanish."""
    denom = max(a.norm().item(), b.norm().item())
    if denom == 0.0:
        return 0.0
    return (a - b).norm().item() / denom


@torch.no_grad()
def numeric_grad(loss_fn: Callable[[], torch.Tensor], tensor: torch.Tensor, eps: float = 1e-5,
                 max_coords: int | None = None, generator: torch.Generator | None = None):
    """Central differences of ``loss_fn`` w.r.t. entries of ``tensor`` (perturbed in place).

    With ``max_coords`` only a random subset of coordinates is probed; the
    returned mask marks which ones.
    """
    flat = tensor.view(-1)
    n = flat.numel()
    if max_coords is None or max_coords >= n:
        coords = torch.arange(n)
    else:
        coords = torch.randperm(n, generator=generator)[:max_coords]
    grad = torch.zeros(n, dtype=tensor.dtype)
    probed = torch.zeros(n, dtype=torch.bool)
    for i in coords.tolist():
        orig = flat[i].item()
        flat[i] = orig + eps
        up = loss_fn().item()
        flat[i] = orig - eps
        down = loss_fn().item()
        flat[i] = orig
        grad[i] = (up - down) / (2 * eps)
        probed[i] = True
    return grad.view_as(tensor), probed.view_as(tensor)


def check_gradients(loss_fn: Callable[[], torch.Tensor], tensors: Iterable[tuple[str, torch.Tensor]],
                    eps: float = 1e-5, max_coords: int | None = None, seed: int = 0) -> dict[str, float]:
    """Relative error between autograd and finite differences, per named tensor.

    Tensors must be float64 leaves with ``requires_grad=True``.
    """
    tensors = list(tensors)
    for _, t in tensors:
        t.grad = None
    loss = loss_fn()
    loss.backward()
    gen = torch.Generator().manual_seed(seed)
    out = {}
    for name, t in tensors:
        analytic = t.grad.detach().clone() if t.grad is not None else torch.zeros_like(t)
        numeric, probed = numeric_grad(loss_fn, t.data, eps=eps, max_coords=max_coords,
                                       generator=gen)
        out[name] = relative_error(analytic[probed], numeric[probed])
    return out
