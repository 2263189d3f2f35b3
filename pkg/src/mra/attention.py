"""Class-token attention scores and the patch-selection policies built on them."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import StateError, ValidationError
from .layers import AttentionRecord, softmax
from .mae import visible_count

STRATEGIES = ("mask_low", "mask_high", "random")


def class_token_scores(record: AttentionRecord | None, scaled: bool = False,
                       normalize: bool = False, aggregate: str = "mean") -> torch.Tensor:
    """Score of each patch as the class-token query dotted with its key.

    ``record`` must come from a full-visibility encoder pass.  Returns shape
    (B, N) for batched records.  ``aggregate`` is ``"mean"``, ``"max"`` or
    ``"head:<i>"``; ``normalize`` applies a softmax over patches per head.
    """
    if record is None:
        raise StateError("no attention record: run encode_visible(..., record=True) "
                         "with every patch visible first")
    q_cls = record.q[..., 0, :]  # (B, h, d)
    keys = record.k[..., 1:, :]  # (B, h, N, d)
    scores = torch.einsum("...hd,...hnd->...hn", q_cls, keys)
    if scaled:
        scores = scores * q_cls.shape[-1] ** -0.5
    if normalize:
        scores = softmax(scores, dim=-1)
    if aggregate == "mean":
        return scores.mean(dim=-2)
    if aggregate == "max":
        return scores.amax(dim=-2)
    if aggregate.startswith("head:"):
        return scores[..., int(aggregate[5:]), :]
    raise ValidationError(f"unknown head aggregation {aggregate!r}")


def top_rank(scores, k: int) -> np.ndarray:
    """Indices of the ``k`` largest scores, ties to the lower index, sorted ascending."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    n = scores.size
    if not 0 <= k <= n:
        raise ValidationError(f"K={k} outside [0, {n}]")
    order = np.argsort(-scores, kind="stable")
    return np.sort(order[:k])


def bottom_rank(scores, k: int) -> np.ndarray:
    """Indices of the ``k`` smallest scores, ties to the lower index, sorted ascending."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    n = scores.size
    if not 0 <= k <= n:
        raise ValidationError(f"K={k} outside [0, {n}]")
    return np.sort(np.argsort(scores, kind="stable")[:k])


@dataclass(frozen=True)
class MaskingPolicy:
    """Which patches stay visible at augmentation time.

    ``mask_ratio`` is the fraction of patches hidden; ``keep_count`` overrides it.
    """
    strategy: str = "mask_low"
    mask_ratio: float = 0.40
    keep_count: int | None = None

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValidationError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if not 0.0 <= self.mask_ratio < 1.0:
            raise ValidationError(f"mask_ratio must lie in [0, 1), got {self.mask_ratio}")

    def budget(self, num_patches: int) -> int:
        k = self.keep_count if self.keep_count is not None else visible_count(num_patches, self.mask_ratio)
        if not 1 <= k <= num_patches:
            raise ValidationError(f"keep count {k} outside [1, {num_patches}]")
        return k


def select_visible(scores, policy: MaskingPolicy, rng=None) -> np.ndarray:
    """Kept patch indices for one image under ``policy``."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    k = policy.budget(scores.size)
    if policy.strategy == "mask_low":
        return top_rank(scores, k)
    if policy.strategy == "mask_high":
        return bottom_rank(scores, k)
    rng = np.random.default_rng(rng)
    return np.sort(rng.permutation(scores.size)[:k])
