"""Model-free augmentations: Cutout, Mixup and CutMix on (H, W, C) images."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GeometryError, ValidationError
from .validation import check_fraction

MIXUP_ALPHA = 0.2
CUTMIX_ALPHA = 1.0


@dataclass(frozen=True)
class MixedLabel:
    """Soft target ``lam * onehot(label_a) + (1 - lam) * onehot(label_b)``."""
    label_a: int
    label_b: int
    lam: float

    def __post_init__(self):
        check_fraction(self.lam, "lam")

    @property
    def weights(self) -> tuple[float, float]:
        return self.lam, 1.0 - self.lam


def _same_shape(a, b):
    if a.shape != b.shape:
        raise GeometryError(f"image shapes differ: {a.shape} vs {b.shape}")


def _box(center: tuple[int, int], size_h: int, size_w: int, h: int, w: int):
    cy, cx = center
    y1, y2 = np.clip(cy - size_h // 2, 0, h), np.clip(cy + size_h - size_h // 2, 0, h)
    x1, x2 = np.clip(cx - size_w // 2, 0, w), np.clip(cx + size_w - size_w // 2, 0, w)
    return int(y1), int(y2), int(x1), int(x2)


def cutout(img: np.ndarray, hole_size: int, rng=None, center: tuple[int, int] | None = None):
    """Zero a ``hole_size`` square centred uniformly at random, clipped at borders."""
    h, w = img.shape[:2]
    if hole_size < 0:
        raise ValidationError(f"hole_size must be >= 0, got {hole_size}")
    if hole_size > min(h, w):
        raise ValidationError(f"hole_size {hole_size} exceeds image side {min(h, w)}")
    out = img.copy()
    if hole_size == 0:
        return out
    if center is None:
        rng = np.random.default_rng(rng)
        center = (int(rng.integers(h)), int(rng.integers(w)))
    y1, y2, x1, x2 = _box(center, hole_size, hole_size, h, w)
    out[y1:y2, x1:x2] = 0
    return out


def mixup(a: np.ndarray, label_a: int, b: np.ndarray, label_b: int, alpha: float = MIXUP_ALPHA,
          rng=None, lam: float | None = None):
    """Convex blend ``lam * a + (1 - lam) * b`` with ``lam ~ Beta(alpha, alpha)``."""
    _same_shape(a, b)
    if lam is None:
        lam = float(np.random.default_rng(rng).beta(alpha, alpha))
    lam = check_fraction(lam, "lam")
    out = (lam * a + (1.0 - lam) * b).astype(a.dtype)
    return out, MixedLabel(int(label_a), int(label_b), lam)


def cutmix_box(h: int, w: int, lam: float, center: tuple[int, int]):
    """Box of area ratio ``1 - lam`` (each side scaled by sqrt(1 - lam)), clipped."""
    cut = np.sqrt(1.0 - lam)
    return _box(center, int(h * cut), int(w * cut), h, w)


def cutmix(a: np.ndarray, label_a: int, b: np.ndarray, label_b: int, alpha: float = CUTMIX_ALPHA,
           rng=None, lam: float | None = None, center: tuple[int, int] | None = None):
    """Paste a box of ``b`` into ``a``; ``lam`` is re-set to the unpasted area fraction."""
    _same_shape(a, b)
    h, w = a.shape[:2]
    rng = np.random.default_rng(rng)
    if lam is None:
        lam = float(rng.beta(alpha, alpha))
    lam = check_fraction(lam, "lam")
    if center is None:
        center = (int(rng.integers(h)), int(rng.integers(w)))
    y1, y2, x1, x2 = cutmix_box(h, w, lam, center)
    out = a.copy()
    out[y1:y2, x1:x2] = b[y1:y2, x1:x2]
    lam_adj = 1.0 - (y2 - y1) * (x2 - x1) / float(h * w)
    return out, MixedLabel(int(label_a), int(label_b), lam_adj)
