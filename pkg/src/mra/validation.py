"""Input checks for images and image batches, sklearn ``check_array`` style."""
from __future__ import annotations

import numpy as np

from .errors import GeometryError, ValidationError
from .patches import PatchGeometry


def check_image_batch(X, geom: PatchGeometry | None = None, channels: int | None = None,
                      dtype=np.float32, allow_empty: bool = False) -> np.ndarray:
    """Validate a (B, H, W, C) batch of images with values in [0, 1].

    Returns a contiguous array of ``dtype``.  uint8 input is scaled by 1/255.
    """
    X = np.asarray(X)
    if X.dtype == np.uint8:
        X = X.astype(dtype) / dtype(255)
    if X.ndim != 4:
        raise GeometryError(f"expected a (B, H, W, C) batch, got shape {X.shape}")
    if X.shape[0] == 0 and not allow_empty:
        raise ValidationError("empty image batch")
    X = np.ascontiguousarray(X, dtype=dtype)
    if X.size and not np.isfinite(X).all():
        raise ValidationError("images contain non-finite values")
    if X.size and (X.min() < 0.0 or X.max() > 1.0):
        raise ValidationError(
            f"pixel values must lie in [0, 1], got range [{X.min():.4g}, {X.max():.4g}]"
        )
    if geom is not None and X.shape[1:3] != (geom.height, geom.width):
        raise GeometryError(
            f"images are {X.shape[1]}x{X.shape[2]}, expected {geom.height}x{geom.width}"
        )
    if channels is not None and X.shape[3] != channels:
        raise GeometryError(f"images have {X.shape[3]} channels, expected {channels}")
    return X


def check_image(img, geom: PatchGeometry | None = None, channels: int | None = None,
                dtype=np.float32) -> np.ndarray:
    """Validate a single (H, W, C) image."""
    img = np.asarray(img)
    if img.ndim != 3:
        raise GeometryError(f"expected an (H, W, C) image, got shape {img.shape}")
    return check_image_batch(img[None], geom, channels, dtype)[0]


def check_labels(y, n: int) -> np.ndarray:
    y = np.asarray(y)
    if y.shape != (n,):
        raise ValidationError(f"expected {n} labels, got shape {y.shape}")
    if n and (not np.issubdtype(y.dtype, np.integer) or y.min() < 0):
        raise ValidationError("labels must be non-negative integers")
    return y.astype(np.int64)


def check_fraction(value, name: str, closed_right: bool = True) -> float:
    value = float(value)
    ok = 0.0 <= value <= 1.0 if closed_right else 0.0 <= value < 1.0
    if not ok:
        bracket = "]" if closed_right else ")"
        raise ValidationError(f"{name} must lie in [0, 1{bracket}, got {value}")
    return value
