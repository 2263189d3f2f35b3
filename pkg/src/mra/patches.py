"""Patch-grid geometry, patchify/unpatchify and block masks.

Patches are indexed row-major over a ``grid_h x grid_w`` grid: patch ``i``
lives at grid row ``i // grid_w`` and grid column ``i % grid_w``.  Within a
patch, pixels are flattened in (row, column, channel) order.

All array functions work on both numpy arrays and torch tensors with any
number of leading batch dimensions, since they only use ``reshape`` and
``swapaxes``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GeometryError, ValidationError


@dataclass(frozen=True)
class PatchGeometry:
    patch_size: int
    height: int
    width: int

    def __post_init__(self):
        if self.patch_size < 1:
            raise GeometryError(f"patch_size must be >= 1, got {self.patch_size}")
        if self.height < 1 or self.width < 1:
            raise GeometryError(f"image size must be positive, got {self.height}x{self.width}")
        if self.height % self.patch_size or self.width % self.patch_size:
            raise GeometryError(
                f"patch size {self.patch_size} does not divide image size "
                f"{self.height}x{self.width}"
            )

    @classmethod
    def square(cls, side: int, patch_size: int) -> "PatchGeometry":
        return cls(patch_size=patch_size, height=side, width=side)

    @property
    def grid_h(self) -> int:
        return self.height // self.patch_size

    @property
    def grid_w(self) -> int:
        return self.width // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.grid_h * self.grid_w

    def patch_dim(self, channels: int) -> int:
        return self.patch_size * self.patch_size * channels

    def block(self, index: int) -> tuple[slice, slice]:
        """Pixel (row, column) slices covered by patch ``index``."""
        if not 0 <= index < self.num_patches:
            raise ValidationError(f"patch index {index} out of range [0, {self.num_patches})")
        p = self.patch_size
        r, c = divmod(int(index), self.grid_w)
        return slice(r * p, (r + 1) * p), slice(c * p, (c + 1) * p)


def _check_image_shape(shape, geom: PatchGeometry):
    if len(shape) < 3 or tuple(shape[-3:-1]) != (geom.height, geom.width):
        raise GeometryError(
            f"image of shape {tuple(shape)} does not match geometry "
            f"{geom.height}x{geom.width} (expected (..., H, W, C))"
        )


def patchify(img, geom: PatchGeometry):
    """(..., H, W, C) -> (..., N, P*P*C)."""
    _check_image_shape(img.shape, geom)
    lead = tuple(img.shape[:-3])
    c = img.shape[-1]
    p = geom.patch_size
    x = img.reshape(*lead, geom.grid_h, p, geom.grid_w, p, c)
    x = x.swapaxes(-4, -3)  # (..., gh, gw, p, p, c)
    return x.reshape(*lead, geom.num_patches, p * p * c)


def unpatchify(patches, geom: PatchGeometry, channels: int | None = None):
    """(..., N, P*P*C) -> (..., H, W, C); exact inverse of :func:`patchify`."""
    if patches.ndim < 2 or patches.shape[-2] != geom.num_patches:
        raise GeometryError(
            f"expected {geom.num_patches} patches, got array of shape {tuple(patches.shape)}"
        )
    p = geom.patch_size
    length = patches.shape[-1]
    if channels is None:
        if length % (p * p):
            raise GeometryError(f"patch length {length} is not a multiple of P*P={p * p}")
        channels = length // (p * p)
    if length != p * p * channels:
        raise GeometryError(f"patch length {length} != P*P*C = {p * p * channels}")
    lead = tuple(patches.shape[:-2])
    x = patches.reshape(*lead, geom.grid_h, geom.grid_w, p, p, channels)
    x = x.swapaxes(-4, -3)
    return x.reshape(*lead, geom.height, geom.width, channels)


def check_indices(indices, num_patches: int) -> np.ndarray:
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= num_patches):
        raise ValidationError(f"patch indices must lie in [0, {num_patches}), got {idx.tolist()}")
    if np.unique(idx).size != idx.size:
        raise ValidationError("patch indices must be distinct")
    return idx


def mask_from_indices(keep, geom: PatchGeometry) -> np.ndarray:
    """H x W uint8 mask: 1 on the blocks of ``keep`` (visible), 0 elsewhere."""
    idx = check_indices(keep, geom.num_patches)
    grid = np.zeros(geom.num_patches, dtype=np.uint8)
    grid[idx] = 1
    grid = grid.reshape(geom.grid_h, geom.grid_w)
    p = geom.patch_size
    return np.repeat(np.repeat(grid, p, axis=0), p, axis=1)


def apply_mask(img, mask):
    """Elementwise ``img * mask`` broadcast over channels; masked pixels become 0."""
    if tuple(img.shape[-3:-1]) != tuple(mask.shape[-2:]):
        raise GeometryError(
            f"mask of shape {tuple(mask.shape)} does not match image of shape {tuple(img.shape)}"
        )
    if isinstance(img, np.ndarray):
        return img * np.asarray(mask, dtype=img.dtype)[..., None]
    return img * mask.to(img.dtype)[..., None]
