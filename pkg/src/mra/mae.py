"""Masked autoencoder: encoder over visible patches, decoder with mask tokens."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from decimal import ROUND_HALF_UP, Decimal

import numpy as np
import torch
import torch.nn as nn

from .errors import ConfigError, GeometryError, ValidationError
from .layers import (AttentionRecord, Block, check_finite, init_weights, mse_loss, optimizer_step,
                     sincos_pos_embed)
from .patches import PatchGeometry, patchify, unpatchify


@dataclass(frozen=True)
class MaeConfig:
    encoder_layers: int = 4
    decoder_layers: int = 2
    embed_dim: int = 128
    decoder_embed_dim: int = 64
    num_heads: int = 4
    decoder_num_heads: int = 4
    mlp_ratio: float = 4.0
    patch_size: int = 4
    image_size: int = 32
    in_chans: int = 3
    mask_ratio: float = 0.40
    loss_on: str = "masked"  # "masked" patches only, or "all" pixels

    def __post_init__(self):
        for name in ("encoder_layers", "decoder_layers", "embed_dim", "decoder_embed_dim",
                     "num_heads", "decoder_num_heads", "patch_size", "image_size", "in_chans"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not 0.0 <= self.mask_ratio < 1.0:
            raise ConfigError(f"mask_ratio must lie in [0, 1), got {self.mask_ratio}")
        if self.embed_dim % self.num_heads or self.decoder_embed_dim % self.decoder_num_heads:
            raise ConfigError("embedding dims must be divisible by their head counts")
        if self.embed_dim % 4 or self.decoder_embed_dim % 4:
            raise ConfigError("embedding dims must be divisible by 4 (sin-cos positions)")
        if self.loss_on not in ("masked", "all"):
            raise ConfigError(f"loss_on must be 'masked' or 'all', got {self.loss_on!r}")
        try:
            self.geometry
        except GeometryError as e:
            raise ConfigError(str(e)) from None

    @property
    def geometry(self) -> PatchGeometry:
        return PatchGeometry.square(self.image_size, self.patch_size)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MaeConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown MaeConfig keys: {sorted(unknown)}")
        return cls(**d)


# Layer counts follow the reference MAE-Mini/Base/Large models; widths shrink for 32x32 inputs.
PRESETS = {
    "mae-mini-desk": MaeConfig(),
    "mae-base-desk": MaeConfig(encoder_layers=12, decoder_layers=8, embed_dim=192,
                               decoder_embed_dim=128, num_heads=4, decoder_num_heads=4,
                               mask_ratio=0.75),
    "mae-large-desk": MaeConfig(encoder_layers=12, decoder_layers=8, embed_dim=256,
                                decoder_embed_dim=128, num_heads=8, decoder_num_heads=4,
                                mask_ratio=0.75),
    "mae-mini": MaeConfig(embed_dim=480, decoder_embed_dim=480, num_heads=12,
                          decoder_num_heads=12, patch_size=16, image_size=224),
    "mae-tiny-test": MaeConfig(encoder_layers=2, decoder_layers=1, embed_dim=32,
                               decoder_embed_dim=16, num_heads=2, decoder_num_heads=2),
}


def preset(name: str, **overrides) -> MaeConfig:
    try:
        base = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown model preset {name!r}; known: {sorted(PRESETS)}") from None
    return replace(base, **overrides)


def masked_count(num_patches: int, ratio: float) -> int:
    """round(ratio * N), halves away from zero; the ratio is read as its decimal literal."""
    if not 0.0 <= ratio < 1.0:
        raise ValidationError(f"mask ratio must lie in [0, 1), got {ratio}")
    exact = Decimal(repr(float(ratio))) * num_patches
    return int(exact.quantize(Decimal(1), rounding=ROUND_HALF_UP))


def visible_count(num_patches: int, ratio: float) -> int:
    return num_patches - masked_count(num_patches, ratio)


def sample_random_mask(num_patches: int, ratio: float, rng) -> np.ndarray:
    """Sorted indices of the patches left visible; uniform without replacement."""
    rng = np.random.default_rng(rng)
    keep = visible_count(num_patches, ratio)
    return np.sort(rng.permutation(num_patches)[:keep])


class MaskedAutoencoder(nn.Module):
    def __init__(self, config: MaeConfig):
        super().__init__()
        self.config = config
        geom = config.geometry
        n = geom.num_patches
        patch_dim = geom.patch_dim(config.in_chans)
        d, dd = config.embed_dim, config.decoder_embed_dim

        self.patch_embed = nn.Linear(patch_dim, d)
        self.cls_token = nn.Parameter(torch.zeros(1, 1, d))
        # class slot sits at position 0 with a zero embedding
        pos = np.concatenate([np.zeros((1, d)), sincos_pos_embed(d, geom.grid_h, geom.grid_w)])
        self.register_buffer("pos_embed", torch.tensor(pos, dtype=torch.float32)[None])
        self.blocks = nn.ModuleList(
            Block(d, config.num_heads, config.mlp_ratio, name=f"encoder.{i}")
            for i in range(config.encoder_layers))
        self.norm = nn.LayerNorm(d, eps=1e-6)

        self.decoder_embed = nn.Linear(d, dd)
        self.mask_token = nn.Parameter(torch.zeros(1, 1, dd))
        self.register_buffer("decoder_pos_embed", torch.tensor(
            sincos_pos_embed(dd, geom.grid_h, geom.grid_w), dtype=torch.float32)[None])
        self.decoder_blocks = nn.ModuleList(
            Block(dd, config.decoder_num_heads, config.mlp_ratio, name=f"decoder.{i}")
            for i in range(config.decoder_layers))
        self.decoder_norm = nn.LayerNorm(dd, eps=1e-6)
        self.decoder_pred = nn.Linear(dd, patch_dim)

        init_weights(self)
        nn.init.normal_(self.cls_token, std=0.02)
        nn.init.normal_(self.mask_token, std=0.02)
        assert self.pos_embed.shape[1] == n + 1

    @property
    def geometry(self) -> PatchGeometry:
        return self.config.geometry

    def _keep_tensor(self, keep, batch: int) -> torch.Tensor:
        keep = torch.as_tensor(np.asarray(keep), dtype=torch.long)
        if keep.ndim == 1:
            keep = keep.expand(batch, -1)
        n = self.geometry.num_patches
        if keep.ndim != 2 or keep.shape[0] != batch:
            raise ValidationError(f"keep indices of shape {tuple(keep.shape)} do not match batch {batch}")
        if keep.shape[1] == 0:
            raise ValidationError("at least one visible patch is required")
        if keep.shape[1] > n or keep.min() < 0 or keep.max() >= n:
            raise ValidationError(f"keep indices out of range [0, {n})")
        return keep

    def encode_visible(self, images: torch.Tensor, keep, record: bool = False):
        """Encode the kept patches of (B, H, W, C) images.

        Returns latents of shape (B, K + 1, D) (class token first) and, when
        ``record`` is set, the last block's :class:`AttentionRecord`.
        """
        patches = patchify(images, self.geometry)
        B = patches.shape[0]
        keep = self._keep_tensor(keep, B)
        x = self.patch_embed(patches) + self.pos_embed[:, 1:]
        x = torch.gather(x, 1, keep[..., None].expand(-1, -1, x.shape[-1]))
        cls = (self.cls_token + self.pos_embed[:, :1]).expand(B, -1, -1)
        x = torch.cat([cls, x], dim=1)
        rec = None
        last = len(self.blocks) - 1
        for i, blk in enumerate(self.blocks):
            x, r = blk(x, record=record and i == last)
            if r is not None:
                rec = AttentionRecord(q=r.q, k=r.k, block_index=i)
        return self.norm(x), rec

    def decode_patches(self, latents: torch.Tensor, keep) -> torch.Tensor:
        """Raw (unclamped) per-patch pixel predictions, shape (B, N, P*P*C)."""
        B = latents.shape[0]
        keep = self._keep_tensor(keep, B)
        if latents.shape[1] != keep.shape[1] + 1:
            raise ValidationError(
                f"latent length {latents.shape[1]} does not match {keep.shape[1]} kept patches + class token")
        tokens = self.decoder_embed(latents[:, 1:])
        n = self.geometry.num_patches
        full = self.mask_token.expand(B, n, -1)
        full = full.scatter(1, keep[..., None].expand(-1, -1, tokens.shape[-1]), tokens)
        x = full + self.decoder_pos_embed
        for blk in self.decoder_blocks:
            x, _ = blk(x)
        return self.decoder_pred(self.decoder_norm(x))

    def decode_full(self, latents: torch.Tensor, keep) -> torch.Tensor:
        """Reconstructed (B, H, W, C) images clamped to [0, 1]."""
        pred = self.decode_patches(latents, keep)
        return unpatchify(pred, self.geometry, self.config.in_chans).clamp(0.0, 1.0)

    def reconstruction_loss(self, images: torch.Tensor, keep) -> torch.Tensor:
        latents, _ = self.encode_visible(images, keep)
        pred = self.decode_patches(latents, keep)
        target = patchify(images, self.geometry)
        if self.config.loss_on == "all":
            return mse_loss(pred, target)
        keep_t = self._keep_tensor(keep, images.shape[0])
        masked = torch.ones(pred.shape[:2], dtype=pred.dtype)
        masked = masked.scatter(1, keep_t, 0.0)
        if masked.sum() == 0:  # nothing hidden: fall back to the whole image
            return mse_loss(pred, target)
        return mse_loss(pred, target, masked[..., None])


def batch_random_masks(batch: int, num_patches: int, ratio: float, rng) -> np.ndarray:
    """One independent random keep-set per image, shape (B, K)."""
    rng = np.random.default_rng(rng)
    return np.stack([sample_random_mask(num_patches, ratio, rng) for _ in range(batch)]) \
        if batch else np.zeros((0, visible_count(num_patches, ratio)), dtype=np.int64)


def pretrain_step(model: MaskedAutoencoder, images: torch.Tensor, optimizer, rng,
                  lr: float | None = None) -> float:
    """One optimizer step on a fresh random mask per image; returns the loss."""
    if images.shape[0] == 0:
        raise ValidationError("empty batch")
    model.train()
    keep = batch_random_masks(images.shape[0], model.geometry.num_patches,
                              model.config.mask_ratio, rng)
    optimizer.zero_grad(set_to_none=True)
    loss = model.reconstruction_loss(images, keep)
    check_finite(loss.detach(), "reconstruction loss")
    loss.backward()
    optimizer_step(optimizer, lr)
    return float(loss.item())
