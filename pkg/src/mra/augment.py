"""Frozen mask-and-reconstruct augmentation.

Every call is a two-pass procedure: a full-visibility encoder pass yields
class-token scores for all patches, the masking policy picks the visible
set, and a second pass encodes only those patches and decodes a full image.
A decoder trained with a masked-patch loss never learns to reproduce the
visible patches, so by default those are copied from the input.

Per-sample randomness comes from ``np.random.default_rng([seed, index])``
where ``index`` identifies the sample (e.g. its dataset position), so results
do not depend on batch order or composition.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
import torch

from .attention import MaskingPolicy, class_token_scores, select_visible
from .errors import ValidationError
from .mae import MaskedAutoencoder
from .patches import apply_mask, mask_from_indices
from .validation import check_fraction, check_image, check_image_batch


def parameter_hash(model: torch.nn.Module) -> str:
    """sha256 over every parameter and buffer, in state-dict order."""
    h = hashlib.sha256()
    for name, t in model.state_dict().items():
        h.update(name.encode())
        h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


@dataclass(frozen=True)
class AugmentorHandle:
    model: MaskedAutoencoder
    policy: MaskingPolicy = field(default_factory=MaskingPolicy)
    apply_probability: float = 1.0
    scaled_scores: bool = False
    head_aggregate: str = "mean"
    # None: paste kept pixels back when the decoder was only trained on masked patches
    paste_visible: bool | None = None

    def __post_init__(self):
        check_fraction(self.apply_probability, "apply_probability")
        if self.paste_visible is None:
            object.__setattr__(self, "paste_visible", self.model.config.loss_on == "masked")
        self.model.eval()
        self.model.requires_grad_(False)

    @property
    def config(self):
        return self.model.config

    @property
    def geometry(self):
        return self.model.geometry

    def parameter_hash(self) -> str:
        return parameter_hash(self.model)


def sample_generators(seed: int, indices) -> list[np.random.Generator]:
    return [np.random.default_rng([int(seed), int(i)]) for i in indices]


def _scores(handle: AugmentorHandle, x: torch.Tensor) -> np.ndarray:
    n = handle.geometry.num_patches
    all_idx = np.arange(n)
    _, rec = handle.model.encode_visible(x, all_idx, record=True)
    return class_token_scores(rec, scaled=handle.scaled_scores,
                              aggregate=handle.head_aggregate).numpy()


@torch.no_grad()
def _run(batch: np.ndarray, handle: AugmentorHandle, gens, outputs=("reconstructed",)):
    """Core batched path.  Returns a dict of output arrays plus the keep sets."""
    cfg = handle.config
    batch = check_image_batch(batch, handle.geometry, cfg.in_chans, allow_empty=True)
    n = handle.geometry.num_patches
    handle.policy.budget(n)
    apply = np.array([g.random() < handle.apply_probability for g in gens], dtype=bool)
    result = {name: batch.copy() for name in outputs}
    keep_all = [np.arange(n) for _ in range(len(batch))]
    sel = np.flatnonzero(apply)
    if sel.size == 0:
        result["keep"] = keep_all
        return result
    x = torch.from_numpy(batch[sel])
    if handle.policy.strategy == "random":
        scores = np.zeros((sel.size, n))
    else:
        scores = _scores(handle, x)
    keep = np.stack([select_visible(scores[j], handle.policy, gens[i])
                     for j, i in enumerate(sel)])
    for j, i in enumerate(sel):
        keep_all[i] = keep[j]
    result["keep"] = keep_all
    masks = np.stack([mask_from_indices(kk, handle.geometry) for kk in keep])
    masked = apply_mask(batch[sel], masks)
    if "masked" in outputs:
        result["masked"][sel] = masked
    if "reconstructed" in outputs:
        latents, _ = handle.model.encode_visible(x, keep)
        recon = handle.model.decode_full(latents, keep).numpy()
        if handle.paste_visible:
            recon = masked + apply_mask(recon, 1 - masks)
        result["reconstructed"][sel] = recon
    return result


def augment_batch(batch, handle: AugmentorHandle, seed: int = 0, indices=None) -> np.ndarray:
    """Mask-and-reconstruct every image of a (B, H, W, C) batch."""
    batch = np.asarray(batch)
    indices = np.arange(len(batch)) if indices is None else np.asarray(indices)
    if len(indices) != len(batch):
        raise ValidationError(f"{len(indices)} sample indices for a batch of {len(batch)}")
    return _run(batch, handle, sample_generators(seed, indices))["reconstructed"]


def _single(img, rng, index):
    if isinstance(rng, np.random.Generator):
        return [rng]
    return sample_generators(0 if rng is None else rng, [index])


def augment(img, handle: AugmentorHandle, rng=None, index: int = 0) -> np.ndarray:
    """Augmented copy of one (H, W, C) image.

    ``rng`` is a seed (combined with ``index``) or a ``np.random.Generator``.
    """
    img = check_image(img, handle.geometry, handle.config.in_chans)
    return _run(img[None], handle, _single(img, rng, index))["reconstructed"][0]


def mask_only(img, handle: AugmentorHandle, rng=None, index: int = 0) -> np.ndarray:
    """Attention-selected masking without reconstruction (``M* * x``)."""
    img = check_image(img, handle.geometry, handle.config.in_chans)
    return _run(img[None], handle, _single(img, rng, index), outputs=("masked",))["masked"][0]


def mask_only_batch(batch, handle: AugmentorHandle, seed: int = 0, indices=None) -> np.ndarray:
    batch = np.asarray(batch)
    indices = np.arange(len(batch)) if indices is None else np.asarray(indices)
    return _run(batch, handle, sample_generators(seed, indices), outputs=("masked",))["masked"]


def triplets(batch, handle: AugmentorHandle, seed: int = 0, indices=None):
    """(original, masked, reconstructed) arrays sharing one visible set per image."""
    batch = np.asarray(batch)
    indices = np.arange(len(batch)) if indices is None else np.asarray(indices)
    out = _run(batch, handle, sample_generators(seed, indices), outputs=("masked", "reconstructed"))
    original = check_image_batch(batch, handle.geometry, allow_empty=True)
    return original, out["masked"], out["reconstructed"]
