"""Mask-reconstruct augmentation: a frozen masked autoencoder as a data augmentor."""
from .attention import MaskingPolicy, class_token_scores, select_visible, top_rank
from .augment import AugmentorHandle, augment, augment_batch, mask_only
from .baselines import MixedLabel, cutmix, cutout, mixup
from .config import RunConfig
from .errors import (ConfigError, CorruptCheckpointError, CorruptDataError, GeometryError, MRAError,
                     NumericError, SchemaError, StateError, ValidationError)
from .estimators import CutoutTransformer, MaskReconstructAugmenter, ResidualCNNClassifier
from .mae import MaeConfig, MaskedAutoencoder, preset, sample_random_mask
from .patches import PatchGeometry, apply_mask, mask_from_indices, patchify, unpatchify

__version__ = "0.1.0"
