"""scikit-learn compatible wrappers around the training and augmentation core.

>>> aug = MaskReconstructAugmenter(max_steps=50).fit(X_unlabelled)
>>> X_aug = aug.transform(X)
>>> clf = ResidualCNNClassifier(epochs=5, augmentor=aug).fit(X, y)
"""
from __future__ import annotations

import tempfile

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .attention import MaskingPolicy
from .augment import AugmentorHandle, augment_batch, mask_only_batch
from .baselines import cutout
from .config import RunConfig
from .data import Dataset
from .errors import ValidationError
from .training import load_mae, predict, run_classification, run_pretraining
from .validation import check_image_batch, check_labels


def _as_dataset(X, y=None, name="array") -> Dataset:
    y = np.zeros(len(X), dtype=np.int64) if y is None else y
    empty_x = np.zeros((0,) + X.shape[1:], dtype=np.float32)
    return Dataset(name, X, y, empty_x, np.zeros(0, dtype=np.int64),
                   num_classes=max(2, int(y.max()) + 1 if len(y) else 2))


class MaskReconstructAugmenter(TransformerMixin, BaseEstimator):
    """Pretrain a masked autoencoder in ``fit``; mask-and-reconstruct in ``transform``.

    ``transform`` never touches the fitted weights. Pass ``indices`` to tie
    the randomness to sample identity rather than batch position.
    """

    def __init__(self, model_preset="mae-mini-desk", mask_ratio=0.4, strategy="mask_low",
                 aug_mask_ratio=0.4, apply_probability=1.0, reconstruct=True, epochs=200,
                 max_steps=None, batch_size=64, lr=None, random_state=0):
        self.model_preset = model_preset
        self.mask_ratio = mask_ratio
        self.strategy = strategy
        self.aug_mask_ratio = aug_mask_ratio
        self.apply_probability = apply_probability
        self.reconstruct = reconstruct
        self.epochs = epochs
        self.max_steps = max_steps
        self.batch_size = batch_size
        self.lr = lr
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_image_batch(X)
        with tempfile.TemporaryDirectory() as tmp:
            cfg = RunConfig(task="pretrain", model_preset=self.model_preset,
                            mask_ratio=self.mask_ratio, image_size=X.shape[1], epochs=self.epochs,
                            max_steps=self.max_steps, batch_size=self.batch_size, lr=self.lr,
                            seed=self.random_state, out_dir=tmp)
            result = run_pretraining(cfg, data=_as_dataset(X))
        self.model_ = result.model
        self.loss_curve_ = list(result.step_losses)
        self._make_handle()
        return self

    @classmethod
    def from_checkpoint(cls, path, **params) -> "MaskReconstructAugmenter":
        est = cls(**params)
        est.model_ = load_mae(path)
        est.loss_curve_ = []
        est._make_handle()
        return est

    def _make_handle(self):
        self.handle_ = AugmentorHandle(self.model_, MaskingPolicy(self.strategy, self.aug_mask_ratio),
                                       self.apply_probability)

    def transform(self, X, indices=None):
        check_is_fitted(self, "handle_")
        handle = self.handle_
        if (handle.policy.strategy, handle.policy.mask_ratio, handle.apply_probability) != \
                (self.strategy, self.aug_mask_ratio, self.apply_probability):
            self._make_handle()  # params were changed through set_params
            handle = self.handle_
        X = check_image_batch(X, handle.geometry, handle.config.in_chans, allow_empty=True)
        fn = augment_batch if self.reconstruct else mask_only_batch
        return fn(X, handle, seed=self.random_state, indices=indices)


class CutoutTransformer(TransformerMixin, BaseEstimator):
    """Stateless Cutout over a (B, H, W, C) batch."""

    def __init__(self, hole_size=16, random_state=0):
        self.hole_size = hole_size
        self.random_state = random_state

    def fit(self, X, y=None):
        check_image_batch(X, allow_empty=True)
        return self

    def transform(self, X, indices=None):
        X = check_image_batch(X, allow_empty=True)
        indices = np.arange(len(X)) if indices is None else indices
        return np.stack([cutout(x, self.hole_size, np.random.default_rng([self.random_state, int(i)]))
                         for x, i in zip(X, indices)]) if len(X) else X


class ResidualCNNClassifier(ClassifierMixin, BaseEstimator):
    """The downstream residual CNN with an optional registry augmentor.

    ``augmentor`` is a registry name (``"none"``, ``"cutout"``, ``"mixup"``,
    ``"cutmix"``) or a fitted :class:`MaskReconstructAugmenter` whose handle
    is used for the ``mra_variant`` arm.
    """

    def __init__(self, width=32, epochs=10, batch_size=64, lr=0.05, weight_decay=5e-4,
                 augmentor="none", mra_variant="mra", random_state=0):
        self.width = width
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.weight_decay = weight_decay
        self.augmentor = augmentor
        self.mra_variant = mra_variant
        self.random_state = random_state

    def fit(self, X, y):
        X = check_image_batch(X)
        y = np.asarray(y)
        if y.shape != (len(X),):
            raise ValidationError(f"expected {len(X)} labels, got shape {y.shape}")
        self.classes_, y_enc = np.unique(y, return_inverse=True)
        y_enc = check_labels(y_enc.astype(np.int64), len(X))
        if len(self.classes_) < 2:
            raise ValidationError("need at least two classes")
        handle, name = None, self.augmentor
        if isinstance(self.augmentor, MaskReconstructAugmenter):
            check_is_fitted(self.augmentor, "handle_")
            handle, name = self.augmentor.handle_, self.mra_variant
        data = _as_dataset(X, y_enc)
        data.num_classes = len(self.classes_)
        with tempfile.TemporaryDirectory() as tmp:
            cfg = RunConfig(task="classify", augmentor=name, image_size=X.shape[1],
                            classifier_width=self.width, epochs=self.epochs,
                            batch_size=self.batch_size, lr=self.lr, weight_decay=self.weight_decay,
                            seed=self.random_state, out_dir=tmp, hole_sizes=[])
            record = run_classification(cfg, data=data, handle=handle)
        self.model_ = record.model
        self.history_ = record.rows
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_image_batch(X, allow_empty=True)
        return self.classes_[predict(self.model_, X)]
