"""Dataset ingestion: CIFAR-10 binary batches, image folders and synthetic sets.

Every loader returns images as float32 (B, H, W, C) arrays scaled to [0, 1]
and integer class ids.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, CorruptDataError, EmptyDatasetError

CIFAR_RECORD = 1 + 3 * 32 * 32
CIFAR_TRAIN_FILES = [f"data_batch_{i}.bin" for i in range(1, 6)]
CIFAR_EVAL_FILES = ["test_batch.bin"]
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".gif", ".tif", ".tiff"}


@dataclass
class Dataset:
    name: str
    train_x: np.ndarray
    train_y: np.ndarray
    eval_x: np.ndarray
    eval_y: np.ndarray
    num_classes: int

    def __repr__(self):
        return (f"Dataset({self.name!r}, train={self.train_x.shape}, eval={self.eval_x.shape}, "
                f"classes={self.num_classes})")


def data_root() -> Path:
    return Path(os.environ.get("MRA_DATA_DIR", "data"))


# ---------------------------------------------------------------- CIFAR-10

def read_cifar_binary(path) -> tuple[np.ndarray, np.ndarray]:
    raw = Path(path).read_bytes()
    full, rest = divmod(len(raw), CIFAR_RECORD)
    if rest:
        raise CorruptDataError(
            f"{path}: truncated record at byte offset {full * CIFAR_RECORD} "
            f"({rest} of {CIFAR_RECORD} bytes)")
    rec = np.frombuffer(raw, dtype=np.uint8).reshape(full, CIFAR_RECORD)
    labels = rec[:, 0].astype(np.int64)
    if full and labels.max() > 9:
        bad = int(np.argmax(labels > 9))
        raise CorruptDataError(f"{path}: label {labels[bad]} > 9 at byte offset {bad * CIFAR_RECORD}")
    images = rec[:, 1:].reshape(full, 3, 32, 32).transpose(0, 2, 3, 1)
    return images.astype(np.float32) / np.float32(255), labels


def load_cifar10(directory) -> Dataset:
    directory = Path(directory)
    parts = {}
    for split, names in (("train", CIFAR_TRAIN_FILES), ("eval", CIFAR_EVAL_FILES)):
        missing = [n for n in names if not (directory / n).is_file()]
        if missing:
            raise FileNotFoundError(f"CIFAR-10 files missing under {directory}: {missing}")
        xs, ys = zip(*(read_cifar_binary(directory / n) for n in names))
        parts[split] = (np.concatenate(xs), np.concatenate(ys))
    return Dataset("cifar10", *parts["train"], *parts["eval"], num_classes=10)


# ---------------------------------------------------------------- folders

def _read_image(path: Path, size: int) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        im = im.convert("RGB")
        if im.size != (size, size):
            im = im.resize((size, size), Image.BILINEAR)
        return np.asarray(im, dtype=np.float32) / np.float32(255)


def _scan_classes(root: Path, classes: list[str] | None = None):
    if classes is None:
        classes = sorted(d.name for d in root.iterdir() if d.is_dir())
    files, labels = [], []
    for label, name in enumerate(classes):
        d = root / name
        if not d.is_dir():
            continue
        for f in sorted(d.iterdir()):
            if f.suffix.lower() in IMAGE_SUFFIXES:
                files.append(f)
                labels.append(label)
    return classes, files, np.asarray(labels, dtype=np.int64)


def load_image_folder(root, image_size: int = 32, eval_fraction: float = 0.2, seed: int = 0) -> Dataset:
    """Class-per-subdirectory images.  ``train/`` and ``test/`` (or ``val/``) splits are honoured."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"image folder {root} does not exist")
    split_dirs = {d.name: d for d in root.iterdir() if d.is_dir()}
    eval_name = next((n for n in ("test", "val", "eval") if n in split_dirs), None)
    if "train" in split_dirs and eval_name:
        classes, tr_files, tr_y = _scan_classes(split_dirs["train"])
        _, ev_files, ev_y = _scan_classes(split_dirs[eval_name], classes)
    else:
        classes, files, y = _scan_classes(root)
        order = np.random.default_rng(seed).permutation(len(files))
        n_eval = int(round(eval_fraction * len(files)))
        ev_idx, tr_idx = np.sort(order[:n_eval]), np.sort(order[n_eval:])
        tr_files, tr_y = [files[i] for i in tr_idx], y[tr_idx]
        ev_files, ev_y = [files[i] for i in ev_idx], y[ev_idx]
    if not tr_files:
        raise EmptyDatasetError(f"no images found under {root}")

    def stack(fs):
        if not fs:
            return np.zeros((0, image_size, image_size, 3), dtype=np.float32)
        return np.stack([_read_image(f, image_size) for f in fs])

    return Dataset(f"folder:{root}", stack(tr_files), tr_y, stack(ev_files), ev_y,
                   num_classes=len(classes))


# ---------------------------------------------------------------- synthetic

def _coords(side: int):
    u = (np.arange(side, dtype=np.float32) + 0.5) / side - 0.5
    return np.meshgrid(u, u, indexing="ij")  # rows, cols in [-0.5, 0.5]


def make_gradients(n: int, rng, side: int = 32):
    """Smooth per-channel linear colour ramps; label = dominant ramp direction (4 classes)."""
    rows, cols = _coords(side)
    offset = rng.uniform(0.25, 0.75, size=(n, 1, 1, 3))
    slope = rng.uniform(-0.5, 0.5, size=(n, 2, 1, 1, 3))
    x = offset + slope[:, 0] * rows[None, :, :, None] + slope[:, 1] * cols[None, :, :, None]
    mean_slope = slope.mean(axis=-1)[:, :, 0, 0]
    axis = np.abs(mean_slope).argmax(axis=1)
    sign = mean_slope[np.arange(n), axis] > 0
    y = (2 * axis + sign).astype(np.int64)
    return np.clip(x, 0, 1).astype(np.float32), y


def _blob(rows, cols, cy, cx, radius):
    d2 = (rows[None] - cy[:, None, None]) ** 2 + (cols[None] - cx[:, None, None]) ** 2
    return np.exp(-d2 / (2 * radius[:, None, None] ** 2))


def make_two_blobs(n: int, rng, side: int = 32):
    """Bright blob in the top (class 0) or bottom (class 1) half over faint noise.

    Top/bottom rather than left/right so labels survive horizontal flips.
    """
    rows, cols = _coords(side)
    y = rng.permutation(np.arange(n) % 2)
    cy = np.where(y == 0, -0.25, 0.25) + rng.uniform(-0.08, 0.08, n)
    cx = rng.uniform(-0.25, 0.25, n)
    blob = _blob(rows, cols, cy, cx, rng.uniform(0.08, 0.12, n))
    color = rng.uniform(0.6, 1.0, size=(n, 1, 1, 3))
    x = 0.1 + 0.05 * rng.random((n, side, side, 3)) + blob[..., None] * color
    return np.clip(x, 0, 1).astype(np.float32), y.astype(np.int64)


_PALETTE = np.array([
    [1.0, 0.1, 0.1], [0.1, 1.0, 0.1], [0.1, 0.1, 1.0], [1.0, 1.0, 0.1], [1.0, 0.1, 1.0],
    [0.1, 1.0, 1.0], [1.0, 0.55, 0.1], [0.55, 0.1, 1.0], [0.95, 0.95, 0.95], [0.1, 0.55, 0.55],
], dtype=np.float32)


def make_blobs10(n: int, rng, side: int = 32):
    """Ten colour classes: one coloured blob near the centre on a noisy textured background."""
    rows, cols = _coords(side)
    y = rng.permutation(np.arange(n) % 10)
    cy, cx = rng.uniform(-0.15, 0.15, n), rng.uniform(-0.15, 0.15, n)
    blob = _blob(rows, cols, cy, cx, rng.uniform(0.08, 0.14, n))[..., None]
    bg = rng.uniform(0.2, 0.5, size=(n, 1, 1, 3)) + 0.15 * rng.random((n, side, side, 3))
    x = (1 - blob) * bg + blob * _PALETTE[y][:, None, None, :]
    return np.clip(x, 0, 1).astype(np.float32), y.astype(np.int64)


SYNTHETIC = {
    "gradients": (make_gradients, 4, 5000, 500),
    "two-blobs": (make_two_blobs, 2, 2000, 1000),
    "blobs10": (make_blobs10, 10, 5000, 10000),
}


def make_synthetic(name: str, n_train: int | None = None, n_eval: int | None = None,
                   seed: int = 0, side: int = 32) -> Dataset:
    try:
        fn, classes, default_train, default_eval = SYNTHETIC[name]
    except KeyError:
        raise ConfigError(f"unknown synthetic dataset {name!r}; known: {sorted(SYNTHETIC)}") from None
    n_train = default_train if n_train is None else n_train
    n_eval = default_eval if n_eval is None else n_eval
    tx, ty = fn(n_train, np.random.default_rng([seed, 0]), side)
    ex, ey = fn(n_eval, np.random.default_rng([seed, 1]), side)
    return Dataset(f"synthetic:{name}", tx, ty, ex, ey, classes)


def load_dataset(source: str, image_size: int = 32, n_train: int | None = None,
                 n_eval: int | None = None, seed: int = 0) -> Dataset:
    """Resolve ``source`` into train/eval splits.

    ``source`` is ``synthetic:<name>``, ``cifar10`` (under ``$MRA_DATA_DIR``),
    ``cifar10:<dir>``, ``folder:<dir>`` or a bare directory path.
    Real datasets are truncated to the first ``n_train``/``n_eval`` samples.
    """
    if source.startswith("synthetic:"):
        return make_synthetic(source.split(":", 1)[1], n_train, n_eval, seed, image_size)
    if source == "cifar10":
        ds = load_cifar10(data_root() / "cifar-10-batches-bin")
    elif source.startswith("cifar10:"):
        ds = load_cifar10(source.split(":", 1)[1])
    elif source.startswith("folder:"):
        ds = load_image_folder(source.split(":", 1)[1], image_size, seed=seed)
    else:
        path = Path(source)
        if not path.is_absolute() and not path.exists():
            path = data_root() / source
        if not path.is_dir():
            raise FileNotFoundError(f"dataset {source!r} not found")
        if any(path.glob("*.bin")):
            ds = load_cifar10(path)
        else:
            ds = load_image_folder(path, image_size, seed=seed)
    if ds.train_x.shape[1] != image_size:
        raise ConfigError(f"dataset images are {ds.train_x.shape[1]}px, config expects {image_size}px")
    if n_train is not None:
        ds.train_x, ds.train_y = ds.train_x[:n_train], ds.train_y[:n_train]
    if n_eval is not None:
        ds.eval_x, ds.eval_y = ds.eval_x[:n_eval], ds.eval_y[:n_eval]
    return ds
