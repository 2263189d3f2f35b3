"""PNG output: augmentation grids and metric curves."""
from __future__ import annotations

import io

import numpy as np


def image_grid(rows: list[list[np.ndarray]], pad: int = 2, scale: int = 1) -> np.ndarray:
    """Tile equally sized (H, W, C) images into one uint8 RGB array, white separators."""
    if not rows or not rows[0]:
        raise ValueError("empty grid")
    h, w = rows[0][0].shape[:2]
    n_rows, n_cols = len(rows), len(rows[0])
    hs, ws = h * scale, w * scale
    grid = np.full((pad + n_rows * (hs + pad), pad + n_cols * (ws + pad), 3), 255, dtype=np.uint8)
    for r, row in enumerate(rows):
        for c, img in enumerate(row):
            img = np.asarray(img, dtype=np.float32)
            if img.shape[-1] == 1:
                img = np.repeat(img, 3, axis=-1)
            tile = np.round(np.clip(img, 0, 1) * 255).astype(np.uint8)
            tile = np.repeat(np.repeat(tile, scale, axis=0), scale, axis=1)
            y, x = pad + r * (hs + pad), pad + c * (ws + pad)
            grid[y:y + hs, x:x + ws] = tile
    return grid


def png_bytes(array: np.ndarray) -> bytes:
    from PIL import Image

    buf = io.BytesIO()
    Image.fromarray(array).save(buf, format="PNG")
    return buf.getvalue()


def line_plot_png(series: dict[str, tuple[list, list]], xlabel: str, ylabel: str, title: str = "") -> bytes:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.5), dpi=100)
    for name, (xs, ys) in series.items():
        ax.plot(xs, ys, marker="o", label=name)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    if len(series) > 1:
        ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    buf = io.BytesIO()
    fig.savefig(buf, format="png", metadata={"Software": None})
    plt.close(fig)
    return buf.getvalue()
