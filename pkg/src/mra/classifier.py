"""Small residual CNN used as the downstream classifier."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError


@dataclass(frozen=True)
class ClassifierConfig:
    num_classes: int = 10
    width: int = 32
    in_chans: int = 3
    image_size: int = 32

    def __post_init__(self):
        if self.num_classes < 2 or self.width < 1 or self.in_chans < 1:
            raise ConfigError(f"invalid classifier config {self}")

    def to_dict(self) -> dict:
        return asdict(self)


class BasicBlock(nn.Module):
    def __init__(self, cin: int, cout: int, stride: int):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, 1, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(cout)
        self.shortcut = nn.Sequential()
        if stride != 1 or cin != cout:
            self.shortcut = nn.Sequential(nn.Conv2d(cin, cout, 1, stride, bias=False),
                                          nn.BatchNorm2d(cout))

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + self.shortcut(x))


class ResidualCNN(nn.Module):
    """Stem + three residual stages (w, 2w, 4w channels), global pool, linear head.

    Takes (B, H, W, C) images in [0, 1]; input normalisation happens inside.
    With the default width of 32 it has roughly 0.3M parameters.
    """

    def __init__(self, config: ClassifierConfig):
        super().__init__()
        self.config = config
        w = config.width
        self.stem = nn.Sequential(nn.Conv2d(config.in_chans, w, 3, 1, 1, bias=False),
                                  nn.BatchNorm2d(w), nn.ReLU())
        self.stages = nn.Sequential(BasicBlock(w, w, 1), BasicBlock(w, 2 * w, 2),
                                    BasicBlock(2 * w, 4 * w, 2))
        self.head = nn.Linear(4 * w, config.num_classes)

    def forward(self, images):
        x = (images.permute(0, 3, 1, 2) - 0.5) / 0.25
        x = self.stages(self.stem(x))
        return self.head(x.mean(dim=(2, 3)))


def mixed_cross_entropy(logits, label_a, label_b, lam):
    """Per-sample ``lam * CE(a) + (1 - lam) * CE(b)``, averaged over the batch."""
    ce_a = F.cross_entropy(logits, label_a, reduction="none")
    ce_b = F.cross_entropy(logits, label_b, reduction="none")
    return (lam * ce_a + (1 - lam) * ce_b).mean()
