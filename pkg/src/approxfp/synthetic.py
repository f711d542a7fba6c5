"""Deterministic stand-in data in the CIFAR-10 binary layout.

Each class is an oriented colour grating with its own angle, spatial
frequency and hue.  Phase, contrast, offset and additive noise are random per
image, so classes overlap and a small CNN lands well short of perfect
accuracy.  Used for tests and for training the bundled fixture network when
the real dataset is not on disk.
"""
from __future__ import annotations

import numpy as np

from .cnn import IMAGE_SHAPE, N_CLASSES, Dataset

_ANGLES = np.linspace(0.0, np.pi, N_CLASSES, endpoint=False)
_FREQS = np.array([2.0, 3.0, 4.0, 2.5, 3.5, 2.0, 3.0, 4.0, 2.5, 3.5])
_HUES = np.array(
    [
        [1.0, 0.3, 0.3],
        [0.3, 1.0, 0.3],
        [0.3, 0.3, 1.0],
        [1.0, 1.0, 0.3],
        [1.0, 0.3, 1.0],
        [0.3, 1.0, 1.0],
        [1.0, 0.6, 0.2],
        [0.6, 0.2, 1.0],
        [0.8, 0.8, 0.8],
        [0.2, 0.7, 0.5],
    ]
)


def make_dataset(n: int, seed: int, noise: float = 1.5) -> Dataset:
    """``n`` images with labels cycling through the classes in shuffled order."""
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % N_CLASSES).astype(np.uint8)
    _, h, w = IMAGE_SHAPE
    yy, xx = np.meshgrid(np.arange(h) / h, np.arange(w) / w, indexing="ij")

    angle = _ANGLES[labels] + rng.normal(0.0, 0.15, n)
    freq = _FREQS[labels] * rng.uniform(0.85, 1.15, n)
    phase = rng.uniform(0.0, 2 * np.pi, n)
    proj = np.cos(angle)[:, None, None] * xx + np.sin(angle)[:, None, None] * yy
    wave = np.sin(2 * np.pi * freq[:, None, None] * proj + phase[:, None, None])

    contrast = rng.uniform(0.15, 0.35, n)[:, None, None, None]
    offset = rng.uniform(0.3, 0.7, (n, 3))[:, :, None, None]
    hue = (_HUES[labels] * rng.uniform(0.7, 1.3, (n, 3)))[:, :, None, None]
    img = offset + contrast * hue * wave[:, None] + noise * rng.normal(0.0, 0.5, (n, *IMAGE_SHAPE))
    pixels = np.clip(np.rint(255.0 * img), 0, 255).astype(np.uint8)
    return Dataset(pixels, labels)


def train_test(n_train: int = 10000, n_test: int = 2000, seed: int = 0) -> tuple[Dataset, Dataset]:
    return make_dataset(n_train, seed), make_dataset(n_test, seed + 1)
