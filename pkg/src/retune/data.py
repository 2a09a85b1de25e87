"""Seeded synthetic piecewise-smooth images and degraded observations."""

from __future__ import annotations

import numpy as np

from .core import Dataset, Signal
from .forward_models import LinearOp, apply

CHANNEL_NOISE = (0.1, 0.25, 0.5)


def synth_image(rng, size: int, channels: int = 3, rects: int = 6) -> np.ndarray:
    """Smooth gradient background plus random constant rectangles, clipped to [0, 1]."""
    yy, xx = np.mgrid[0:size, 0:size] / size
    img = np.empty((size, size, channels))
    for c in range(channels):
        a, b, off = rng.uniform(-0.5, 0.5, 2).tolist() + [rng.uniform(0.2, 0.8)]
        img[:, :, c] = off + a * (xx - 0.5) + b * (yy - 0.5)
    for _ in range(rects):
        h, w = rng.integers(size // 8, size // 2 + 1, 2)
        r0, c0 = rng.integers(0, size - h + 1), rng.integers(0, size - w + 1)
        img[r0:r0 + h, c0:c0 + w] = rng.uniform(0.0, 1.0, channels)
    return np.clip(img, 0.0, 1.0)


def add_noise(rng, img: np.ndarray, sigma) -> np.ndarray:
    """Gaussian noise with per-channel standard deviation ``sigma``."""
    sig = np.broadcast_to(np.asarray(sigma, float), (img.shape[2],))
    return img + rng.standard_normal(img.shape) * sig[None, None, :]


def denoising_dataset(n: int, size: int, seed: int, noise=CHANNEL_NOISE, channels: int = 3) -> Dataset:
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(n):
        clean = synth_image(rng, size, channels)
        pairs.append((Signal.from_image(clean), Signal.from_image(add_noise(rng, clean, noise))))
    return Dataset(tuple(pairs), seed)


def restoration_dataset(n: int, size: int, seed: int, A: LinearOp, noise: float = 0.05,
                        channels: int = 3) -> Dataset:
    """Pairs ``(xbar, A xbar + noise)``."""
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(n):
        clean = Signal.from_image(synth_image(rng, size, channels))
        obs = apply(A, clean.data) + noise * rng.standard_normal(clean.n)
        pairs.append((clean, clean.with_data(obs)))
    return Dataset(tuple(pairs), seed)


def load_ppm_dir(path, limit: int | None = None) -> list[np.ndarray]:
    """Sorted ``*.ppm`` / ``*.pgm`` images from a directory."""
    from pathlib import Path
    from .io import read_ppm
    files = sorted(p for p in Path(path).iterdir() if p.suffix.lower() in (".ppm", ".pgm"))
    return [read_ppm(p) for p in files[:limit]]
