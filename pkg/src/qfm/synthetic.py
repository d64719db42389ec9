"""Synthetic clean images for desk-scale experiments."""
from __future__ import annotations

import numpy as np

TOY_RESOLUTION = (8, 8)
TOY_HIDDEN = (256, 256)
TOY_LEARNING_RATE = 1e-3


def _patterns(h, w):
    yy, xx = np.mgrid[0:h, 0:w]
    return [
        ((xx + yy) % 2) * 2.0 - 1.0,
        (xx % 2) * 2.0 - 1.0,
        (yy % 2) * 2.0 - 1.0,
        ((xx // 2 + yy // 2) % 2) * 2.0 - 1.0,
    ]


def toy_images(n: int, resolution=TOY_RESOLUTION, seed: int = 0) -> list[np.ndarray]:
    """Smooth ramps carrying one of four fine periodic textures.

    Each image is ``a + ramp + A * pattern`` with random offset, slopes,
    texture amplitude ``A`` in [0.1, 0.25] and pattern, clipped to [0, 1].
    The texture is the detail an over-long reverse integration wipes out.
    """
    rng = np.random.default_rng(seed)
    h, w = resolution
    yy, xx = np.mgrid[0:h, 0:w]
    u = xx / max(w - 1, 1) - 0.5
    v = yy / max(h - 1, 1) - 0.5
    pats = _patterns(h, w)
    out = []
    for _ in range(n):
        a = rng.uniform(0.3, 0.7)
        b, c = rng.uniform(-0.2, 0.2, size=2)
        amp = rng.uniform(0.1, 0.25)
        pat = pats[rng.integers(len(pats))]
        out.append(np.clip(a + b * u + c * v + amp * pat, 0.0, 1.0))
    return out


def quadrant_chart(size: int = 512, levels=(0.2, 0.4, 0.6, 0.8), split: int | None = None) -> np.ndarray:
    """Four flat quadrants meeting at row/column ``split``.

    The default split is odd, so both edges cut through a line of 2x2 blocks.
    """
    split = (size // 2) | 1 if split is None else split
    img = np.empty((size, size))
    img[:split, :split], img[:split, split:], img[split:, :split], img[split:, split:] = levels
    return img
