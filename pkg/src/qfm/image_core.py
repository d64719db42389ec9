"""Grayscale image container helpers, synthetic noise and quality metrics.

Images are plain 2-D ``float64`` numpy arrays with nominal range [0, 1].
Values outside that range are legal (noisy images routinely leave it).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ShapeError

SSIM_WINDOW = 11
SSIM_WINDOW_STD = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_DYNAMIC_RANGE = 1.0


@dataclass(frozen=True)
class Metrics:
    psnr: float  # math.inf when the images are identical
    ssim: float


def as_image(data) -> np.ndarray:
    """Validate ``data`` and return it as a 2-D float64 array.

    Colour input (H x W x C) is reduced to grayscale by averaging channels.
    """
    img = np.asarray(data, dtype=np.float64)
    if img.ndim == 3:
        img = img.mean(axis=2)
    if img.ndim != 2 or img.shape[0] < 1 or img.shape[1] < 1:
        raise ShapeError(f"expected a non-empty 2-D image, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ParameterError("image contains NaN or Inf values")
    return img


def add_gaussian_noise(img, sigma: float, seed: int, clip: bool = False) -> np.ndarray:
    """Return ``img + sigma * eps`` with ``eps`` i.i.d. standard normal per pixel.

    The result is not clipped unless ``clip`` is set; clipping truncates the
    noise distribution and biases any later noise estimate downwards.
    """
    img = as_image(img)
    if not sigma >= 0 or not math.isfinite(sigma):
        raise ParameterError(f"sigma must be a finite value >= 0, got {sigma}")
    if sigma == 0:
        out = img.copy()
    else:
        eps = np.random.default_rng(seed).standard_normal(img.shape)
        out = img + sigma * eps
    if clip:
        np.clip(out, 0.0, 1.0, out=out)
    return out


def _check_pair(a, b):
    a = as_image(a)
    b = as_image(b)
    if a.shape != b.shape:
        raise ShapeError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def mse(a, b) -> float:
    a, b = _check_pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a, b, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``math.inf`` for identical images."""
    if not peak > 0:
        raise ParameterError(f"peak must be positive, got {peak}")
    err = mse(a, b)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / err)


def gaussian_window(size: int = SSIM_WINDOW, std: float = SSIM_WINDOW_STD) -> np.ndarray:
    """Normalised 1-D Gaussian taps; the 2-D window is their outer product."""
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * std * std))
    return g / g.sum()


def _filter_valid(img: np.ndarray, taps: np.ndarray) -> np.ndarray:
    # separable correlation, 'valid' region only (no border padding)
    n = taps.size
    h, w = img.shape
    rows = sum(taps[j] * img[:, j:w - n + 1 + j] for j in range(n))
    return sum(taps[j] * rows[j:h - n + 1 + j, :] for j in range(n))


def ssim_map(a, b) -> np.ndarray:
    a, b = _check_pair(a, b)
    if min(a.shape) < SSIM_WINDOW:
        raise ParameterError(
            f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {a.shape}"
        )
    g = gaussian_window()
    c1 = (SSIM_K1 * SSIM_DYNAMIC_RANGE) ** 2
    c2 = (SSIM_K2 * SSIM_DYNAMIC_RANGE) ** 2

    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a * mu_a
    var_b = _filter_valid(b * b, g) - mu_b * mu_b
    cov = _filter_valid(a * b, g) - mu_a * mu_b

    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a, b) -> float:
    """Mean SSIM over all fully-covered 11x11 Gaussian windows (std 1.5)."""
    return float(np.mean(ssim_map(a, b)))


def compare(output, reference) -> Metrics:
    return Metrics(psnr=psnr(output, reference), ssim=ssim(output, reference))
