"""Blind global noise-level estimation from 2x2 block order statistics.

Each non-overlapping 2x2 block yields its range ``d1 = y(4) - y(1)`` and
middle range ``d2 = y(3) - y(2)``. Under a locally constant signal these are
``sigma`` times the range / middle range of four standard normals, whose
expectations are the calibration constants ``c1`` and ``c2``.
"""
from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParameterError
from .image_core import as_image

log = logging.getLogger(__name__)

MIN_CALIBRATION_SAMPLES = 10**5
_CALIBRATION_CHUNK = 10**6
# share of pixels sitting exactly on 0 or 1 above which an input counts as clipped
_CLIP_FRACTION = 0.01


class RatioClampedWarning(UserWarning):
    """The estimated noise level exceeded ``sigma_max`` and was clamped."""


@dataclass(frozen=True)
class BlockStats:
    """Per-block range ``d1`` and middle range ``d2``, in block raster order."""

    d1: np.ndarray
    d2: np.ndarray

    def __len__(self):
        return self.d1.size


@dataclass(frozen=True)
class CalibrationConstants:
    c1: float
    c2: float
    samples: int | None = None
    seed: int | None = None

    def __post_init__(self):
        if not (self.c1 > self.c2 > 0):
            raise ParameterError(f"constants must satisfy c1 > c2 > 0, got {self.c1}, {self.c2}")

    def to_json(self) -> str:
        return json.dumps(
            {"c1": self.c1, "c2": self.c2, "samples": self.samples, "seed": self.seed},
            indent=2,
        )

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path) -> "CalibrationConstants":
        try:
            obj = json.loads(Path(path).read_text())
            return cls(float(obj["c1"]), float(obj["c2"]), obj.get("samples"), obj.get("seed"))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParameterError(f"{path}: invalid constants file ({exc})") from exc


# calibrate_constants(10**7, seed=0); exact values are 2.0587507 and 0.5940228
DEFAULT_CONSTANTS = CalibrationConstants(
    c1=2.0583780061732786, c2=0.593731556178185, samples=10**7, seed=0
)


@dataclass(frozen=True)
class NoiseEstimate:
    sigma_hat: float
    block_count: int
    partition_seed: int
    per_block_estimates: np.ndarray | None = None
    clipped: bool = False
    repeats: int = 1


def partition_blocks(img) -> BlockStats:
    """Sort the four pixels of every non-overlapping 2x2 block.

    A trailing odd row or column is dropped.
    """
    img = as_image(img)
    h, w = img.shape
    if h < 2 or w < 2:
        raise ParameterError(f"image must be at least 2x2, got {img.shape}")
    hb, wb = h // 2, w // 2
    blocks = img[: 2 * hb, : 2 * wb].reshape(hb, 2, wb, 2).transpose(0, 2, 1, 3)
    s = np.sort(blocks.reshape(hb * wb, 4), axis=1)
    return BlockStats(d1=s[:, 3] - s[:, 0], d2=s[:, 2] - s[:, 1])


def calibrate_constants(samples: int = 10**6, seed: int = 0) -> CalibrationConstants:
    """Monte-Carlo expected range and middle range of four standard normals.

    ``samples`` is the number of 4-tuples drawn. They are generated in fixed
    chunks so the result depends only on ``(samples, seed)``.
    """
    samples = int(samples)
    if samples < MIN_CALIBRATION_SAMPLES:
        raise ParameterError(
            f"calibration needs at least {MIN_CALIBRATION_SAMPLES} samples, got {samples}"
        )
    rng = np.random.default_rng(seed)
    sum1 = sum2 = 0.0
    left = samples
    while left:
        n = min(left, _CALIBRATION_CHUNK)
        z = np.sort(rng.standard_normal((n, 4)), axis=1)
        sum1 += float(np.sum(z[:, 3] - z[:, 0]))
        sum2 += float(np.sum(z[:, 2] - z[:, 1]))
        left -= n
    return CalibrationConstants(sum1 / samples, sum2 / samples, samples=samples, seed=seed)


def _looks_clipped(img: np.ndarray) -> bool:
    if img.min() < 0.0 or img.max() > 1.0:
        return False
    at_bounds = np.count_nonzero((img == 0.0) | (img == 1.0))
    return at_bounds > _CLIP_FRACTION * img.size and bool(np.ptp(img) > 0)


def estimate_sigma(
    img,
    constants: CalibrationConstants = DEFAULT_CONSTANTS,
    partition_seed: int = 0,
    repeats: int = 1,
    keep_blocks: bool = False,
) -> NoiseEstimate:
    """Estimate the global Gaussian noise std of ``img``.

    Blocks are shuffled with ``partition_seed``; the first ``round(K/5)`` use
    the range estimate ``d1/c1`` and the rest the middle-range estimate
    ``d2/c2``. ``sigma_hat`` is the mean of the fused per-block values. With
    ``repeats > 1`` the result is averaged over that many partitions drawn in
    sequence from the same generator.
    """
    img = as_image(img)
    if repeats < 1:
        raise ParameterError(f"repeats must be >= 1, got {repeats}")
    stats = partition_blocks(img)
    k = len(stats)
    s1 = stats.d1 / constants.c1
    s2 = stats.d2 / constants.c2
    n1 = int(math.floor(k / 5 + 0.5))

    rng = np.random.default_rng(partition_seed)
    fused = None
    estimates = []
    for _ in range(repeats):
        use_range = np.zeros(k, dtype=bool)
        use_range[rng.permutation(k)[:n1]] = True
        fused = np.where(use_range, s1, s2)
        estimates.append(float(np.mean(fused)))
    sigma_hat = estimates[0] if repeats == 1 else float(np.mean(estimates))

    clipped = _looks_clipped(img)
    if clipped:
        log.warning("input appears clipped to [0, 1]; the noise estimate is biased low")
    return NoiseEstimate(
        sigma_hat=sigma_hat,
        block_count=k,
        partition_seed=partition_seed,
        per_block_estimates=fused if keep_blocks else None,
        clipped=clipped,
        repeats=repeats,
    )


def noise_to_ratio(estimate, sigma_max: float = 1.0) -> float:
    """Position of the input on the normalised time axis, ``sigma_hat / sigma_max``.

    Accepts a :class:`NoiseEstimate` or a bare float. Ratios above one are
    clamped and a :class:`RatioClampedWarning` is emitted.
    """
    if not sigma_max > 0:
        raise ParameterError(f"sigma_max must be positive, got {sigma_max}")
    sigma_hat = estimate.sigma_hat if isinstance(estimate, NoiseEstimate) else float(estimate)
    if sigma_hat < 0 or not math.isfinite(sigma_hat):
        raise ParameterError(f"sigma_hat must be finite and >= 0, got {sigma_hat}")
    ratio = sigma_hat / sigma_max
    if ratio > 1.0:
        warnings.warn(
            f"estimated noise {sigma_hat:.4g} exceeds sigma_max {sigma_max:.4g}; ratio clamped to 1",
            RatioClampedWarning,
            stacklevel=2,
        )
        return 1.0
    return ratio
