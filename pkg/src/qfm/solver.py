"""Explicit Euler reverse-time integration and the denoising pipelines.

``x_{k+1} = x_k - (t_k - t_{k+1}) * v(x_k, t_k, sigma_hat)`` over a
:class:`~qfm.schedule.Schedule`, starting from the noisy image itself.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError, ShapeError
from .image_core import as_image, psnr, ssim, SSIM_WINDOW
from .noise_estimator import (
    DEFAULT_CONSTANTS,
    CalibrationConstants,
    NoiseEstimate,
    estimate_sigma,
    noise_to_ratio,
)
from .schedule import (
    DEFAULT_COARSE_INTERVAL,
    Schedule,
    TimeGrid,
    build_grid,
    build_schedule,
    start_index,
)

TRAJECTORY_COLUMNS = ("step", "t", "nfe", "psnr", "ssim")


@dataclass(frozen=True)
class StepRecord:
    k: int
    t: float
    nfe_cumulative: int
    psnr: float | None = None
    ssim: float | None = None
    state: np.ndarray | None = field(default=None, repr=False)


@dataclass
class TrajectoryLog:
    """Record 0 is the starting state; record k is the state after k Euler steps."""

    steps: list[StepRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.steps)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(TRAJECTORY_COLUMNS)
            for r in self.steps:
                writer.writerow([r.k, repr(r.t), r.nfe_cumulative, _fmt(r.psnr), _fmt(r.ssim)])


def _fmt(value):
    if value is None:
        return ""
    return "inf" if value == math.inf else repr(value)


@dataclass
class DenoiseResult:
    output: np.ndarray
    schedule: Schedule
    trajectory: TrajectoryLog
    total_nfe: int
    estimate: NoiseEstimate | None = None
    sigma_hat: float = 0.0


def _record(k, t, nfe, state, reference, keep_states):
    p = s = None
    if reference is not None:
        p = psnr(state, reference)
        s = ssim(state, reference) if min(state.shape) >= SSIM_WINDOW else None
    return StepRecord(k, float(t), nfe, p, s, state.copy() if keep_states else None)


def euler_integrate(
    x_init,
    field,
    schedule: Schedule,
    sigma_hat: float,
    log_reference=None,
    keep_states: bool = False,
) -> DenoiseResult:
    """Integrate ``field`` backwards in time along ``schedule`` from ``x_init``.

    Exactly ``schedule.n_steps`` field evaluations are made. When
    ``log_reference`` is given, PSNR (and SSIM, for images of at least 11x11)
    against it is logged for every state.
    """
    x = as_image(x_init).copy()
    res = getattr(field, "resolution", None)
    if res is not None and tuple(res) != x.shape:
        raise ShapeError(f"image {x.shape} does not match field {tuple(res)}")
    if log_reference is not None:
        log_reference = as_image(log_reference)
        if log_reference.shape != x.shape:
            raise ShapeError(f"reference {log_reference.shape} does not match state {x.shape}")
    times = schedule.times
    dts = schedule.step_sizes
    log = TrajectoryLog([_record(0, times[0], 0, x, log_reference, keep_states)])
    for k, dt in enumerate(dts):
        v = np.asarray(field(x, float(times[k]), sigma_hat))
        if v.shape != x.shape:
            raise ShapeError(f"field returned {v.shape} for state {x.shape}")
        x = x - dt * v
        if not np.all(np.isfinite(x)):
            raise DivergenceError(k)
        log.steps.append(_record(k + 1, times[k + 1], k + 1, x, log_reference, keep_states))
    return DenoiseResult(x, schedule, log, total_nfe=len(dts), sigma_hat=sigma_hat)


def denoise_adaptive(
    noisy,
    field,
    constants: CalibrationConstants = DEFAULT_CONSTANTS,
    sigma_max: float = 1.0,
    grid: TimeGrid | None = None,
    M: int = DEFAULT_COARSE_INTERVAL,
    seed: int = 0,
    reference=None,
    keep_states: bool = False,
) -> DenoiseResult:
    """Estimate the noise level, start at the matching grid time and integrate to 0.

    The field is conditioned on ``ratio * sigma_max``, i.e. the estimate clamped
    to the training range.
    """
    noisy = as_image(noisy)
    grid = grid if grid is not None else build_grid()
    est = estimate_sigma(noisy, constants, partition_seed=seed)
    ratio = noise_to_ratio(est, sigma_max)
    sched = build_schedule(start_index(ratio, grid), M, grid)
    result = euler_integrate(noisy, field, sched, ratio * sigma_max, reference, keep_states)
    result.estimate = est
    return result


def denoise_fixed(
    noisy,
    field,
    grid: TimeGrid | None = None,
    M: int = DEFAULT_COARSE_INTERVAL,
    sigma_max: float = 1.0,
    reference=None,
    keep_states: bool = False,
) -> DenoiseResult:
    """Ablation baseline without noise estimation.

    Always integrates the full trajectory from ``t = 1`` with the field
    conditioned on the nominal level ``sigma_max``. For an input whose estimate
    reaches ``sigma_max`` this coincides with :func:`denoise_adaptive`.
    """
    noisy = as_image(noisy)
    grid = grid if grid is not None else build_grid()
    sched = build_schedule(grid.size - 1, M, grid)
    return euler_integrate(noisy, field, sched, sigma_max, reference, keep_states)
