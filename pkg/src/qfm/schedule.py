"""Shared time grid and the coarse-to-fine reverse-time schedule.

Times live on a uniform grid ``t_i = i / (S - 1)``, ``i = 0..S-1``. A reverse
schedule starts at grid index ``i0`` and walks down with stride ``M`` while
the high-noise region lasts, then visits every remaining grid point down to
``t = 0``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError

DEFAULT_GRID_SIZE = 100
DEFAULT_COARSE_INTERVAL = 10


@dataclass(frozen=True)
class TimeGrid:
    size: int
    points: np.ndarray = field(repr=False, compare=False)

    def __post_init__(self):
        self.points.setflags(write=False)

    @property
    def spacing(self) -> float:
        return 1.0 / (self.size - 1)


@dataclass(frozen=True)
class Schedule:
    """Strictly decreasing grid indices ``indices[0] = i0`` down to ``0``."""

    grid: TimeGrid = field(repr=False)
    M: int
    i0: int
    indices: tuple[int, ...]
    coarse_count: int

    @property
    def times(self) -> np.ndarray:
        return self.grid.points[list(self.indices)]

    @property
    def step_sizes(self) -> np.ndarray:
        t = self.times
        return t[:-1] - t[1:]

    @property
    def n_steps(self) -> int:
        return len(self.indices) - 1

    @property
    def t_start(self) -> float:
        return float(self.grid.points[self.i0])

    def to_dict(self) -> dict:
        return {"S": self.grid.size, "M": self.M, "i0": self.i0, "indices": list(self.indices)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def build_grid(size: int = DEFAULT_GRID_SIZE) -> TimeGrid:
    if int(size) != size or size < 2:
        raise ParameterError(f"grid size must be an integer >= 2, got {size}")
    size = int(size)
    return TimeGrid(size, np.arange(size, dtype=np.float64) / (size - 1))


def start_index(ratio: float, grid: TimeGrid) -> int:
    """Map a noise ratio in [0, 1] to the nearest grid index (halves round up).

    Any strictly positive ratio yields at least index 1, so a noisy input is
    always integrated for at least one step.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ParameterError(f"ratio must lie in [0, 1], got {ratio}")
    if ratio == 0.0:
        return 0
    i0 = int(math.floor(ratio * (grid.size - 1) + 0.5))
    return min(max(i0, 1), grid.size - 1)


def build_schedule(i0: int, M: int, grid: TimeGrid) -> Schedule:
    """Coarse indices ``i0, i0-M, ...`` while the next one stays >= M, then every
    index below the last coarse one down to 0.
    """
    if int(M) != M or M < 1:
        raise ParameterError(f"coarse interval must be an integer >= 1, got {M}")
    if int(i0) != i0 or not 0 <= i0 <= grid.size - 1:
        raise ParameterError(f"start index must lie in [0, {grid.size - 1}], got {i0}")
    i0, M = int(i0), int(M)
    if i0 == 0:
        return Schedule(grid, M, 0, (0,), coarse_count=1)
    coarse = [i0]
    while coarse[-1] - M >= M:
        coarse.append(coarse[-1] - M)
    fine = range(coarse[-1] - 1, -1, -1)
    return Schedule(grid, M, i0, tuple(coarse) + tuple(fine), coarse_count=len(coarse))


def schedule_from_dict(obj: dict) -> Schedule:
    grid = build_grid(obj["S"])
    sched = build_schedule(obj["i0"], obj["M"], grid)
    if "indices" in obj and list(obj["indices"]) != list(sched.indices):
        raise ParameterError("stored schedule indices do not match the rebuilt schedule")
    return sched
