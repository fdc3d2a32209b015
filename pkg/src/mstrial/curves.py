"""Right-continuous step functions over time.

A :class:`StepCurve` represents either a cumulative hazard (non-decreasing,
starting at 0) or a survival function (non-increasing, starting at 1). The
curve holds its jump locations and the value attained at each jump; between
jumps the value is constant and right-continuous.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class StepCurve:
    times: np.ndarray
    values: np.ndarray
    initial_value: float = 0.0

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if times.ndim != 1 or values.ndim != 1 or times.shape != values.shape:
            raise ValueError("times and values must be 1-d arrays of equal length")
        if times.size and times[0] <= 0:
            raise ValueError("jump times must be strictly positive")
        if times.size > 1 and not np.all(np.diff(times) > 0):
            raise ValueError("jump times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "initial_value", float(self.initial_value))

    def __call__(self, t) -> np.ndarray | float:
        """Evaluate the curve at time(s) ``t`` (right-continuous)."""
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.times, t, side="right")
        padded = np.concatenate(([self.initial_value], self.values))
        out = padded[idx]
        return float(out) if out.ndim == 0 else out

    @property
    def n_jumps(self) -> int:
        return int(self.times.size)

    def increments(self) -> np.ndarray:
        """Jump sizes at each jump time."""
        if not self.times.size:
            return np.empty(0)
        return np.diff(np.concatenate(([self.initial_value], self.values)))

    def scaled(self, factor: float) -> "StepCurve":
        """Curve with every value (and therefore every jump) multiplied."""
        return StepCurve(self.times, self.values * factor,
                         self.initial_value * factor)

    def restricted(self, t_max: float) -> "StepCurve":
        """Drop jumps beyond ``t_max``."""
        keep = self.times <= t_max
        return StepCurve(self.times[keep], self.values[keep], self.initial_value)

    @staticmethod
    def from_increments(times, increments, initial_value: float = 0.0) -> "StepCurve":
        return StepCurve(times, initial_value + np.cumsum(increments), initial_value)


ZERO_CURVE = StepCurve(np.empty(0), np.empty(0), 0.0)


def merge_grid(curves, horizon: float | None = None) -> np.ndarray:
    """Union of jump times of several curves, optionally extended to a horizon.

    The horizon, when beyond the last jump, is appended as a plain grid point
    so that downstream step evaluation covers the full observation window.
    """
    parts = [c.times for c in curves if c.times.size]
    grid = np.unique(np.concatenate(parts)) if parts else np.empty(0)
    if horizon is not None and (not grid.size or horizon > grid[-1]):
        grid = np.append(grid, horizon)
    return grid


def increments_on_grid(curve: StepCurve, grid: np.ndarray) -> np.ndarray:
    """Jump sizes of ``curve`` aligned on ``grid`` (zero off the curve's support)."""
    out = np.zeros(grid.size)
    if not curve.times.size:
        return out
    pos = np.searchsorted(grid, curve.times)
    out[pos] = curve.increments()
    return out
