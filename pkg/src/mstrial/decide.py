"""Reduce predicted survival curves to one hazard ratio and gate on a target.

The hazard ratio between two predicted OS curves is approximated by fitting
an exponential survival function to each curve and taking the ratio of the
fitted rates. The fit is a weighted least-squares regression of log S(t)
through the origin (weights are the step widths), which has a closed form
and recovers the rate exactly whenever the input curve is itself exponential.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .curves import StepCurve

LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class ExpRateFit:
    """Exponential hazard rate fitted to a survival step curve."""

    rate: float
    sse: float
    t_max: float


@dataclass(frozen=True)
class DecisionOutcome:
    hr: float
    target: float

    @property
    def go(self) -> bool:
        """Advance the molecule iff the estimated HR is strictly below target."""
        return self.hr < self.target


def fit_exponential_rate(curve: StepCurve, t_max: float | None = None) -> ExpRateFit:
    """Weighted through-origin least squares of log S(t) on t.

    Each jump point t_k carries the curve value S(t_k) over the step
    [t_k, t_{k+1}) and is weighted by the step width; the last step runs to
    ``t_max`` (default: the last jump time). Values are floored at 1e-12
    before taking logs.
    """
    if t_max is None:
        t_max = float(curve.times[-1]) if curve.n_jumps else 0.0
    times = curve.times
    values = curve.values
    keep = times <= t_max
    times, values = times[keep], values[keep]
    if times.size == 0:
        raise ValueError("survival curve never leaves 1: no information to fit")
    widths = np.diff(np.append(times, t_max))
    logs = np.log(np.maximum(values, LOG_FLOOR))
    wt = widths * times
    denominator = float(wt @ times)
    numerator = -float(wt @ logs)
    if denominator <= 0 or numerator == 0.0:
        raise ValueError("survival curve never leaves 1: no information to fit")
    rate = numerator / denominator
    residuals = logs + rate * times
    sse = float(widths @ (residuals ** 2))
    return ExpRateFit(rate=rate, sse=sse, t_max=float(t_max))


def hazard_ratio_estimate(s_experimental: StepCurve, s_control: StepCurve) -> float:
    """Ratio of exponential rates fitted on the curves' common horizon."""
    if not s_experimental.n_jumps or not s_control.n_jumps:
        raise ValueError("both survival curves must carry at least one step")
    t_max = min(float(s_experimental.times[-1]), float(s_control.times[-1]))
    rate_exp = fit_exponential_rate(s_experimental, t_max).rate
    rate_ctl = fit_exponential_rate(s_control, t_max).rate
    return rate_exp / rate_ctl


@dataclass(frozen=True)
class TargetRate:
    target: float
    fraction_below: float

    @property
    def fraction_above(self) -> float:
        return 1.0 - self.fraction_below


def evaluate_decision_rule(hrs: Sequence[float],
                           targets: Sequence[float]) -> list[TargetRate]:
    """Per-target fractions of hazard ratios strictly below the target.

    Exact ties with the target count as not-below, matching the strict
    go rule of :class:`DecisionOutcome`.
    """
    hrs = np.asarray(hrs, dtype=float)
    targets = list(targets)
    if hrs.size == 0 or not targets:
        raise ValueError("need at least one hazard ratio and one target")
    return [TargetRate(float(t), float(np.mean(hrs < t))) for t in targets]


def decision_report(hr: float, targets: Sequence[float]) -> dict:
    """JSON-ready report of the gating rule at one estimated hazard ratio."""
    return {
        "hr": float(hr),
        "targets": [
            {"target": float(t), "go": bool(DecisionOutcome(hr, t).go)}
            for t in targets
        ],
    }
