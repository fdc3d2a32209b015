"""Overall-survival prediction from fitted transition hazards.

The survival function for OS is one minus the probability of having reached
the death state, decomposed over the four possible paths (direct, via PD,
via response, via response then PD). Each path probability is a Stieltjes
sum over the merged jump grid of the six cumulative hazards, with the
occupancy factor of the current state taken at the left limit of each jump.

Two conventions are offered for the occupancy factors: ``exponential``
(exp of negative cumulative-hazard differences, the continuous-time form)
and ``product_limit`` (products of one minus the hazard increments), the
latter agreeing exactly with the Aalen-Johansen product-limit estimator,
which is also provided as an independent cross-check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .curves import StepCurve, increments_on_grid, merge_grid
from .estimate import MultistateFit
from .model import Transition

CONVENTIONS = ("product_limit", "exponential")

#: Path keys in the order (1->4, 1->3->4, 1->2->4, 1->2->3->4).
PATH_NAMES = ("p_direct", "p_via_pd", "p_via_resp", "p_via_resp_pd")


class PredictionError(ValueError):
    """Raised when hazard increments are incompatible with the convention."""


@dataclass(frozen=True)
class PathProbabilities:
    """Death probabilities split by path, on the merged jump grid."""

    grid: np.ndarray
    p_direct: StepCurve
    p_via_pd: StepCurve
    p_via_resp: StepCurve
    p_via_resp_pd: StepCurve
    convention: str

    def curves(self) -> dict[str, StepCurve]:
        return {name: getattr(self, name) for name in PATH_NAMES}

    def total(self) -> StepCurve:
        """Overall probability of death by time t (all paths combined)."""
        values = sum(getattr(self, name).values for name in PATH_NAMES)
        return StepCurve(self.grid, values, 0.0)


@dataclass(frozen=True)
class TransitionProbabilityMatrix:
    """Aalen-Johansen estimate of P(0, t) on the jump grid."""

    grid: np.ndarray
    matrices: np.ndarray  # shape (len(grid), 4, 4)

    def probability(self, i: int, j: int) -> StepCurve:
        initial = 1.0 if i == j else 0.0
        return StepCurve(self.grid, self.matrices[:, i - 1, j - 1], initial)

    def survival_os(self) -> StepCurve:
        return StepCurve(self.grid, 1.0 - self.matrices[:, 0, 3], 1.0)


def _grid_increments(hazards: Mapping[Transition, StepCurve],
                     horizon: float | None):
    grid = merge_grid(hazards.values(), horizon)
    inc = {t: increments_on_grid(c, grid) for t, c in hazards.items()}
    return grid, inc


def _check_product_limit(grid, inc) -> None:
    exit_totals = {
        1: inc[(1, 2)] + inc[(1, 3)] + inc[(1, 4)],
        2: inc[(2, 3)] + inc[(2, 4)],
        3: inc[(3, 4)],
    }
    for state, total in exit_totals.items():
        bad = np.flatnonzero(total > 1.0 + 1e-12)
        if bad.size:
            raise PredictionError(
                f"hazard increment out of state {state} exceeds 1 at "
                f"t={grid[bad[0]]:g} (total {total[bad[0]]:.6g}); risk-set "
                "pathology, consider the exponential convention")


def path_probabilities_from_hazards(
        hazards: Mapping[Transition, StepCurve],
        convention: str = "product_limit",
        horizon: float | None = None) -> PathProbabilities:
    """Evaluate the four path probabilities from six cumulative hazards.

    The Stieltjes sums are accumulated in a single forward pass over the
    merged grid: the probability of occupying each transient state (split by
    history, so the two ways of reaching PD stay separate) is propagated
    jump by jump, which regroups the nested path integrals exactly.
    """
    if convention not in CONVENTIONS:
        raise ValueError(f"unknown convention {convention!r}")
    grid, inc = _grid_increments(hazards, horizon)
    m = grid.size
    if convention == "product_limit":
        _check_product_limit(grid, inc)

    d12, d13, d14 = inc[(1, 2)].tolist(), inc[(1, 3)].tolist(), inc[(1, 4)].tolist()
    d23, d24, d34 = inc[(2, 3)].tolist(), inc[(2, 4)].tolist(), inc[(3, 4)].tolist()

    exponential = convention == "exponential"
    q1, q2, q3d, q3r = 1.0, 0.0, 0.0, 0.0
    p14 = p134 = p124 = p1234 = 0.0
    out = np.empty((m, 4))
    for k in range(m):
        a12, a13, a14 = d12[k], d13[k], d14[k]
        a23, a24, a34 = d23[k], d24[k], d34[k]
        if exponential:
            death34 = -math.expm1(-a34)
            keep1 = math.exp(-(a12 + a13 + a14))
            keep2 = math.exp(-(a23 + a24))
            keep3 = math.exp(-a34)
        else:
            death34 = a34
            keep1 = 1.0 - (a12 + a13 + a14)
            keep2 = 1.0 - (a23 + a24)
            keep3 = 1.0 - a34
        p14 += q1 * a14
        p134 += q3d * death34
        p124 += q2 * a24
        p1234 += q3r * death34
        f12 = q1 * a12
        f13 = q1 * a13
        f23 = q2 * a23
        q1 *= keep1
        q2 = q2 * keep2 + f12
        q3d = q3d * keep3 + f13
        q3r = q3r * keep3 + f23
        out[k] = (p14, p134, p124, p1234)

    curves = {name: StepCurve(grid, out[:, j], 0.0)
              for j, name in enumerate(PATH_NAMES)}
    return PathProbabilities(grid=grid, convention=convention, **curves)


def path_probabilities(fit: MultistateFit, arm: int,
                       convention: str = "product_limit") -> PathProbabilities:
    return path_probabilities_from_hazards(fit.cumulative_hazards(arm),
                                           convention, horizon=fit.horizon)


def aalen_johansen_from_hazards(
        hazards: Mapping[Transition, StepCurve],
        horizon: float | None = None) -> TransitionProbabilityMatrix:
    """Product-limit estimator P(0,t) = prod over jumps of (I + dA(u))."""
    grid, inc = _grid_increments(hazards, horizon)
    m = grid.size
    delta = np.zeros((m, 4, 4))
    for (i, j), values in inc.items():
        delta[:, i - 1, j - 1] = values
    totals = delta.sum(axis=2)
    bad = np.flatnonzero((totals > 1.0 + 1e-12).any(axis=1))
    if bad.size:
        raise PredictionError(
            f"negative diagonal of I+dA at t={grid[bad[0]]:g}: total hazard "
            "increment out of a state exceeds 1")
    delta[:, range(4), range(4)] = -totals

    matrices = np.empty((m, 4, 4))
    current = np.eye(4)
    identity = np.eye(4)
    for k in range(m):
        current = current @ (identity + delta[k])
        matrices[k] = current
    return TransitionProbabilityMatrix(grid=grid, matrices=matrices)


def aalen_johansen(fit: MultistateFit, arm: int) -> TransitionProbabilityMatrix:
    return aalen_johansen_from_hazards(fit.cumulative_hazards(arm),
                                       horizon=fit.horizon)


def predict_sos_from_hazards(hazards: Mapping[Transition, StepCurve],
                             convention: str = "product_limit",
                             horizon: float | None = None) -> StepCurve:
    paths = path_probabilities_from_hazards(hazards, convention, horizon)
    total = paths.total()
    return StepCurve(total.times, 1.0 - total.values, 1.0)


def predict_sos(fit: MultistateFit, arm: int,
                convention: str = "product_limit") -> StepCurve:
    """Predicted OS survival function for one arm, up to the last observation."""
    return predict_sos_from_hazards(fit.cumulative_hazards(arm), convention,
                                    horizon=fit.horizon)
