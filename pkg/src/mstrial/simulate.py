"""Early-phase trial replicates and operating-characteristic studies.

Replicates are generated either by bootstrap resampling from a source arm or
by sampling patient paths from fitted cumulative hazards with hypothesized
per-transition hazard ratios. Each replicate is censored like an early-phase
trial (post-progression information dropped, accrual/analysis window
applied), pooled with the full control arm, refitted, and reduced to an OS
hazard ratio; the gating rule's false-positive/false-negative rates follow
from the per-replicate ratios.

Replicate RNG streams are derived from (master_seed, replicate index) via
the counter-based Philox generator, so results are bit-identical no matter
how replicates are scheduled across workers.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .curves import StepCurve, increments_on_grid, merge_grid
from .decide import evaluate_decision_rule, hazard_ratio_estimate
from .estimate import FitError, fit_multistate, nelson_aalen
from .ingest import (CensorPolicy, PatientRecord, administratively_censor,
                     apply_trial_timeline, censor_post_progression,
                     to_transition_table)
from .model import FOUR_STATE_MODEL, Transition, format_transition
from .predict import PredictionError, predict_sos

DEFAULT_HR_TARGETS = (0.8, 0.85, 0.9, 1.0)
DEFAULT_CUT_TIMES = (30.0, 60.0, 90.0, 120.0, 150.0, 180.0, 240.0, 320.0)
MAX_FAILURE_FRACTION = 0.05
MASS_LOSS_LIMIT = 0.01


class SimulationError(RuntimeError):
    """Raised for unusable simulation inputs or excessive replicate failures."""


@dataclass(frozen=True)
class ScenarioConfig:
    """Parameters of one simulated early-phase study."""

    n_patients: int = 40
    n_replicates: int = 1000
    accrual_days: float = 180.0
    analysis_after_lpi_days: float = 270.0
    censor_policy: CensorPolicy = CensorPolicy.at_pd_plus_1()
    pp_scenario: str = "shared_pp"
    hr_targets: tuple[float, ...] = DEFAULT_HR_TARGETS
    transition_hr: tuple[float, ...] = (1.0,) * 6
    master_seed: int = 0

    def __post_init__(self):
        if self.n_patients < 1:
            raise ValueError("n_patients must be at least 1")
        if self.n_replicates < 1:
            raise ValueError("n_replicates must be at least 1")
        if len(self.transition_hr) != 6:
            raise ValueError("transition_hr must have six entries")
        if any(h <= 0 for h in self.transition_hr):
            raise ValueError("transition hazard ratios must be positive")
        if any(t <= 0 for t in self.hr_targets):
            raise ValueError("hr targets must be positive")
        if self.master_seed < 0:
            raise ValueError("master_seed must be non-negative")
        object.__setattr__(self, "hr_targets", tuple(float(t) for t in self.hr_targets))
        object.__setattr__(self, "transition_hr",
                           tuple(float(h) for h in self.transition_hr))


#: Built-in accrual/analysis-window presets (days).
PRESETS: dict[str, dict] = {
    # 6-month accrual, analysis 9 months after the last patient in
    "accrual6-fu9": {"accrual_days": 180.0, "analysis_after_lpi_days": 270.0},
    # half-year accrual within a one-year total trial duration
    "accrual6-fu6": {"accrual_days": 182.5, "analysis_after_lpi_days": 182.5},
    # one-year accrual, analysis 6 months after the last patient in
    "accrual12-fu6": {"accrual_days": 365.0, "analysis_after_lpi_days": 180.0},
}


def replicate_rng(master_seed: int, replicate: int) -> np.random.Generator:
    """Independent, order-free RNG stream for one replicate."""
    key = np.array([master_seed, replicate], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _as_rng(seed: int | np.random.Generator) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return replicate_rng(seed, 0)


def bootstrap_arm(source: Sequence[PatientRecord], n: int,
                  seed: int | np.random.Generator,
                  arm: int | None = None, id_prefix: str = "b") -> list[PatientRecord]:
    """Draw ``n`` records i.i.d. with replacement, assigning fresh ids."""
    if not source:
        raise SimulationError("cannot bootstrap from an empty source arm")
    rng = _as_rng(seed)
    idx = rng.integers(0, len(source), size=n)
    out = []
    for k, i in enumerate(idx):
        record = source[i]
        out.append(replace(record, patient_id=f"{id_prefix}{k:05d}",
                           arm=record.arm if arm is None else arm))
    return out


class _ExitTable:
    """Per-state discrete exit distribution over the hazard jump grid."""

    def __init__(self, state: int, hazards: Mapping[Transition, StepCurve],
                 hr: Mapping[Transition, float]):
        exits = FOUR_STATE_MODEL.exits(state)
        curves = [hazards[t] for t in exits]
        self.destinations = [t[1] for t in exits]
        self.grid = merge_grid(curves)
        probs = np.column_stack(
            [increments_on_grid(c, self.grid) * hr[t]
             for c, t in zip(curves, exits)]
        ) if self.grid.size else np.zeros((0, len(exits)))
        total = probs.sum(axis=1)
        over = total > 1.0
        if over.any():
            loss = float(np.max((total[over] - 1.0) / total[over]))
            probs = probs.copy()
            probs[over] /= total[over][:, None]
            if loss > MASS_LOSS_LIMIT:
                raise SimulationError(
                    f"hazard ratio too large: capping the one-jump exit "
                    f"probability out of state {state} at 1 loses "
                    f"{loss:.1%} of mass")
        self.probs = probs
        self.exit_total = np.minimum(total, 1.0)

    def sample_exit(self, now: float, rng: np.random.Generator):
        """(exit_time, destination) or (censor_time, None) past the last jump."""
        start = int(np.searchsorted(self.grid, now, side="right"))
        if start >= self.grid.size:
            return now, None
        q = self.exit_total[start:]
        cdf = 1.0 - np.cumprod(1.0 - q)
        u = rng.random()
        k = int(np.searchsorted(cdf, u, side="left"))
        if k >= q.size:
            return float(self.grid[-1]), None
        j = start + k
        p = self.probs[j]
        cum = np.cumsum(p)
        v = rng.random() * cum[-1]
        dest = self.destinations[min(int(np.searchsorted(cum, v, side="right")),
                                     len(p) - 1)]
        return float(self.grid[j]), dest


def simulate_from_hazards(hazards: Mapping[Transition, StepCurve],
                          transition_hr: Sequence[float], n: int,
                          seed: int | np.random.Generator,
                          arm: int = 1, id_prefix: str = "sim") -> list[PatientRecord]:
    """Sample ``n`` patient paths from step cumulative hazards.

    From the current state, the probability of leaving via transition i->j at
    a jump time u is the hazard increment there times the hypothesized
    hazard ratio for that transition, capped so the total one-jump exit
    probability does not exceed 1 (capping that loses more than 1% of mass is
    an error). The clock never resets: a patient entering a state at time u
    is exposed to that state's jumps strictly after u. Patients surviving
    past the last jump of their state's exit hazards are censored there.
    """
    if len(transition_hr) != 6:
        raise ValueError("transition_hr must have six entries, one per transition")
    hr = dict(zip(FOUR_STATE_MODEL.transitions, (float(h) for h in transition_hr)))
    if any(h < 0 for h in hr.values()):
        raise ValueError("transition hazard ratios must be non-negative")
    rng = _as_rng(seed)
    tables = {state: _ExitTable(state, hazards, hr) for state in (1, 2, 3)}
    if not tables[1].grid.size:
        raise SimulationError("source hazards carry no events out of the "
                              "initial state")

    records = []
    for i in range(n):
        state, now = 1, 0.0
        response = progression = death = None
        censor = None
        while death is None and censor is None:
            time, dest = tables[state].sample_exit(now, rng)
            if dest is None:
                censor = time
            elif dest == 2:
                response, state, now = time, 2, time
            elif dest == 3:
                progression, state, now = time, 3, time
            else:
                death = time
        last_contact = death if death is not None else censor
        records.append(PatientRecord(f"{id_prefix}{i:05d}", arm, response,
                                     progression, death, last_contact))
    return records


@dataclass(frozen=True)
class OCResult:
    """Operating characteristics of the gating rule over replicates.

    ``false_rates`` holds, per target, the false-negative rate (fraction of
    ratios at or above the target) when the source was the experimental arm,
    and the false-positive rate (fraction strictly below) when the source
    was the control arm.
    """

    mode: str
    hrs: np.ndarray  # length n_replicates, NaN where the replicate failed
    targets: tuple[float, ...]
    fraction_below: tuple[float, ...]
    false_rates: tuple[float, ...]
    n_failed: int
    failures: tuple[tuple[int, str], ...]

    @property
    def mean_hr(self) -> float:
        return float(np.nanmean(self.hrs))

    def replicate_rows(self) -> list[dict]:
        return [{"replicate": r,
                 "hr": "" if np.isnan(hr) else float(hr),
                 "converged": int(not np.isnan(hr))}
                for r, hr in enumerate(self.hrs.tolist())]


_REPLICATE_ERRORS = (FitError, PredictionError, SimulationError, ValueError,
                     ZeroDivisionError, np.linalg.LinAlgError)


def _run_replicates(one_replicate, n_replicates: int, n_workers: int):
    def guarded(r: int):
        try:
            return one_replicate(r), None
        except _REPLICATE_ERRORS as exc:
            return None, f"{type(exc).__name__}: {exc}"

    if n_workers <= 1:
        return [guarded(r) for r in range(n_replicates)]
    with ThreadPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(guarded, range(n_replicates)))


def _check_failures(failures, n_replicates):
    if len(failures) > MAX_FAILURE_FRACTION * n_replicates:
        sample = "; ".join(f"replicate {r}: {msg}" for r, msg in failures[:5])
        raise SimulationError(
            f"{len(failures)} of {n_replicates} replicates failed "
            f"(> {MAX_FAILURE_FRACTION:.0%}): {sample}")


def _estimate_replicate_hr(sample, control_rows, pp_scenario) -> float:
    rows = control_rows + to_transition_table(sample)
    fit = fit_multistate(rows, scenario=pp_scenario)
    if not fit.all_usable:
        bad = [format_transition(t) for t, f in fit.fits.items()
               if f is not None and not f.usable]
        raise FitError(f"transition fit failed: {', '.join(bad)}")
    s_experimental = predict_sos(fit, arm=1)
    s_control = predict_sos(fit, arm=0)
    return hazard_ratio_estimate(s_experimental, s_control)


def run_oc_study(control: Sequence[PatientRecord],
                 experimental_source: Sequence[PatientRecord] | None,
                 config: ScenarioConfig,
                 n_workers: int = 1) -> OCResult:
    """Simulate early-phase trials against a fixed control arm.

    With ``experimental_source`` given, replicates are sampled from it and
    the per-target rates are false-negative rates; with ``None`` the
    replicates are sampled from the control arm itself (no-effect scenario)
    and the rates are false-positive rates. Failed replicates are excluded
    and counted; more than 5% failures aborts the study.
    """
    if any(r.arm != 0 for r in control):
        raise ValueError("control cohort must be labeled arm 0")
    control_rows = to_transition_table(control)
    source = control if experimental_source is None else experimental_source
    mode = "false_positive" if experimental_source is None else "false_negative"

    def one_replicate(r: int) -> float:
        rng = replicate_rng(config.master_seed, r)
        sample = bootstrap_arm(source, config.n_patients, rng, arm=1,
                               id_prefix=f"r{r}p")
        sample = censor_post_progression(sample, config.censor_policy)
        sample = apply_trial_timeline(sample, config.accrual_days,
                                      config.analysis_after_lpi_days, rng)
        return _estimate_replicate_hr(sample, control_rows, config.pp_scenario)

    outcomes = _run_replicates(one_replicate, config.n_replicates, n_workers)
    hrs = np.full(config.n_replicates, np.nan)
    failures = []
    for r, (hr, err) in enumerate(outcomes):
        if err is None:
            hrs[r] = hr
        else:
            failures.append((r, err))
    _check_failures(failures, config.n_replicates)

    ok = hrs[~np.isnan(hrs)]
    rates = evaluate_decision_rule(ok, config.hr_targets)
    fraction_below = tuple(t.fraction_below for t in rates)
    false_rates = tuple(t.fraction_below if mode == "false_positive"
                        else t.fraction_above for t in rates)
    return OCResult(mode=mode, hrs=hrs, targets=tuple(config.hr_targets),
                    fraction_below=fraction_below, false_rates=false_rates,
                    n_failed=len(failures), failures=tuple(failures))


@dataclass(frozen=True)
class CutTimeResult:
    """Mean OS hazard ratio and percentile band per cut time."""

    cut_times: tuple[float, ...]
    hrs: np.ndarray  # shape (n_cuts, n_replicates), NaN where failed
    mean_hr: tuple[float, ...]
    ci_lo: tuple[float, ...]
    ci_hi: tuple[float, ...]
    n_failed: tuple[int, ...]


def control_arm_hazards(control: Sequence[PatientRecord]) -> dict[Transition, StepCurve]:
    """Nelson-Aalen cumulative hazards of each transition in the control arm."""
    rows = to_transition_table(control)
    groups: dict[Transition, list] = {t: [] for t in FOUR_STATE_MODEL.transitions}
    for row in rows:
        groups[row.transition].append(row)
    return {t: nelson_aalen(groups[t]) for t in FOUR_STATE_MODEL.transitions}


def cut_time_sweep(control: Sequence[PatientRecord],
                   transition_hr: Sequence[float],
                   config: ScenarioConfig,
                   cut_times: Sequence[float] = DEFAULT_CUT_TIMES,
                   n_workers: int = 1) -> CutTimeResult:
    """OS hazard ratio as a function of the post-progression cut time.

    Experimental cohorts are simulated from the control arm's cumulative
    hazards under the hypothesized per-transition hazard ratios; the same
    simulated cohort (and the same entry offsets) is reused across cut
    times, so the sweep isolates the effect of the cut itself. Fitting uses
    the proportional post-progression scenario.
    """
    if any(r.arm != 0 for r in control):
        raise ValueError("control cohort must be labeled arm 0")
    cut_times = tuple(float(c) for c in cut_times)
    if any(c <= 0 for c in cut_times):
        raise ValueError("cut times must be strictly positive")
    control_rows = to_transition_table(control)
    hazards = control_arm_hazards(control)

    def one_replicate(r: int) -> list[float | None]:
        rng = replicate_rng(config.master_seed, r)
        cohort = simulate_from_hazards(hazards, transition_hr,
                                       config.n_patients, rng, arm=1,
                                       id_prefix=f"r{r}p")
        offsets = rng.uniform(0.0, config.accrual_days, size=len(cohort))
        horizon = config.accrual_days + config.analysis_after_lpi_days
        out: list[float | None] = []
        for cut in cut_times:
            trimmed = censor_post_progression(cohort, CensorPolicy.cut_time(cut))
            trimmed = [administratively_censor(rec, horizon - off)
                       for rec, off in zip(trimmed, offsets)]
            try:
                out.append(_estimate_replicate_hr(trimmed, control_rows,
                                                  "proportional_pp"))
            except _REPLICATE_ERRORS:
                out.append(None)
        return out

    outcomes = _run_replicates(one_replicate, config.n_replicates, n_workers)
    hrs = np.full((len(cut_times), config.n_replicates), np.nan)
    failures = []
    for r, (values, err) in enumerate(outcomes):
        if err is not None:
            failures.append((r, err))
            continue
        for c, value in enumerate(values):
            if value is not None:
                hrs[c, r] = value
    _check_failures(failures, config.n_replicates)
    worst_cut_failures = int(np.isnan(hrs).sum(axis=1).max())
    if worst_cut_failures > MAX_FAILURE_FRACTION * config.n_replicates:
        raise SimulationError(
            f"{worst_cut_failures} of {config.n_replicates} replicates failed "
            f"at some cut time (> {MAX_FAILURE_FRACTION:.0%})")

    mean_hr, ci_lo, ci_hi, n_failed = [], [], [], []
    for c in range(len(cut_times)):
        values = hrs[c][~np.isnan(hrs[c])]
        mean_hr.append(float(values.mean()))
        ci_lo.append(float(np.percentile(values, 2.5)))
        ci_hi.append(float(np.percentile(values, 97.5)))
        n_failed.append(int(np.isnan(hrs[c]).sum()))
    return CutTimeResult(cut_times=cut_times, hrs=hrs,
                         mean_hr=tuple(mean_hr), ci_lo=tuple(ci_lo),
                         ci_hi=tuple(ci_hi), n_failed=tuple(n_failed))
