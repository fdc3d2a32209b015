"""Nonparametric and semiparametric estimation of transition hazards.

Provides Kaplan-Meier and Nelson-Aalen estimators on left-truncated,
right-censored risk intervals, a Cox proportional-hazards fitter (Newton-
Raphson on the partial likelihood, Breslow or Efron tie handling, Breslow
baseline), the scaled-Schoenfeld-residual proportionality test, and the
six-transition multistate fit with the three post-progression scenarios.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.stats import chi2, norm, rankdata

from .curves import StepCurve
from .ingest import TransitionRow
from .model import FOUR_STATE_MODEL, Transition, format_transition

SCENARIOS = ("shared_pp", "proportional_pp", "unrestricted")

MAX_ITERATIONS = 50
SCORE_TOL = 1e-9
LOGLIK_RELTOL = 1e-12
MONOTONE_BETA = 15.0


class FitError(RuntimeError):
    """Raised when an estimation routine cannot produce a usable result."""


def kaplan_meier(times, status) -> StepCurve:
    """Product-limit survival estimator for right-censored data.

    Tied event times are handled by a single simultaneous factor
    ``1 - d/Y``; the returned curve jumps only at event times.
    """
    times = np.asarray(times, dtype=float)
    status = np.asarray(status, dtype=int)
    if times.size == 0:
        raise ValueError("empty input")
    if times.shape != status.shape:
        raise ValueError("times and status must have equal length")
    if np.any(times <= 0):
        raise ValueError("times must be strictly positive")
    sorted_times = np.sort(times)
    event_times, d = np.unique(times[status == 1], return_counts=True)
    if event_times.size == 0:
        return StepCurve(np.empty(0), np.empty(0), 1.0)
    at_risk = times.size - np.searchsorted(sorted_times, event_times, side="left")
    survival = np.cumprod(1.0 - d / at_risk)
    return StepCurve(event_times, survival, 1.0)


class _RiskData:
    """Arrays and risk-set indexing for one transition's (tstart, tstop] rows.

    The sum over the risk set {i: tstart_i < t <= tstop_i} is computed as
    (sum over tstop_i >= t) - (sum over tstart_i >= t), each term a suffix sum
    in the corresponding sorted order.
    """

    def __init__(self, tstart, tstop, status, x):
        self.tstart = np.asarray(tstart, dtype=float)
        self.tstop = np.asarray(tstop, dtype=float)
        self.status = np.asarray(status, dtype=int)
        self.x = np.asarray(x, dtype=float)
        if self.x.ndim == 1:
            self.x = self.x[:, None]
        self.n, self.p = self.x.shape

        event = self.status == 1
        self.event_x = self.x[event]
        event_stop = self.tstop[event]
        self.event_times, self.tie_group, self.d = np.unique(
            event_stop, return_inverse=True, return_counts=True)
        self.m = self.event_times.size
        self.n_events = int(event.sum())
        self._event_mask = event

        self.stop_order = np.argsort(self.tstop, kind="stable")
        self.start_order = np.argsort(self.tstart, kind="stable")
        self._idx_stop = np.searchsorted(self.tstop[self.stop_order],
                                         self.event_times, side="left")
        self._idx_start = np.searchsorted(self.tstart[self.start_order],
                                          self.event_times, side="left")

    def risk_sums(self, values: np.ndarray) -> np.ndarray:
        """Column-wise risk-set sums of ``values`` (n, q) at each event time."""
        def suffix(order):
            v = values[order]
            out = np.zeros((self.n + 1, values.shape[1]))
            out[:-1] = np.cumsum(v[::-1], axis=0)[::-1]
            return out

        return (suffix(self.stop_order)[self._idx_stop]
                - suffix(self.start_order)[self._idx_start])

    def tie_sums(self, event_values: np.ndarray) -> np.ndarray:
        """Column-wise sums of event-row values within each tied event time."""
        out = np.zeros((self.m, event_values.shape[1]))
        np.add.at(out, self.tie_group, event_values)
        return out

    @staticmethod
    def from_rows(rows: Sequence[TransitionRow],
                  covariates: Sequence[int]) -> "_RiskData":
        tstart = [r.tstart for r in rows]
        tstop = [r.tstop for r in rows]
        status = [r.status for r in rows]
        x = [[r.covariates[j] for j in covariates] for r in rows]
        return _RiskData(tstart, tstop, status,
                         np.asarray(x, dtype=float).reshape(len(rows), len(covariates)))


def nelson_aalen(rows: Sequence[TransitionRow], arm: int | None = None) -> StepCurve:
    """Nelson-Aalen cumulative hazard from one transition's risk intervals.

    Left truncation is honored: a row is at risk on (tstart, tstop]. With
    ``arm`` given, only rows of that arm (first covariate) contribute.
    """
    if arm is not None:
        rows = [r for r in rows if r.covariates[0] == arm]
    if not rows:
        return StepCurve(np.empty(0), np.empty(0), 0.0)
    data = _RiskData.from_rows(rows, ())
    return _nelson_aalen_from(data)


def _nelson_aalen_from(data: _RiskData) -> StepCurve:
    if data.m == 0:
        return StepCurve(np.empty(0), np.empty(0), 0.0)
    at_risk = data.risk_sums(np.ones((data.n, 1)))[:, 0]
    if np.any(at_risk <= 0):
        raise FitError("empty risk set at an event time")
    return StepCurve.from_increments(data.event_times, data.d / at_risk)


@dataclass(frozen=True)
class CoxFit:
    """Per-transition Cox regression result with a Breslow baseline."""

    transition: Transition | None
    beta: np.ndarray
    covariance: np.ndarray
    baseline_cumhaz: StepCurve
    tie_method: str
    n_events: int
    converged: bool
    iterations: int
    loglik: float
    monotone: bool = False
    degenerate: bool = False
    error: str | None = None
    trace: tuple[tuple[int, float, float], ...] = ()
    data: "_RiskData | None" = field(default=None, repr=False, compare=False)

    @property
    def p(self) -> int:
        return int(self.beta.size)

    @property
    def usable(self) -> bool:
        return self.error is None and (self.converged or self.monotone
                                       or self.degenerate)

    def hazard_ratio(self, j: int = 0) -> float:
        return float(np.exp(self.beta[j]))

    def wald(self, j: int = 0) -> tuple[float, float, float]:
        """(ci_lo, ci_hi, p_value) for exp(beta_j), 95% Wald on the log scale."""
        se = float(np.sqrt(self.covariance[j, j]))
        lo = float(np.exp(self.beta[j] - 1.96 * se))
        hi = float(np.exp(self.beta[j] + 1.96 * se))
        if se == 0:
            return lo, hi, 1.0
        z = abs(self.beta[j]) / se
        return lo, hi, float(2.0 * norm.sf(z))


def degenerate_fit(transition: Transition | None, tie_method: str,
                   n_covariates: int = 0, error: str | None = None) -> CoxFit:
    """Zero-hazard placeholder for a transition without events."""
    return CoxFit(transition=transition,
                  beta=np.zeros(n_covariates),
                  covariance=np.zeros((n_covariates, n_covariates)),
                  baseline_cumhaz=StepCurve(np.empty(0), np.empty(0), 0.0),
                  tie_method=tie_method, n_events=0, converged=False,
                  iterations=0, loglik=0.0, degenerate=True, error=error)


class _PartialLikelihood:
    """Breslow/Efron partial log-likelihood with analytic derivatives."""

    def __init__(self, data: _RiskData, tie_method: str):
        if tie_method not in ("breslow", "efron"):
            raise ValueError(f"unknown tie method {tie_method!r}")
        self.data = data
        self.tie_method = tie_method
        d = data.d
        # one expanded row per event; `frac` implements the Efron correction
        # and is identically zero under Breslow
        self.rep = np.repeat(np.arange(data.m), d)
        within = np.arange(self.rep.size) - np.repeat(np.cumsum(d) - d, d)
        self.frac = within / d[self.rep] if tie_method == "efron" else None
        p = data.p
        self._tri = np.triu_indices(p)

    def _columns(self, w: np.ndarray) -> np.ndarray:
        """Stack [w, w*x_j, w*x_j*x_l (j<=l)] for one risk-sum pass."""
        x = self.data.x
        cols = [w[:, None]]
        if self.data.p:
            wx = w[:, None] * x
            cols.append(wx)
            cols.append(wx[:, self._tri[0]] * x[:, self._tri[1]])
        return np.concatenate(cols, axis=1)

    def _unpack(self, sums: np.ndarray):
        p = self.data.p
        s0 = sums[:, 0]
        s1 = sums[:, 1:1 + p]
        packed = sums[:, 1 + p:]
        s2 = np.zeros((sums.shape[0], p, p))
        s2[:, self._tri[0], self._tri[1]] = packed
        s2[:, self._tri[1], self._tri[0]] = packed
        return s0, s1, s2

    def loglik(self, beta: np.ndarray) -> float:
        return self._evaluate(beta, derivatives=False)[0]

    def _evaluate(self, beta: np.ndarray, derivatives: bool = True):
        data = self.data
        eta = data.x @ beta if data.p else np.zeros(data.n)
        w = np.exp(eta)
        cols = self._columns(w) if derivatives else w[:, None]
        sums = data.risk_sums(cols)
        if self.frac is not None:
            event_cols = cols[data._event_mask]
            tied = data.tie_sums(event_cols)
        if derivatives:
            s0, s1, s2 = self._unpack(sums)
            if self.frac is not None:
                t0, t1, t2 = self._unpack(tied)
        else:
            s0 = sums[:, 0]
            if self.frac is not None:
                t0 = tied[:, 0]

        rep, frac = self.rep, self.frac
        if frac is None:
            denom = s0[rep]
        else:
            denom = s0[rep] - frac * t0[rep]
        event_eta = float(eta[data._event_mask].sum())
        ll = event_eta - float(np.log(denom).sum())
        if not derivatives:
            return ll, None, None
        if frac is None:
            num1 = s1[rep]
            num2 = s2[rep]
        else:
            num1 = s1[rep] - frac[:, None] * t1[rep]
            num2 = s2[rep] - frac[:, None, None] * t2[rep]
        mean = num1 / denom[:, None]
        score = data.event_x.sum(axis=0) - mean.sum(axis=0)
        info = (np.einsum("e,epq->pq", 1.0 / denom, num2)
                - np.einsum("ep,eq->pq", mean, mean))
        return ll, score, info

    def breslow_baseline(self, beta: np.ndarray) -> StepCurve:
        data = self.data
        if data.m == 0:
            return StepCurve(np.empty(0), np.empty(0), 0.0)
        eta = data.x @ beta if data.p else np.zeros(data.n)
        s0 = data.risk_sums(np.exp(eta)[:, None])[:, 0]
        return StepCurve.from_increments(data.event_times, data.d / s0)


def cox_fit(rows: Sequence[TransitionRow],
            covariates: Sequence[int] = (0,),
            tie_method: str = "breslow",
            transition: Transition | None = None) -> CoxFit:
    """Maximize the Cox partial likelihood for one transition's rows.

    ``covariates`` selects components of each row's covariate vector; an
    empty selection fits the null model, whose Breslow baseline coincides
    with the Nelson-Aalen estimator. Newton-Raphson iterations use
    step-halving whenever a step would decrease the likelihood; monotone
    likelihood (a coefficient running off to +-infinity) is flagged once
    |beta| exceeds 15.
    """
    if not rows:
        raise FitError("no rows supplied")
    if transition is None:
        transitions = {r.transition for r in rows}
        if len(transitions) > 1:
            raise FitError(f"rows span several transitions: {sorted(transitions)}")
        transition = next(iter(transitions))
    data = _RiskData.from_rows(rows, covariates)
    if data.n_events == 0:
        raise FitError("no events observed")
    lik = _PartialLikelihood(data, tie_method)
    p = data.p

    beta = np.zeros(p)
    ll, score, info = lik._evaluate(beta)
    trace: list[tuple[int, float, float]] = []
    converged = p == 0
    iterations = 0
    for iterations in range(1, MAX_ITERATIONS + 1):
        if p == 0:
            iterations = 0
            break
        max_score = float(np.abs(score).max())
        trace.append((iterations - 1, ll, max_score))
        if max_score < SCORE_TOL:
            converged = True
            iterations -= 1
            break
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError:
            raise FitError("singular information matrix (collinear covariates "
                           "on the event risk sets)") from None
        new_beta = beta + step
        new_ll = lik.loglik(new_beta)
        halvings = 0
        while new_ll < ll - 1e-10 and halvings < 30:
            step = step / 2.0
            new_beta = beta + step
            new_ll = lik.loglik(new_beta)
            halvings += 1
        if new_ll < ll - 1e-10:
            # step-halving exhausted without improving the likelihood
            trace.append((iterations, new_ll, float(np.abs(score).max())))
            break
        beta = new_beta
        converged_now = abs(new_ll - ll) <= LOGLIK_RELTOL * max(1.0, abs(ll))
        ll, score, info = lik._evaluate(beta)
        if converged_now or float(np.abs(score).max()) < SCORE_TOL:
            converged = True
            break

    monotone = bool(p and np.any(np.abs(beta) > MONOTONE_BETA))
    if p:
        try:
            covariance = np.linalg.inv(info)
        except np.linalg.LinAlgError:
            covariance = np.linalg.pinv(info)
        covariance = (covariance + covariance.T) / 2.0
    else:
        covariance = np.zeros((0, 0))

    return CoxFit(transition=transition, beta=beta, covariance=covariance,
                  baseline_cumhaz=lik.breslow_baseline(beta),
                  tie_method=tie_method, n_events=data.n_events,
                  converged=converged, iterations=iterations, loglik=ll,
                  monotone=monotone,
                  trace=tuple(trace) if not converged else (),
                  data=data)


def predict_cumulative_hazard(fit: CoxFit, covariate_value: Sequence[float]) -> StepCurve:
    """Cumulative hazard at a covariate value: baseline scaled by exp(beta'z)."""
    if not fit.usable:
        raise FitError(f"fit did not converge: {fit.error or 'see trace'}")
    z = np.asarray(covariate_value, dtype=float).reshape(-1)
    if z.size != fit.p:
        raise ValueError(f"expected {fit.p} covariate values, got {z.size}")
    factor = float(np.exp(fit.beta @ z)) if fit.p else 1.0
    return fit.baseline_cumhaz.scaled(factor)


@dataclass(frozen=True)
class PHTestResult:
    """Proportional-hazards diagnostic from scaled Schoenfeld residuals."""

    statistics: np.ndarray
    dof: np.ndarray
    p_values: np.ndarray
    global_statistic: float
    global_dof: int
    global_p_value: float
    time_transform: str


def ph_test(fit: CoxFit, time_transform: str = "identity") -> PHTestResult:
    """Score test of zero slope of scaled Schoenfeld residuals over time.

    Regresses the scaled residuals on g(event time), where g is the identity,
    the complemented left-continuous Kaplan-Meier scale ("km"), or event-time
    ranks ("rank"). The per-covariate statistics are 1-df chi-squares; the
    global statistic has one degree of freedom per covariate.
    """
    if fit.data is None or fit.degenerate:
        raise FitError("fit carries no data to test")
    if not fit.converged and not fit.monotone:
        raise FitError("fit did not converge")
    if fit.p == 0:
        raise FitError("null model has no proportionality to test")
    data = fit.data
    if data.n_events < 2:
        raise FitError("insufficient events (need at least 2)")

    eta = data.x @ fit.beta
    w = np.exp(eta)
    cols = np.concatenate([w[:, None], w[:, None] * data.x], axis=1)
    sums = data.risk_sums(cols)
    risk_mean = sums[:, 1:] / sums[:, [0]]

    # one residual per event, ordered by event time; tied events share the
    # same risk-set mean (Breslow convention)
    order = np.argsort(data.tstop[data._event_mask], kind="stable")
    residuals = (data.event_x - risk_mean[data.tie_group])[order]
    event_times = data.tstop[data._event_mask][order]

    if time_transform == "identity":
        g = event_times.copy()
    elif time_transform == "rank":
        g = rankdata(event_times)
    elif time_transform == "km":
        km = kaplan_meier(data.tstop, data.status)
        padded = np.concatenate(([km.initial_value], km.values))
        g = 1.0 - padded[np.searchsorted(km.times, event_times, side="left")]
    else:
        raise ValueError(f"unknown time transform {time_transform!r}")

    xx = g - g.mean()
    ss = float(xx @ xx)
    if ss <= 0:
        raise FitError("singular residual covariance (all events tied in time)")
    d = data.n_events
    v = fit.covariance
    scaled = residuals @ v
    per_cov_num = d * (xx @ scaled) ** 2
    per_cov_den = np.diag(v) * ss
    with np.errstate(divide="ignore", invalid="ignore"):
        statistics = np.where(per_cov_den > 0, per_cov_num / per_cov_den, np.nan)
    weighted = residuals.T @ xx
    global_stat = float(d * (weighted @ v @ weighted) / ss)
    dof = np.ones(fit.p)
    return PHTestResult(
        statistics=statistics,
        dof=dof,
        p_values=chi2.sf(statistics, dof),
        global_statistic=global_stat,
        global_dof=fit.p,
        global_p_value=float(chi2.sf(global_stat, fit.p)),
        time_transform=time_transform,
    )


@dataclass(frozen=True)
class MultistateFit:
    """Six per-transition hazard models plus the post-progression scenario.

    Under ``shared_pp`` the progression-to-death transition is fitted without
    the treatment covariate (the two arms share one hazard); under
    ``proportional_pp`` it carries the treatment covariate like the other
    transitions; under ``unrestricted`` it is replaced by per-arm
    Nelson-Aalen curves.
    """

    scenario: str
    fits: Mapping[Transition, CoxFit | None]
    pp_arm_curves: Mapping[int, StepCurve] | None
    horizon: float
    tie_method: str = "breslow"
    pp_n_events: int | None = None

    def cumulative_hazard(self, transition: Transition, arm: int) -> StepCurve:
        if self.scenario == "unrestricted" and transition == (3, 4):
            return self.pp_arm_curves[arm]
        fit = self.fits[transition]
        if fit.error is not None:
            raise FitError(f"{format_transition(transition)}: {fit.error}")
        if fit.degenerate:
            return fit.baseline_cumhaz
        z = () if fit.p == 0 else (float(arm),)
        return predict_cumulative_hazard(fit, z)

    def cumulative_hazards(self, arm: int) -> dict[Transition, StepCurve]:
        return {t: self.cumulative_hazard(t, arm)
                for t in FOUR_STATE_MODEL.transitions}

    @property
    def all_usable(self) -> bool:
        return all(f is None or f.usable for f in self.fits.values())

    def hr_rows(self) -> list[dict]:
        """Per-transition hazard-ratio table rows for the fit report CSV."""
        out = []
        for transition in FOUR_STATE_MODEL.transitions:
            fit = self.fits[transition]
            row = {"transition": format_transition(transition),
                   "hr": "", "ci_lo": "", "ci_hi": "", "p_value": "",
                   "n_events": 0}
            if fit is None:
                row["n_events"] = self.pp_n_events or 0
            else:
                row["n_events"] = fit.n_events
                if fit.p and not fit.degenerate:
                    lo, hi, pval = fit.wald(0)
                    row.update(hr=fit.hazard_ratio(0), ci_lo=lo, ci_hi=hi,
                               p_value=pval)
            out.append(row)
        return out


def fit_multistate(table: Iterable[TransitionRow],
                   scenario: str = "shared_pp",
                   tie_method: str = "breslow") -> MultistateFit:
    """Fit all six transitions of the four-state model.

    Each transition gets its own baseline hazard. Transitions without events
    yield a flagged zero-hazard fit; errors in one transition do not abort
    the others.
    """
    if scenario not in SCENARIOS:
        raise ValueError(f"unknown scenario {scenario!r}, expected one of {SCENARIOS}")
    groups: dict[Transition, list[TransitionRow]] = {
        t: [] for t in FOUR_STATE_MODEL.transitions}
    horizon = 0.0
    for row in table:
        groups[row.transition].append(row)
        if row.tstop > horizon:
            horizon = row.tstop

    fits: dict[Transition, CoxFit | None] = {}
    pp_arm_curves = None
    pp_n_events = None
    for transition in FOUR_STATE_MODEL.transitions:
        rows = groups[transition]
        if transition == (3, 4) and scenario == "unrestricted":
            fits[transition] = None
            pp_arm_curves = {arm: nelson_aalen(rows, arm=arm) for arm in (0, 1)}
            pp_n_events = sum(r.status for r in rows)
            continue
        covariates = () if (transition == (3, 4) and scenario == "shared_pp") else (0,)
        try:
            fits[transition] = cox_fit(rows, covariates=covariates,
                                       tie_method=tie_method,
                                       transition=transition)
        except FitError as exc:
            n_events = sum(r.status for r in rows)
            if n_events == 0:
                fits[transition] = degenerate_fit(transition, tie_method,
                                                  len(covariates))
            else:
                fits[transition] = degenerate_fit(transition, tie_method,
                                                  len(covariates), error=str(exc))
    return MultistateFit(scenario=scenario, fits=fits,
                         pp_arm_curves=pp_arm_curves, horizon=horizon,
                         tie_method=tie_method, pp_n_events=pp_n_events)
