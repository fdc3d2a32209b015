"""Patient-level data: parsing, validation and timeline operators.

Input records hold one subject's event times (response, progression, death)
in days since study entry, plus the last-contact time. Records are expanded
into the long risk-set format used by the estimation routines: one row per
(subject, possible transition) with an entry time, exit time and event flag.

Censoring operators implement the follow-up restrictions used when a mature
trial arm has to mimic an early-phase trial: dropping post-progression death
information, cutting post-progression follow-up at a fixed day, and applying
an accrual/analysis-time window.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .model import FOUR_STATE_MODEL, StateModel, Transition

CSV_COLUMNS = (
    "patient_id",
    "arm",
    "response_time",
    "progression_time",
    "death_time",
    "last_contact_time",
)

TRANSITION_CSV_COLUMNS = ("patient_id", "from", "to", "tstart", "tstop", "status", "arm")


class CohortValidationError(ValueError):
    """Raised when patient records violate the input contract.

    ``errors`` is a list of (row_number, message) pairs; row numbers count
    data rows starting at 1 (the header is row 0).
    """

    def __init__(self, errors: list[tuple[int, str]]):
        self.errors = errors
        lines = "; ".join(f"row {row}: {msg}" for row, msg in errors)
        super().__init__(lines)


@dataclass(frozen=True)
class PatientRecord:
    """One subject's observed event timeline, in days since study entry."""

    patient_id: str
    arm: int
    response_time: float | None
    progression_time: float | None
    death_time: float | None
    last_contact_time: float

    def event_times(self) -> list[float]:
        return [t for t in (self.response_time, self.progression_time, self.death_time)
                if t is not None]


@dataclass(frozen=True)
class TransitionRow:
    """One (subject, possible transition) risk interval in long format."""

    patient_id: str
    transition: Transition
    tstart: float
    tstop: float
    status: int
    covariates: tuple[float, ...]

    @property
    def arm(self) -> int:
        return int(self.covariates[0])


@dataclass(frozen=True)
class CensorPolicy:
    """Post-progression censoring rule.

    kinds:
      ``at_pd_plus_1``      post-progression deaths become censorings one day
                            after the progression date.
      ``cut_time``          post-progression follow-up is cut at day ``days``;
                            subjects progressing at or after the cut are
                            censored one day after progression.
      ``pp_after_day``      post-progression deaths later than day ``days``
                            are censored at max(days, progression + 1).
      ``analysis_time``     plain administrative censoring of everything at
                            day ``days``.
    """

    kind: str
    days: float | None = None
    applies_to_arm: str = "experimental"

    _KINDS = ("at_pd_plus_1", "cut_time", "pp_after_day", "analysis_time")

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise ValueError(f"unknown censor policy {self.kind!r}")
        if self.kind == "at_pd_plus_1":
            if self.days is not None:
                raise ValueError("at_pd_plus_1 takes no day parameter")
        elif self.days is None or self.days <= 0:
            raise ValueError(f"{self.kind} requires a strictly positive day")
        if self.applies_to_arm not in ("experimental", "both"):
            raise ValueError("applies_to_arm must be 'experimental' or 'both'")

    @classmethod
    def at_pd_plus_1(cls, applies_to_arm: str = "experimental") -> "CensorPolicy":
        return cls("at_pd_plus_1", None, applies_to_arm)

    @classmethod
    def cut_time(cls, days: float, applies_to_arm: str = "experimental") -> "CensorPolicy":
        return cls("cut_time", days, applies_to_arm)

    @classmethod
    def pp_after_day(cls, days: float, applies_to_arm: str = "experimental") -> "CensorPolicy":
        return cls("pp_after_day", days, applies_to_arm)


def _parse_time(raw: str, column: str, row: int,
                errors: list[tuple[int, str]]) -> float | None:
    raw = raw.strip()
    if raw == "":
        return None
    try:
        value = float(raw)
    except ValueError:
        errors.append((row, f"non-numeric {column} {raw!r}"))
        return None
    if not np.isfinite(value) or value <= 0:
        errors.append((row, f"{column} must be a positive number, got {raw!r}"))
        return None
    return value


def validate_record(record: PatientRecord, row: int,
                    errors: list[tuple[int, str]]) -> None:
    """Append invariant violations of a single record to ``errors``."""
    resp, pd_, death = (record.response_time, record.progression_time,
                        record.death_time)
    lc = record.last_contact_time
    if record.arm not in (0, 1):
        errors.append((row, f"arm must be 0 or 1, got {record.arm}"))
    if resp is not None and pd_ is not None and resp >= pd_:
        errors.append((row, "response_time ≥ progression_time"))
    if death is not None:
        for name, t in (("response_time", resp), ("progression_time", pd_)):
            if t is not None and t >= death:
                errors.append((row, f"{name} ≥ death_time"))
    present = record.event_times()
    if any(t > lc for t in present):
        errors.append((row, "last_contact_time earlier than an event time"))
    if len(set(present)) != len(present):
        errors.append((row, "tied event times within one patient"))


def parse_and_validate(source: str | io.TextIOBase) -> list[PatientRecord]:
    """Read the patient CSV and return validated records in input order.

    The header must match the documented schema exactly. All violations are
    collected and raised together as a :class:`CohortValidationError`.
    """
    if isinstance(source, str):
        source = io.StringIO(source)
    reader = csv.reader(source)
    try:
        header = next(reader)
    except StopIteration:
        raise CohortValidationError([(0, "empty input")]) from None
    if tuple(h.strip() for h in header) != CSV_COLUMNS:
        raise CohortValidationError(
            [(0, f"malformed header {header!r}, expected {','.join(CSV_COLUMNS)}")])

    errors: list[tuple[int, str]] = []
    records: list[PatientRecord] = []
    seen: set[str] = set()
    for row, fields in enumerate(reader, start=1):
        if not fields or all(f.strip() == "" for f in fields):
            continue
        if len(fields) != len(CSV_COLUMNS):
            errors.append((row, f"expected {len(CSV_COLUMNS)} fields, got {len(fields)}"))
            continue
        pid = fields[0].strip()
        if not pid:
            errors.append((row, "empty patient_id"))
            continue
        if pid in seen:
            errors.append((row, f"duplicate patient_id {pid!r}"))
            continue
        seen.add(pid)
        try:
            arm = int(fields[1])
        except ValueError:
            errors.append((row, f"non-numeric arm {fields[1]!r}"))
            continue
        resp = _parse_time(fields[2], "response_time", row, errors)
        pd_ = _parse_time(fields[3], "progression_time", row, errors)
        death = _parse_time(fields[4], "death_time", row, errors)
        lc = _parse_time(fields[5], "last_contact_time", row, errors)
        if lc is None:
            errors.append((row, "last_contact_time is required"))
            continue
        record = PatientRecord(pid, arm, resp, pd_, death, lc)
        validate_record(record, row, errors)
        records.append(record)
    if errors:
        raise CohortValidationError(errors)
    return records


def _sojourns(record: PatientRecord) -> list[tuple[int, float, float, int | None]]:
    """(state, entry, exit, next_state-or-None) segments of one patient path."""
    resp, pd_, death = (record.response_time, record.progression_time,
                        record.death_time)
    lc = record.last_contact_time
    path: list[tuple[int, float]] = [(1, 0.0)]
    if resp is not None:
        path.append((2, resp))
    if pd_ is not None:
        path.append((3, pd_))
    if death is not None:
        path.append((4, death))
    segments = []
    for (state, entry), (nxt, exit_) in zip(path, path[1:]):
        segments.append((state, entry, exit_, nxt))
    final_state, final_entry = path[-1]
    if final_state != 4 and lc > final_entry:
        segments.append((final_state, final_entry, lc, None))
    return segments


def to_transition_table(cohort: Iterable[PatientRecord],
                        model: StateModel = FOUR_STATE_MODEL) -> list[TransitionRow]:
    """Expand patient records into one row per (sojourn, possible transition).

    A subject occupying state ``i`` on (u, v] yields one row per out-transition
    of ``i`` with ``tstart=u`` and ``tstop=v``; the realized transition (if the
    sojourn ended in an event) carries status 1. A sojourn of zero length (an
    event at the last-contact time) yields no rows.
    """
    rows: list[TransitionRow] = []
    for record in cohort:
        covariates = (float(record.arm),)
        for state, entry, exit_, next_state in _sojourns(record):
            for transition in model.exits(state):
                status = int(next_state is not None and transition[1] == next_state)
                rows.append(TransitionRow(record.patient_id, transition,
                                          entry, exit_, status, covariates))
    return rows


def _censor_record_post_pd(record: PatientRecord, policy: CensorPolicy) -> PatientRecord:
    pd_ = record.progression_time
    death = record.death_time
    if policy.kind == "analysis_time":
        return administratively_censor(record, policy.days)
    if pd_ is None:
        return record

    if policy.kind == "at_pd_plus_1":
        if death is not None and death > pd_:
            return replace(record, death_time=None, last_contact_time=pd_ + 1.0)
        return record

    if policy.kind == "pp_after_day":
        bound = max(policy.days, pd_ + 1.0)
        if death is not None and death > pd_ and death > bound:
            return replace(record, death_time=None, last_contact_time=bound)
        return record

    # cut_time: progressors before the cut keep post-PD follow-up up to the
    # cut; progressors at/after the cut are censored one day after PD.
    cut = policy.days
    bound = cut if pd_ < cut else pd_ + 1.0
    if death is not None and death > pd_:
        if death > bound:
            return replace(record, death_time=None, last_contact_time=bound)
        return record
    if record.last_contact_time > bound:
        return replace(record, last_contact_time=bound)
    return record


def censor_post_progression(cohort: Iterable[PatientRecord],
                            policy: CensorPolicy) -> list[PatientRecord]:
    """Apply a post-progression censoring policy to the matching arm.

    Only follow-up information after the progression date is touched;
    response and progression times are never modified.
    """
    out = []
    for record in cohort:
        if policy.applies_to_arm == "experimental" and record.arm != 1:
            out.append(record)
        else:
            out.append(_censor_record_post_pd(record, policy))
    return out


def administratively_censor(record: PatientRecord, bound: float) -> PatientRecord:
    """Truncate a record at follow-up time ``bound`` (days since entry)."""
    if bound >= record.last_contact_time and not (
            record.death_time is not None and record.death_time > bound):
        return record

    def keep(t: float | None) -> float | None:
        return t if t is not None and t <= bound else None

    death = keep(record.death_time)
    lc = death if death is not None else min(record.last_contact_time, bound)
    return replace(record,
                   response_time=keep(record.response_time),
                   progression_time=keep(record.progression_time),
                   death_time=death,
                   last_contact_time=lc)


def apply_trial_timeline(cohort: Sequence[PatientRecord], accrual_days: float,
                         analysis_after_lpi_days: float,
                         seed: int | np.random.Generator) -> list[PatientRecord]:
    """Impose uniform staggered entry and a fixed analysis time.

    Each subject gets an entry offset drawn uniformly on [0, accrual_days];
    the analysis happens ``analysis_after_lpi_days`` after the end of accrual,
    so a subject entering at offset ``e`` is observed for at most
    ``accrual_days + analysis_after_lpi_days - e`` days.
    """
    if accrual_days < 0:
        raise ValueError("accrual_days must be non-negative")
    rng = as_rng(seed)
    offsets = rng.uniform(0.0, accrual_days, size=len(cohort))
    horizon = accrual_days + analysis_after_lpi_days
    return [administratively_censor(record, horizon - offset)
            for record, offset in zip(cohort, offsets)]


def as_rng(seed: int | np.random.Generator) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def overall_survival_data(cohort: Iterable[PatientRecord],
                          arm: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """(time, status) pairs for overall survival, optionally filtered by arm."""
    times, status = [], []
    for record in cohort:
        if arm is not None and record.arm != arm:
            continue
        if record.death_time is not None:
            times.append(record.death_time)
            status.append(1)
        else:
            times.append(record.last_contact_time)
            status.append(0)
    return np.asarray(times, dtype=float), np.asarray(status, dtype=int)


def write_patient_csv(cohort: Iterable[PatientRecord], stream: io.TextIOBase) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in cohort:
        writer.writerow([
            r.patient_id,
            r.arm,
            "" if r.response_time is None else repr(float(r.response_time)),
            "" if r.progression_time is None else repr(float(r.progression_time)),
            "" if r.death_time is None else repr(float(r.death_time)),
            repr(float(r.last_contact_time)),
        ])


def write_transition_csv(rows: Iterable[TransitionRow], stream: io.TextIOBase) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(TRANSITION_CSV_COLUMNS)
    for row in rows:
        writer.writerow([row.patient_id, row.transition[0], row.transition[1],
                         repr(float(row.tstart)), repr(float(row.tstop)),
                         row.status, row.arm])
