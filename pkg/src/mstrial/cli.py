"""Command-line front end.

Subcommands mirror the analysis workflows: ``validate`` (schema check and
optional long-format export), ``fit`` (six-transition hazard-ratio table),
``predict`` (per-arm OS curves plus Kaplan-Meier overlay data),
``simulate-oc`` (operating characteristics of the gating rule) and
``cut-time`` (hazard-ratio stability versus post-progression follow-up).

All outputs are plain CSV/JSON and deterministic for a fixed seed; errors
are emitted as one JSON record on stderr with exit codes 1 (usage),
2 (data validation) and 3 (fit/simulation failure).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import decide, predict, simulate
from .estimate import FitError, fit_multistate, kaplan_meier
from .ingest import (CensorPolicy, CohortValidationError, censor_post_progression,
                     overall_survival_data, parse_and_validate,
                     to_transition_table, write_transition_csv)
from .predict import PredictionError
from .simulate import PRESETS, ScenarioConfig, SimulationError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_FIT = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as stream:
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _error_record(kind: str, message: str, **extra) -> None:
    record = {"error": kind, "message": message}
    record.update(extra)
    print(json.dumps(record, sort_keys=True), file=sys.stderr)


def _parse_policy(text: str, arm: str) -> CensorPolicy:
    name, _, days = text.partition("=")
    try:
        days_value = float(days) if days else None
        if name == "at_pd_plus_1":
            return CensorPolicy.at_pd_plus_1(arm)
        return CensorPolicy(name, days_value, arm)
    except ValueError as exc:
        raise UsageError(f"bad --policy {text!r}: {exc}") from None


def build_parser() -> _Parser:
    parser = _Parser(prog="mstrial",
                     description="Multistate OS prediction and early-phase "
                                 "trial simulation")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_input(p):
        p.add_argument("input", nargs="?", help="patient CSV")
        p.add_argument("--input", dest="input_flag", help="patient CSV")

    def add_scenario_flags(p):
        p.add_argument("--config", help="JSON key-value scenario config file")
        p.add_argument("--preset", choices=sorted(PRESETS))
        p.add_argument("--n", type=int, default=None, help="patients per replicate")
        p.add_argument("--replicates", type=int, default=None)
        p.add_argument("--targets", type=float, nargs="+", default=None)
        p.add_argument("--accrual-days", type=float, default=None)
        p.add_argument("--analysis-after-days", type=float, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("validate", help="check a patient CSV")
    add_input(p)
    p.add_argument("--transitions-out", help="export the long-format "
                                             "transition table CSV")

    p = sub.add_parser("fit", help="fit the six transition hazards")
    add_input(p)
    p.add_argument("--out", help="fit report CSV (default: stdout)")
    p.add_argument("--scenario", choices=("shared_pp", "proportional_pp",
                                          "unrestricted"),
                   default="proportional_pp")

    p = sub.add_parser("predict", help="predict per-arm OS curves")
    add_input(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--scenario", choices=("shared_pp", "proportional_pp",
                                          "unrestricted"),
                   default="shared_pp")
    p.add_argument("--policy", action="append", default=[],
                   help="censoring policy, e.g. at_pd_plus_1 or cut_time=180; "
                        "repeatable, applied in order")
    p.add_argument("--policy-arm", choices=("experimental", "both"),
                   default="experimental")
    p.add_argument("--convention", choices=("product_limit", "exponential"),
                   default="product_limit")

    p = sub.add_parser("simulate-oc", help="operating characteristics study")
    add_input(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--mode", choices=("null", "effect"), default="null",
                   help="sample replicates from the control arm (null) or "
                        "from the experimental arm rows (effect)")
    p.add_argument("--scenario", choices=("shared_pp", "proportional_pp",
                                          "unrestricted"), default=None)
    p.add_argument("--policy", default=None,
                   help="censoring policy applied to each replicate")
    add_scenario_flags(p)

    p = sub.add_parser("cut-time", help="hazard-ratio stability sweep")
    add_input(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--hr", type=float, nargs=6, default=None,
                   metavar=("T1", "T2", "T3", "T4", "T5", "T6"),
                   help="hypothesized hazard ratio per transition "
                        "(order 1-2 1-3 1-4 2-3 2-4 3-4)")
    p.add_argument("--cut", type=float, nargs="+", default=None,
                   help="cut times in days")
    add_scenario_flags(p)
    return parser


def _load_cohort(args):
    path = args.input or getattr(args, "input_flag", None)
    if not path:
        raise UsageError("an input patient CSV is required")
    try:
        with open(path, "r", encoding="utf-8") as stream:
            return parse_and_validate(stream)
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from None


def _build_config(args, base: ScenarioConfig | None = None) -> ScenarioConfig:
    """Merge defaults, preset, config file and explicit flags, in that order."""
    values = dataclasses.asdict(base or ScenarioConfig())
    values["censor_policy"] = (base or ScenarioConfig()).censor_policy
    if args.preset:
        values.update(PRESETS[args.preset])
    if args.config:
        try:
            with open(args.config, "r", encoding="utf-8") as stream:
                loaded = json.load(stream)
        except OSError as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"malformed config {args.config}: {exc}") from None
        for key, value in loaded.items():
            if key == "censor_policy":
                values["censor_policy"] = _parse_policy(value, "experimental")
            elif key in values:
                values[key] = tuple(value) if isinstance(value, list) else value
            else:
                raise UsageError(f"unknown config key {key!r}")
    flag_map = {
        "n": "n_patients",
        "replicates": "n_replicates",
        "targets": "hr_targets",
        "accrual_days": "accrual_days",
        "analysis_after_days": "analysis_after_lpi_days",
        "seed": "master_seed",
    }
    for flag, key in flag_map.items():
        value = getattr(args, flag, None)
        if value is not None:
            values[key] = tuple(value) if isinstance(value, list) else value
    if getattr(args, "scenario", None):
        values["pp_scenario"] = args.scenario
    if getattr(args, "policy", None) and isinstance(args.policy, str):
        values["censor_policy"] = _parse_policy(args.policy, "experimental")
    if getattr(args, "hr", None):
        values["transition_hr"] = tuple(args.hr)
    try:
        return ScenarioConfig(**values)
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from None


def _cmd_validate(args) -> int:
    cohort = _load_cohort(args)
    arms = {0: 0, 1: 0}
    for record in cohort:
        arms[record.arm] = arms.get(record.arm, 0) + 1
    print(f"ok: {len(cohort)} patients "
          f"(control {arms.get(0, 0)}, experimental {arms.get(1, 0)})")
    if args.transitions_out:
        rows = to_transition_table(cohort)
        with open(args.transitions_out, "w", newline="") as stream:
            write_transition_csv(rows, stream)
        print(f"wrote {len(rows)} transition rows to {args.transitions_out}")
    return EXIT_OK


def _cmd_fit(args) -> int:
    cohort = _load_cohort(args)
    fit = fit_multistate(to_transition_table(cohort), scenario=args.scenario)
    header = ("transition", "hr", "ci_lo", "ci_hi", "p_value", "n_events")
    rows = [[row[k] for k in header] for row in fit.hr_rows()]
    if args.out:
        _write_csv(Path(args.out), header, rows)
    else:
        writer = csv.writer(sys.stdout, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    return EXIT_OK


def _cmd_predict(args) -> int:
    cohort = _load_cohort(args)
    for policy_text in args.policy:
        policy = _parse_policy(policy_text, args.policy_arm)
        cohort = censor_post_progression(cohort, policy)
    fit = fit_multistate(to_transition_table(cohort), scenario=args.scenario)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    overlay_rows = []
    for arm in (0, 1):
        paths = predict.path_probabilities(fit, arm, args.convention)
        s_os = 1.0 - paths.total().values
        header = ("time", "s_os", "p_direct", "p_via_pd", "p_via_resp",
                  "p_via_resp_pd")
        rows = [[0.0, 1.0, 0.0, 0.0, 0.0, 0.0]]
        for k, t in enumerate(paths.grid.tolist()):
            rows.append([t, s_os[k], paths.p_direct.values[k],
                         paths.p_via_pd.values[k], paths.p_via_resp.values[k],
                         paths.p_via_resp_pd.values[k]])
        _write_csv(out_dir / f"curves_arm{arm}.csv", header, rows)
        overlay_rows.extend(["ms", arm, t, s] for t, s in
                            zip([0.0] + paths.grid.tolist(),
                                [1.0] + s_os.tolist()))
        km_times, km_status = overall_survival_data(cohort, arm)
        if km_times.size:
            km = kaplan_meier(km_times, km_status)
            overlay_rows.extend(["km", arm, t, s] for t, s in
                                zip([0.0] + km.times.tolist(),
                                    [1.0] + km.values.tolist()))
    _write_csv(out_dir / "overlay.csv", ("series", "arm", "time", "value"),
               overlay_rows)
    print(f"wrote curves and overlay data to {out_dir}")
    return EXIT_OK


def _split_arms(cohort):
    control = [r for r in cohort if r.arm == 0]
    experimental = [r for r in cohort if r.arm == 1]
    if not control:
        raise CohortValidationError([(0, "no control (arm 0) records")])
    return control, experimental


def _cmd_simulate_oc(args) -> int:
    cohort = _load_cohort(args)
    control, experimental = _split_arms(cohort)
    config = _build_config(args)
    if args.mode == "effect" and not experimental:
        raise CohortValidationError(
            [(0, "effect mode requires experimental (arm 1) records")])
    source = experimental if args.mode == "effect" else None
    result = simulate.run_oc_study(control, source, config,
                                   n_workers=args.workers)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_csv(out_dir / "replicates.csv", ("replicate", "hr", "converged"),
               [[row["replicate"], row["hr"], row["converged"]]
                for row in result.replicate_rows()])
    _write_csv(out_dir / "oc_summary.csv", ("target", "rate", "mode"),
               [[t, r, result.mode]
                for t, r in zip(result.targets, result.false_rates)])
    report = {
        "hr": result.mean_hr,
        "mode": result.mode,
        "n_failed": result.n_failed,
        "targets": [
            {"target": t, "rate": r,
             "go": bool(decide.DecisionOutcome(result.mean_hr, t).go)}
            for t, r in zip(result.targets, result.false_rates)
        ],
    }
    with open(out_dir / "decision.json", "w", encoding="utf-8") as stream:
        json.dump(report, stream, sort_keys=True, indent=2)
        stream.write("\n")
    print(f"mean hr {result.mean_hr!r} over "
          f"{config.n_replicates - result.n_failed} replicates "
          f"({result.n_failed} failed); outputs in {out_dir}")
    return EXIT_OK


def _cmd_cut_time(args) -> int:
    cohort = _load_cohort(args)
    control, _ = _split_arms(cohort)
    base = ScenarioConfig(accrual_days=PRESETS["accrual12-fu6"]["accrual_days"],
                          analysis_after_lpi_days=PRESETS["accrual12-fu6"]
                          ["analysis_after_lpi_days"])
    config = _build_config(args, base=base)
    cut_times = tuple(args.cut) if args.cut else simulate.DEFAULT_CUT_TIMES
    result = simulate.cut_time_sweep(control, config.transition_hr, config,
                                     cut_times=cut_times,
                                     n_workers=args.workers)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_csv(out_dir / "cut_time.csv",
               ("cut_time", "mean_hr", "ci_lo", "ci_hi", "n_failed"),
               [[c, m, lo, hi, nf] for c, m, lo, hi, nf in
                zip(result.cut_times, result.mean_hr, result.ci_lo,
                    result.ci_hi, result.n_failed)])
    detail = []
    for c_idx, cut in enumerate(result.cut_times):
        for r in range(result.hrs.shape[1]):
            hr = result.hrs[c_idx, r]
            detail.append([r, cut, "" if np.isnan(hr) else float(hr),
                           int(not np.isnan(hr))])
    _write_csv(out_dir / "cut_replicates.csv",
               ("replicate", "cut_time", "hr", "converged"), detail)
    print(f"wrote cut-time sweep over {len(result.cut_times)} cuts to {out_dir}")
    return EXIT_OK


_COMMANDS = {
    "validate": _cmd_validate,
    "fit": _cmd_fit,
    "predict": _cmd_predict,
    "simulate-oc": _cmd_simulate_oc,
    "cut-time": _cmd_cut_time,
}


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        _error_record("usage", str(exc))
        return EXIT_USAGE
    except CohortValidationError as exc:
        rows = [{"row": row, "message": msg} for row, msg in exc.errors]
        _error_record("validation", str(exc), rows=rows)
        return EXIT_VALIDATION
    except (FitError, PredictionError, SimulationError) as exc:
        _error_record("fit", str(exc))
        return EXIT_FIT


def main(argv=None) -> None:
    sys.exit(run_cli(argv))


if __name__ == "__main__":
    main()
