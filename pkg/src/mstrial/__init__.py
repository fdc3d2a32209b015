"""Multistate OS prediction and early-phase trial simulation."""

from .curves import StepCurve
from .decide import (DecisionOutcome, ExpRateFit, evaluate_decision_rule,
                     fit_exponential_rate, hazard_ratio_estimate)
from .estimate import (CoxFit, FitError, MultistateFit, PHTestResult, cox_fit,
                       fit_multistate, kaplan_meier, nelson_aalen, ph_test,
                       predict_cumulative_hazard)
from .ingest import (CensorPolicy, CohortValidationError, PatientRecord,
                     TransitionRow, apply_trial_timeline,
                     censor_post_progression, parse_and_validate,
                     to_transition_table)
from .model import FOUR_STATE_MODEL, TRANSITIONS, StateModel
from .predict import (PathProbabilities, PredictionError,
                      TransitionProbabilityMatrix, aalen_johansen,
                      path_probabilities, predict_sos)
from .simulate import (CutTimeResult, OCResult, ScenarioConfig,
                       SimulationError, bootstrap_arm, cut_time_sweep,
                       run_oc_study, simulate_from_hazards)

__version__ = "0.1.0"

__all__ = [
    "CensorPolicy",
    "CohortValidationError",
    "CoxFit",
    "CutTimeResult",
    "DecisionOutcome",
    "ExpRateFit",
    "FOUR_STATE_MODEL",
    "FitError",
    "MultistateFit",
    "OCResult",
    "PHTestResult",
    "PathProbabilities",
    "PatientRecord",
    "PredictionError",
    "ScenarioConfig",
    "SimulationError",
    "StateModel",
    "StepCurve",
    "TRANSITIONS",
    "TransitionProbabilityMatrix",
    "TransitionRow",
    "aalen_johansen",
    "apply_trial_timeline",
    "bootstrap_arm",
    "censor_post_progression",
    "cox_fit",
    "cut_time_sweep",
    "evaluate_decision_rule",
    "fit_exponential_rate",
    "fit_multistate",
    "hazard_ratio_estimate",
    "kaplan_meier",
    "nelson_aalen",
    "parse_and_validate",
    "path_probabilities",
    "ph_test",
    "predict_cumulative_hazard",
    "predict_sos",
    "run_oc_study",
    "simulate_from_hazards",
    "to_transition_table",
]
