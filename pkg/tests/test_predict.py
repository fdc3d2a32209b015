import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mstrial.curves import StepCurve
from mstrial.estimate import fit_multistate, kaplan_meier
from mstrial.ingest import overall_survival_data, to_transition_table
from mstrial.model import TRANSITIONS
from mstrial.predict import (PredictionError, aalen_johansen,
                             aalen_johansen_from_hazards, path_probabilities,
                             path_probabilities_from_hazards, predict_sos,
                             predict_sos_from_hazards)
from synthetic import (borrowing_check_cohorts, constant_hazard_cohort,
                       hazards_from_rates, matrix_exponential_sos,
                       nested_sum_paths, two_arm_cohort)

DENSE = np.linspace(0.001, 1.0, 1000)


class TestPathProbabilitiesClosedForms:
    def test_homogeneous_direct_path(self):
        # all three exits from the initial state at rate 0.1
        rates = {(1, 2): 0.1, (1, 3): 0.1, (1, 4): 0.1}
        hazards = hazards_from_rates(rates, DENSE)
        paths = path_probabilities_from_hazards(hazards, "exponential")
        for t in (0.3, 0.5, 1.0):
            expected = (0.1 / 0.3) * (1.0 - np.exp(-0.3 * t))
            assert paths.p_direct(t) == pytest.approx(expected, abs=2e-4)
        # remaining occupancy of the initial state is exp(-0.3t)
        total_moved = 3 * paths.p_direct(1.0)
        assert 1.0 - total_moved == pytest.approx(np.exp(-0.3), abs=6e-4)

    def test_two_stage_erlang_path(self):
        lam = 0.8
        rates = {(1, 3): lam, (3, 4): lam}
        hazards = hazards_from_rates(rates, DENSE)
        paths = path_probabilities_from_hazards(hazards, "exponential")
        for t in (0.25, 0.5, 1.0):
            expected = 1.0 - np.exp(-lam * t) - lam * t * np.exp(-lam * t)
            assert paths.p_via_pd(t) == pytest.approx(expected, abs=2e-3)
            oracle = 1.0 - matrix_exponential_sos(rates, [t])[0] - 0.0
            # with only the 1->3->4 path open, P14 equals the path probability
            assert paths.p_via_pd(t) == pytest.approx(1.0 - matrix_exponential_sos(
                rates, [t])[0], abs=2e-3)
            assert oracle >= 0

    def test_zero_hazards_all_paths_zero(self):
        hazards = hazards_from_rates({}, np.array([1.0, 2.0]))
        paths = path_probabilities_from_hazards(hazards, "product_limit")
        for curve in paths.curves().values():
            assert np.all(curve.values == 0.0)
        sos = predict_sos_from_hazards(hazards)
        assert np.all(sos.values == 1.0)


@st.composite
def random_step_hazards(draw):
    m = draw(st.integers(min_value=1, max_value=8))
    grid = np.cumsum(np.array(draw(st.lists(
        st.floats(min_value=0.125, max_value=3.0),
        min_size=m, max_size=m))))
    increments = {}
    for t in TRANSITIONS:
        increments[t] = np.array(draw(st.lists(
            st.floats(min_value=0.0, max_value=0.15625),
            min_size=m, max_size=m)))
    return {t: StepCurve.from_increments(grid, increments[t])
            for t in TRANSITIONS}


@given(random_step_hazards())
@settings(max_examples=100, deadline=None)
def test_product_limit_path_sum_equals_aalen_johansen(hazards):
    paths = path_probabilities_from_hazards(hazards, "product_limit")
    aj = aalen_johansen_from_hazards(hazards)
    p14 = aj.probability(1, 4)
    assert np.allclose(paths.total().values, p14.values, rtol=0, atol=1e-12)


@given(random_step_hazards())
@settings(max_examples=40, deadline=None)
def test_forward_pass_matches_literal_nested_sums(hazards):
    grid = np.unique(np.concatenate([c.times for c in hazards.values()]))
    checkpoints = grid[:: max(1, grid.size // 5)]
    for convention in ("product_limit", "exponential"):
        paths = path_probabilities_from_hazards(hazards, convention)
        oracle = nested_sum_paths(hazards, convention, checkpoints)
        got = np.column_stack([paths.p_direct(checkpoints),
                               paths.p_via_pd(checkpoints),
                               paths.p_via_resp(checkpoints),
                               paths.p_via_resp_pd(checkpoints)])
        assert np.allclose(got, oracle, rtol=0, atol=1e-10), convention


class TestAalenJohansen:
    def test_identity_before_first_jump(self):
        hazards = hazards_from_rates({(1, 3): 0.2}, np.array([1.0]))
        aj = aalen_johansen_from_hazards(hazards)
        assert aj.probability(1, 1).initial_value == 1.0
        assert aj.probability(1, 3).initial_value == 0.0
        assert aj.probability(1, 1)(0.5) == 1.0

    def test_single_jump_product(self):
        hazards = {t: StepCurve(np.empty(0), np.empty(0)) for t in TRANSITIONS}
        hazards[(1, 3)] = StepCurve(np.array([1.0]), np.array([0.2]))
        aj = aalen_johansen_from_hazards(hazards)
        assert aj.probability(1, 3)(1.0) == pytest.approx(0.2)
        assert aj.probability(1, 1)(1.0) == pytest.approx(0.8)

    def test_rows_sum_to_one_and_death_absorbs(self):
        rng = np.random.default_rng(21)
        cohort = two_arm_cohort(rng, {(1, 2): 0.004, (1, 3): 0.005,
                                      (1, 4): 0.001, (2, 3): 0.004,
                                      (2, 4): 0.001, (3, 4): 0.004},
                                (1.0,) * 6, 200, 700.0)
        fit = fit_multistate(to_transition_table(cohort), "proportional_pp")
        for arm in (0, 1):
            aj = aalen_johansen(fit, arm)
            sums = aj.matrices.sum(axis=2)
            assert np.allclose(sums, 1.0, atol=1e-10)
            assert np.all(aj.matrices >= -1e-12)
            assert np.all(aj.matrices[:, 3, 3] == 1.0)

    def test_homogeneous_matches_matrix_exponential(self):
        rates = {(1, 2): 0.10, (1, 3): 0.12, (1, 4): 0.03,
                 (2, 3): 0.08, (2, 4): 0.02, (3, 4): 0.15}
        rng = np.random.default_rng(4321)
        cohort = constant_hazard_cohort(rng, rates, 20000, 12.0)
        table = to_transition_table(cohort)
        groups = {t: [r for r in table if r.transition == t] for t in TRANSITIONS}
        from mstrial.estimate import nelson_aalen
        hazards = {t: nelson_aalen(groups[t]) for t in TRANSITIONS}
        aj = aalen_johansen_from_hazards(hazards)
        check_times = np.linspace(0.5, 9.0, 30)
        truth = 1.0 - matrix_exponential_sos(rates, check_times)
        got = aj.probability(1, 4)(check_times)
        assert np.max(np.abs(got - truth)) < 0.01


class TestPredictSos:
    def test_sos_equals_one_minus_aj_p14(self):
        rng = np.random.default_rng(77)
        cohort = two_arm_cohort(rng, {(1, 2): 0.003, (1, 3): 0.005,
                                      (1, 4): 0.001, (2, 3): 0.003,
                                      (2, 4): 0.001, (3, 4): 0.005},
                                (1.0, 0.7, 1.0, 0.8, 1.0, 0.9), 150, 800.0)
        fit = fit_multistate(to_transition_table(cohort), "proportional_pp")
        for arm in (0, 1):
            sos = predict_sos(fit, arm, "product_limit")
            aj = aalen_johansen(fit, arm)
            assert np.allclose(sos.values, 1.0 - aj.probability(1, 4).values,
                               rtol=0, atol=1e-10)

    def test_sos_non_increasing_from_one(self):
        rng = np.random.default_rng(78)
        cohort = constant_hazard_cohort(rng, {(1, 2): 0.004, (1, 3): 0.004,
                                              (1, 4): 0.001, (2, 3): 0.004,
                                              (2, 4): 0.001, (3, 4): 0.003},
                                        300, 900.0)
        table = to_transition_table(cohort)
        fit = fit_multistate(table, "shared_pp")
        sos = predict_sos(fit, 0)
        assert sos.initial_value == 1.0
        assert np.all(np.diff(np.concatenate(([1.0], sos.values))) <= 1e-15)
        assert sos.times[-1] == fit.horizon

    def test_conventions_close_on_small_increments(self):
        rng = np.random.default_rng(79)
        cohort = constant_hazard_cohort(rng, {(1, 2): 0.004, (1, 3): 0.004,
                                              (1, 4): 0.001, (2, 3): 0.004,
                                              (2, 4): 0.001, (3, 4): 0.003},
                                        1500, 700.0)
        fit = fit_multistate(to_transition_table(cohort), "shared_pp")
        hazards = fit.cumulative_hazards(0)
        # keep only the window where every hazard increment stays below 0.05
        cutoff = min((float(c.times[np.argmax(c.increments() >= 0.05)])
                      for c in hazards.values()
                      if np.any(c.increments() >= 0.05)), default=np.inf)
        hazards = {t: c.restricted(cutoff - 1e-9) for t, c in hazards.items()}
        assert all(np.all(c.increments() < 0.05) for c in hazards.values())
        pl = predict_sos_from_hazards(hazards, "product_limit")
        ex = predict_sos_from_hazards(hazards, "exponential")
        assert np.max(np.abs(pl.values - ex.values)) < 0.02

    def test_monotone_in_post_progression_hazard(self):
        rates = {(1, 2): 0.1, (1, 3): 0.15, (1, 4): 0.02,
                 (2, 3): 0.1, (2, 4): 0.02, (3, 4): 0.2}
        grid = np.linspace(0.05, 5.0, 100)
        hazards = hazards_from_rates(rates, grid)
        for convention in ("product_limit", "exponential"):
            base = predict_sos_from_hazards(hazards, convention)
            for factor in (1.3, 2.0, 4.0):
                scaled = dict(hazards)
                scaled[(3, 4)] = hazards[(3, 4)].scaled(factor)
                bumped = predict_sos_from_hazards(scaled, convention)
                assert np.all(bumped.values <= base.values + 1e-12), convention

    def test_agreement_with_km_on_null_cohort(self):
        rng = np.random.default_rng(80)
        cohort = constant_hazard_cohort(rng, {(1, 2): 0.004, (1, 3): 0.005,
                                              (1, 4): 0.001, (2, 3): 0.004,
                                              (2, 4): 0.001, (3, 4): 0.004},
                                        500, 800.0)
        fit = fit_multistate(to_transition_table(cohort), "shared_pp")
        sos = predict_sos(fit, 0)
        times, status = overall_survival_data(cohort)
        km = kaplan_meier(times, status)
        t_max = times.max()
        check = np.linspace(1.0, 0.8 * t_max, 200)
        assert np.max(np.abs(sos(check) - km(check))) < 0.05

    def test_borrowing_check_sup_norm(self):
        rng = np.random.default_rng(81)
        control, censored_experimental = borrowing_check_cohorts(rng)
        pooled = to_transition_table(control + censored_experimental)
        fit = fit_multistate(pooled, scenario="shared_pp")
        sos = predict_sos(fit, 1)
        without = [r for r in pooled
                   if not (r.transition == (3, 4) and r.arm == 1)]
        fit2 = fit_multistate(without, scenario="shared_pp")
        sos2 = predict_sos(fit2, 1)
        grid = np.unique(np.concatenate([sos.times, sos2.times]))
        assert np.max(np.abs(sos(grid) - sos2(grid))) < 1e-6

    def test_product_limit_rejects_increment_above_one(self):
        hazards = {t: StepCurve(np.empty(0), np.empty(0)) for t in TRANSITIONS}
        hazards[(3, 4)] = StepCurve(np.array([1.0]), np.array([1.2]))
        hazards[(1, 3)] = StepCurve(np.array([0.5]), np.array([0.4]))
        with pytest.raises(PredictionError, match="exceeds 1"):
            path_probabilities_from_hazards(hazards, "product_limit")
        # the exponential convention tolerates the same input
        path_probabilities_from_hazards(hazards, "exponential")

    def test_paths_per_arm_from_fit(self):
        rng = np.random.default_rng(82)
        cohort = two_arm_cohort(rng, {(1, 2): 0.003, (1, 3): 0.004,
                                      (1, 4): 0.001, (2, 3): 0.003,
                                      (2, 4): 0.001, (3, 4): 0.004},
                                (1.0,) * 6, 150, 700.0)
        fit = fit_multistate(to_transition_table(cohort), "shared_pp")
        paths = path_probabilities(fit, 1)
        total = paths.total()
        assert np.all(total.values <= 1.0 + 1e-12)
        for curve in paths.curves().values():
            assert np.all(np.diff(np.concatenate(([0.0], curve.values))) >= -1e-15)
