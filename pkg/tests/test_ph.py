import numpy as np
import pytest

from mstrial.estimate import FitError, cox_fit, ph_test
from synthetic import make_rows


def exponential_rows(rng, n=150, hr=1.0, rate=0.1, censor=12.0):
    z = (rng.random(n) < 0.5).astype(float)
    times = rng.exponential(1.0 / (rate * np.where(z == 1, hr, 1.0)))
    status = (times <= censor).astype(int)
    times = np.minimum(times, censor)
    return make_rows([(0.0, t, s, zi) for t, s, zi in zip(times, status, z)])


def crossing_hazard_rows(rng, n=600):
    """Hazard ratio 2 before the control median, 0.5 after it."""
    z = (rng.random(n) < 0.5).astype(float)
    t0 = np.log(2) / 0.1
    t_control = rng.exponential(10.0, n)
    u = rng.random(n)
    h0 = 0.2 * t0
    t_treated = np.where(-np.log1p(-u) < h0,
                         -np.log1p(-u) / 0.2,
                         t0 + (-np.log1p(-u) - h0) / 0.05)
    times = np.where(z == 1, t_treated, t_control)
    censor = 30.0
    status = (times <= censor).astype(int)
    times = np.minimum(times, censor)
    return make_rows([(0.0, t, s, zi) for t, s, zi in zip(times, status, z)])


class TestPhTest:
    def test_single_covariate_global_equals_per_covariate(self):
        rng = np.random.default_rng(1)
        fit = cox_fit(exponential_rows(rng))
        res = ph_test(fit)
        assert res.global_statistic == pytest.approx(res.statistics[0])
        assert res.global_p_value == pytest.approx(res.p_values[0])
        assert res.global_dof == 1
        assert 0.0 <= res.global_p_value <= 1.0

    def test_detects_crossing_hazards(self):
        rng = np.random.default_rng(2)
        rejected = 0
        for _ in range(50):
            fit = cox_fit(crossing_hazard_rows(rng))
            if ph_test(fit).global_p_value < 0.05:
                rejected += 1
        assert rejected / 50 > 0.8

    def test_time_transforms_accepted(self):
        rng = np.random.default_rng(3)
        fit = cox_fit(exponential_rows(rng))
        for transform in ("identity", "km", "rank"):
            res = ph_test(fit, time_transform=transform)
            assert res.time_transform == transform
            assert np.isfinite(res.global_statistic)
        with pytest.raises(ValueError, match="transform"):
            ph_test(fit, time_transform="sqrt")

    def test_insufficient_events(self):
        rows = make_rows([(0, 5, 1, 1.0), (0, 9, 0, 0.0), (0, 11, 0, 1.0),
                          (0, 12, 0, 0.0)])
        fit = cox_fit(rows)
        with pytest.raises(FitError, match="insufficient events"):
            ph_test(fit)

    def test_all_events_tied_is_singular(self):
        rows = make_rows([(0, 5, 1, 1.0), (0, 5, 1, 0.0), (0, 9, 0, 0.0),
                          (0, 9, 0, 1.0)])
        fit = cox_fit(rows)
        with pytest.raises(FitError, match="singular"):
            ph_test(fit)

    def test_null_model_rejected(self):
        rng = np.random.default_rng(4)
        fit = cox_fit(exponential_rows(rng), covariates=())
        with pytest.raises(FitError, match="proportionality"):
            ph_test(fit)

    def test_two_covariates_dof(self):
        rng = np.random.default_rng(5)
        n = 200
        z1 = (rng.random(n) < 0.5).astype(float)
        z2 = rng.normal(size=n)
        times = rng.exponential(1.0 / (0.1 * np.exp(-0.3 * z1 + 0.2 * z2)))
        status = (times <= 15.0).astype(int)
        times = np.minimum(times, 15.0)
        from mstrial.ingest import TransitionRow
        rows = [TransitionRow(f"s{k}", (1, 2), 0.0, float(t), int(s),
                              (float(a), float(b)))
                for k, (t, s, a, b) in enumerate(zip(times, status, z1, z2))]
        fit = cox_fit(rows, covariates=(0, 1))
        res = ph_test(fit)
        assert res.statistics.shape == (2,)
        assert res.global_dof == 2
        assert np.all((res.p_values >= 0) & (res.p_values <= 1))
