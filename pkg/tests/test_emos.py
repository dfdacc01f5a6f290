"""Tests for the Gaussian predictive model and minimum-CRPS fitting."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import norm

from oracles import crps_by_quadrature

from enspost import data, emos


class TestCrpsGaussian:
    def test_standard_normal_at_mean(self):
        assert emos.crps_gaussian(0.0, 1.0, 0.0) == pytest.approx(0.23369, abs=1e-5)

    def test_far_observation(self):
        assert emos.crps_gaussian(0.0, 1.0, 10.0) == pytest.approx(9.43581, abs=1e-5)

    def test_against_quadrature(self):
        for mu, sigma, y in [(0, 1, 0), (0, 1, 10), (2, 0.1, 2.5), (-3, 5, 4)]:
            closed = emos.crps_gaussian(mu, sigma, y)
            quad = crps_by_quadrature(mu, sigma, y)
            assert closed == pytest.approx(quad, abs=1e-6)

    @given(
        st.floats(-5, 5), st.floats(0.1, 5), st.floats(-10, 10), st.floats(-20, 20)
    )
    @settings(max_examples=50)
    def test_translation_invariance(self, mu, sigma, y, c):
        a = emos.crps_gaussian(mu + c, sigma, y + c)
        b = emos.crps_gaussian(mu, sigma, y)
        assert a == pytest.approx(b, rel=1e-9, abs=1e-12)

    def test_nonnegative_and_vectorized(self):
        rng = np.random.default_rng(0)
        mu = rng.normal(0, 3, 100)
        y = rng.normal(0, 3, 100)
        out = emos.crps_gaussian(mu, 1.3, y)
        assert out.shape == (100,)
        assert np.all(out >= 0)

    def test_sigma_must_be_positive(self):
        with pytest.raises(ValueError):
            emos.crps_gaussian(0.0, 0.0, 1.0)


def training_set(fbar, y):
    n = len(fbar)
    return data.TrainingSet(
        stations=["s"] * n, dates=[None] * n, fbar=np.asarray(fbar, float),
        y=np.asarray(y, float), locations={}, window="test",
    )


class TestFit:
    def test_noise_free_recovery(self):
        rng = np.random.default_rng(1)
        fbar = rng.uniform(0, 20, 200)
        params = emos.fit(training_set(fbar, 2.0 + 0.9 * fbar))
        assert params.a == pytest.approx(2.0, abs=1e-4)
        assert params.b == pytest.approx(0.9, abs=1e-4)
        assert params.sigma == pytest.approx(emos.SIGMA_FLOOR)

    def test_constant_fbar_fixes_slope(self):
        rng = np.random.default_rng(2)
        y = rng.normal(5.0, 2.0, 100)
        params = emos.fit(training_set(np.full(100, 3.0), y))
        assert params.b == 0.0
        # for a Gaussian fit the CRPS-optimal location is near the sample mean
        assert params.a == pytest.approx(np.mean(y), abs=0.3)

    def test_consistency_on_synthetic(self):
        rng = np.random.default_rng(3)
        fbar = rng.uniform(0, 20, 5000)
        y = 1.0 + 1.1 * fbar + rng.normal(0, 1.5, 5000)
        params = emos.fit(training_set(fbar, y))
        assert abs(params.a - 1.0) < 0.05 * 1.0 + 0.1
        assert abs(params.b - 1.1) / 1.1 < 0.05
        assert abs(params.sigma - 1.5) / 1.5 < 0.05

    def test_objective_not_worse_than_ols_start(self):
        rng = np.random.default_rng(4)
        for trial in range(5):
            fbar = rng.uniform(-5, 15, 60)
            y = rng.normal(2.0, 1.0, 60) + 0.5 * fbar + rng.standard_t(3, 60)
            ts = training_set(fbar, y)
            params = emos.fit(ts)
            b0 = np.cov(fbar, y, bias=True)[0, 1] / np.var(fbar)
            a0 = np.mean(y) - b0 * np.mean(fbar)
            s0 = max(np.std(y - a0 - b0 * fbar), 10 * emos.SIGMA_FLOOR)
            start = np.mean(emos.crps_gaussian(a0 + b0 * fbar, s0, y))
            fitted = np.mean(
                emos.crps_gaussian(params.a + params.b * fbar, params.sigma, y)
            )
            assert fitted <= start + 1e-12


class TestFitGlobalLocal:
    @staticmethod
    def two_station_table(bias_plus=2.0, bias_minus=-2.0, days=40, seed=0):
        rng = np.random.default_rng(seed)
        locs = [data.Location("P", 0.0, 0.0), data.Location("M", 10.0, 0.0)]
        cases = []
        import datetime as dt

        for i in range(days):
            d = dt.date(2010, 6, 1) + dt.timedelta(days=i)
            for loc, bias in zip(locs, (bias_plus, bias_minus)):
                members = tuple(rng.normal(10.0 + 3 * np.sin(i / 5), 1.0, 5))
                fbar = float(np.mean(members))
                cases.append(
                    data.ForecastCase(d, loc.id, members, bias + fbar + rng.normal(0, 0.3))
                )
        return data.CaseTable(cases, locs)

    def test_single_station_global_equals_local(self):
        import datetime as dt

        rng = np.random.default_rng(5)
        loc = data.Location("A", 0.0, 0.0)
        cases = []
        for i in range(30):
            d = dt.date(2010, 6, 1) + dt.timedelta(days=i)
            members = tuple(rng.normal(10, 2, 4))
            cases.append(
                data.ForecastCase(d, "A", members, float(np.mean(members)) + rng.normal())
            )
        table = data.CaseTable(cases, [loc])
        valid = dt.date(2010, 6, 28)
        pg = emos.fit_global(table, valid)
        pl = emos.fit_local(table, valid, "A")
        assert pg == pl

    def test_opposite_biases_split(self):
        import datetime as dt

        table = self.two_station_table()
        valid = dt.date(2010, 7, 8)
        pg = emos.fit_global(table, valid)
        pp = emos.fit_local(table, valid, "P")
        pm = emos.fit_local(table, valid, "M")
        assert abs(pg.a) < 0.8
        assert pp.a == pytest.approx(2.0, abs=0.5)
        assert pm.a == pytest.approx(-2.0, abs=0.5)

    def test_unknown_station_error(self):
        import datetime as dt

        table = self.two_station_table()
        with pytest.raises(ValueError, match="unknown station"):
            emos.fit_local(table, dt.date(2010, 7, 8), "NOPE")


class TestPredict:
    def test_identity_coefficients(self):
        forecast = emos.predict(emos.EmosParams(0.0, 1.0, 1.0), 3.0)
        assert forecast.mu == 3.0

    def test_zero_slope(self):
        forecast = emos.predict(emos.EmosParams(2.0, 0.0, 1.0), 123.4)
        assert forecast.mu == 2.0

    def test_negative_slope(self):
        forecast = emos.predict(emos.EmosParams(1.0, -0.5, 1.0), 4.0)
        assert forecast.mu == pytest.approx(-1.0)

    def test_quantile_sample_sorted_symmetric(self):
        forecast = emos.GaussianForecast(1.0, 2.0)
        q = forecast.quantile_sample(50)
        assert np.all(np.diff(q) > 0)
        assert q[0] + q[-1] == pytest.approx(2.0, abs=1e-9)  # symmetry about mu
        assert q[0] == pytest.approx(1.0 + 2.0 * norm.ppf(0.01), abs=1e-9)
