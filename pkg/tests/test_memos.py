"""Tests for the latent-field Bayesian model: priors, marginal likelihood,
posterior sampling and the predictive mixture."""

import math

import numpy as np
import pytest
from scipy.stats import gamma as gamma_dist, norm

from oracles import dense_log_marginal

from enspost import data, memos, mesh as mesh_mod, spde


@pytest.fixture(scope="module")
def small_problem():
    """8 stations, K=14 mesh, 40 training cases: latent dim 30 (<= 40)."""
    rng = np.random.default_rng(5)
    pts = rng.uniform(0, 10, (8, 2))
    locs = [data.Location(f"s{i}", float(x), float(y)) for i, (x, y) in enumerate(pts)]
    msh = mesh_mod.build_mesh(locs, min_angle=5.0)
    ops = spde.assemble_fem(msh)
    stations = [l.id for l in locs] * 5
    fbar = rng.uniform(0, 15, 40)
    y = 1.0 + 0.9 * fbar + rng.normal(0, 1.0, 40)
    training = data.TrainingSet(
        stations=stations, dates=[None] * 40, fbar=fbar, y=y,
        locations={l.id: l for l in locs}, window="test",
    )
    return locs, msh, ops, training


class TestLogPrior:
    def test_kappa_tau_mode_at_prior_means(self):
        priors = memos.Priors()
        base = memos.Hyperparameters(
            math.exp(-0.082), math.exp(-0.878), math.exp(-0.082), math.exp(-0.878), 1.0
        )
        best = memos.log_prior(base, priors)
        rng = np.random.default_rng(0)
        for _ in range(20):
            other = memos.Hyperparameters(
                math.exp(-0.082 + rng.normal(0, 1)),
                math.exp(-0.878 + rng.normal(0, 1)),
                math.exp(-0.082 + rng.normal(0, 1)),
                math.exp(-0.878 + rng.normal(0, 1)),
                1.0,
            )
            assert memos.log_prior(other, priors) <= best + 1e-12

    def test_component_independence(self):
        priors = memos.Priors()
        t1 = memos.Hyperparameters(1.0, 0.4, 1.0, 0.4, 1.0)
        t2 = memos.Hyperparameters(1.0, 0.8, 1.0, 0.4, 1.0)
        t3 = memos.Hyperparameters(2.0, 0.4, 1.0, 0.4, 1.0)
        t4 = memos.Hyperparameters(2.0, 0.8, 1.0, 0.4, 1.0)
        # doubling tau_a moves the density by the same amount whatever kappa_a is
        d1 = memos.log_prior(t2, priors) - memos.log_prior(t1, priors)
        d2 = memos.log_prior(t4, priors) - memos.log_prior(t3, priors)
        assert d1 == pytest.approx(d2, abs=1e-12)

    def test_reference_value_against_direct_formula(self):
        priors = memos.Priors()
        theta = memos.Hyperparameters(1.2, 0.3, 0.8, 0.5, 1.7)
        rho = 1.7**-2
        direct = (
            norm.logpdf(math.log(1.2), -0.082, math.sqrt(1.5))
            + norm.logpdf(math.log(0.8), -0.082, math.sqrt(1.5))
            + norm.logpdf(math.log(0.3), -0.878, math.sqrt(1.5))
            + norm.logpdf(math.log(0.5), -0.878, math.sqrt(1.5))
            + gamma_dist.logpdf(rho, 1.0, scale=1 / 0.00005)
            + math.log(2 * rho)
        )
        assert memos.log_prior(theta, priors) == pytest.approx(direct, abs=1e-12)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            memos.Hyperparameters(0.0, 1.0, 1.0, 1.0, 1.0)


class TestLogMarginal:
    def test_matches_dense_oracle(self, small_problem):
        locs, msh, ops, training = small_problem
        priors = memos.Priors(v_fix=50.0)
        model = memos._WindowModel(training, msh, ops, priors)
        rng = np.random.default_rng(10)
        assert model.layout.dim <= 40
        for _ in range(20):
            theta = memos.Hyperparameters(
                math.exp(rng.normal(-0.1, 0.8)),
                math.exp(rng.normal(-0.9, 0.8)),
                math.exp(rng.normal(-0.1, 0.8)),
                math.exp(rng.normal(-0.9, 0.8)),
                math.exp(rng.normal(0.0, 0.5)),
            )
            sparse_val = model.log_marginal(theta)
            dense_val = dense_log_marginal(theta, training, msh, ops, priors)
            assert abs(sparse_val - dense_val) <= 1e-8

    def test_duplicate_row_changes_value(self, small_problem):
        locs, msh, ops, training = small_problem
        theta = memos.Hyperparameters(0.9, 0.4, 0.9, 0.4, 1.0)
        v1 = memos.log_marginal(theta, training, msh, ops)
        doubled = data.TrainingSet(
            stations=training.stations + [training.stations[0]],
            dates=training.dates + [training.dates[0]],
            fbar=np.append(training.fbar, training.fbar[0]),
            y=np.append(training.y, training.y[0]),
            locations=training.locations,
            window="test",
        )
        v2 = memos.log_marginal(theta, doubled, msh, ops)
        assert v1 != v2

    def test_fast_path_equals_generic_assembly(self, small_problem):
        import scipy.sparse as sp

        locs, msh, ops, training = small_problem
        priors = memos.Priors()
        model = memos._WindowModel(training, msh, ops, priors)
        theta = memos.Hyperparameters(1.1, 0.5, 0.7, 0.9, 1.3)
        fast = model.log_marginal(theta)
        Q_post = sp.csc_matrix(
            model.prior_precision(theta) + theta.sigma**-2 * model.XtX
        )
        chol = spde.SparseCholesky(Q_post, dense=(0, 1))
        mu = chol.solve(theta.sigma**-2 * model.Xty)
        generic = model._log_marginal_from(theta, chol, mu)
        assert fast == pytest.approx(generic, abs=1e-10)

    def test_scale_equivariance_of_slope_posterior(self, small_problem):
        """Noise-free y = b·f̄: the posterior mean slope stays near b when
        y and f̄ are scaled jointly."""
        locs, msh, ops, _ = small_problem
        rng = np.random.default_rng(3)
        fbar = rng.uniform(5, 15, 64)
        stations = [l.id for l in locs] * 8
        lmap = {l.id: l for l in locs}
        slopes = {}
        for scale in (1.0, 3.0):
            training = data.TrainingSet(
                stations=stations, dates=[None] * 64,
                fbar=scale * fbar, y=scale * (0.8 * fbar),
                locations=lmap, window="t",
            )
            draws = memos.sample_posterior(
                training, locs, n=40, seed=11, mesh=msh,
                config=memos.McmcConfig(burn_in=200, thin=2),
            )
            slopes[scale] = float(np.mean(draws.b))
        assert slopes[1.0] == pytest.approx(0.8, abs=0.05)
        assert slopes[3.0] == pytest.approx(0.8, abs=0.05)


class TestSamplePosterior:
    def test_near_prior_under_huge_noise(self, small_problem):
        """One weak observation with a prior pinning σ huge: the field
        posterior collapses to its prior (fixed-effect mean 0)."""
        locs, msh, ops, _ = small_problem
        lmap = {l.id: l for l in locs}
        training = data.TrainingSet(
            stations=[locs[0].id], dates=[None], fbar=np.array([10.0]),
            y=np.array([5.0]), locations={locs[0].id: lmap[locs[0].id]}, window="t",
        )
        priors = memos.Priors(precision_shape=200.0, precision_rate=2_000_000.0,
                              v_fix=4.0)  # sigma pinned near 100
        draws = memos.sample_posterior(
            training, locs, n=60, seed=2, mesh=msh, priors=priors,
            config=memos.McmcConfig(burn_in=300, thin=2),
        )
        assert np.all(draws.sigma > 10.0)
        # fixed-effect prior sd is 2; mean over sites/draws should sit near 0
        assert abs(np.mean(draws.a)) < 1.5
        assert abs(np.mean(draws.b)) < 1.5

    def test_tracks_ols_on_dense_single_station(self):
        rng = np.random.default_rng(2)
        pts = np.array([[2.0, 2.0], [8.0, 2.0], [5.0, 8.0], [5.0, 5.0]])
        locs = [data.Location(f"s{i}", x, y) for i, (x, y) in enumerate(pts)]
        lmap = {l.id: l for l in locs}
        fbar = rng.uniform(0, 15, 500)
        y = 2.0 + 1.1 * fbar + rng.normal(0, 1.0, 500)
        training = data.TrainingSet(
            stations=["s3"] * 500, dates=[None] * 500, fbar=fbar, y=y,
            locations={"s3": lmap["s3"]}, window="t",
        )
        msh = mesh_mod.build_mesh(locs, min_angle=20)
        draws = memos.sample_posterior(
            training, [lmap["s3"]], n=100, seed=1, mesh=msh,
            config=memos.McmcConfig(burn_in=400, thin=3),
        )
        f_new = 10.0
        post = draws.a[:, 0] + draws.b[:, 0] * f_new
        ols = np.polyfit(fbar, y, 1)
        ols_pred = ols[1] + ols[0] * f_new
        assert abs(post.mean() - ols_pred) < 2 * post.std()

    def test_reproducible_given_seed(self, small_problem):
        locs, msh, ops, training = small_problem
        kwargs = dict(n=10, seed=7, mesh=msh,
                      config=memos.McmcConfig(burn_in=50, thin=1))
        d1 = memos.sample_posterior(training, locs, **kwargs)
        d2 = memos.sample_posterior(training, locs, **kwargs)
        assert np.array_equal(d1.a, d2.a)
        assert np.array_equal(d1.b, d2.b)
        assert np.array_equal(d1.sigma, d2.sigma)

    def test_coverage_of_true_intercept_field(self):
        """a*(s) lies inside the central 90% posterior interval at >= 80%
        of stations, pooled over seeds."""
        hits = 0
        total = 0
        for seed in range(20):
            cfg = data.SimConfig(
                n_stations=30, n_days=40, m=20, sigma=1.0,
                kappa_a=0.9, tau_a=0.5, kappa_b=0.9, tau_b=8.0, alpha=1,
            )
            table, truth = data.simulate(cfg, 100 + seed)
            valid = table.dates[-1]
            training = data.rolling_window(table, valid, length=39, mode="global")
            locs = [table.locations[s] for s in table.stations]
            draws = memos.sample_posterior(
                training, locs, n=100, seed=seed, mesh=truth.mesh,
                config=memos.McmcConfig(burn_in=300, thin=2),
            )
            lo = np.quantile(draws.a, 0.05, axis=0)
            hi = np.quantile(draws.a, 0.95, axis=0)
            a_true = np.array([truth.a_true[s] for s in draws.sites])
            hits += int(np.sum((a_true >= lo) & (a_true <= hi)))
            total += len(a_true)
        assert hits / total >= 0.80

    def test_no_spurious_slope_field(self):
        """b* ≡ 0 with large noise: the slope posterior concentrates near its
        fixed-effect prior mean 0 at every site."""
        cfg = data.SimConfig(
            n_stations=20, n_days=40, m=20, sigma=4.0,
            field_mode="constant", a_mean=0.0, b_mean=0.0,
        )
        table, truth = data.simulate(cfg, 5)
        valid = table.dates[-1]
        training = data.rolling_window(table, valid, length=39, mode="global")
        locs = [table.locations[s] for s in table.stations]
        draws = memos.sample_posterior(
            training, locs, n=80, seed=3,
            config=memos.McmcConfig(burn_in=300, thin=2),
        )
        post_mean_b = draws.b.mean(axis=0)
        assert np.max(np.abs(post_mean_b)) < 0.1
        assert np.std(post_mean_b) < 0.05

    def test_mean_crps_stable_across_seeds(self):
        """Posterior Monte Carlo error dominates seed-to-seed variation of the
        mean predictive score on a fixed test day (checked at 3 seeds)."""
        from enspost import verify

        cfg = data.SimConfig(n_stations=30, n_days=27, m=20, sigma=1.5,
                             tau_a=0.25, tau_b=8.0)
        table, _ = data.simulate(cfg, 8)
        day = table.dates[-1]
        training = data.rolling_window(table, day, length=25, mode="global")
        locs = [table.locations[s] for s in table.stations]
        cases = table.on(day)
        fbar = {s: c.fbar for s, c in cases.items()}

        means = []
        subset_ses = []
        for seed in (1, 2, 3):
            draws = memos.sample_posterior(
                training, locs, n=100, seed=seed,
                config=memos.McmcConfig(burn_in=400, thin=3),
            )
            sample = memos.predictive_sample(draws, fbar, m=20)
            scores = [
                verify.crps_empirical(sample.pooled(s), cases[s].observation)
                for s in cases
            ]
            means.append(float(np.mean(scores)))
            # Monte Carlo error estimate: mean CRPS over 10 disjoint 10-draw
            # subsets; the full-sample mean has ~sd(subsets)/sqrt(10)
            subset_means = []
            for k in range(10):
                part = memos.PredictiveSample(
                    sites=sample.sites, values=sample.values[10 * k : 10 * (k + 1)]
                )
                subset_means.append(
                    np.mean([
                        verify.crps_empirical(part.pooled(s), cases[s].observation)
                        for s in cases
                    ])
                )
            subset_ses.append(float(np.std(subset_means) / np.sqrt(10)))
        mc_error = max(subset_ses)
        assert max(means) - min(means) < 6 * mc_error


class TestPredictiveSample:
    @staticmethod
    def single_draw(a, b, sigma, site="X"):
        return memos.PosteriorDraws(
            sites=[site], a=np.array([[a]]), b=np.array([[b]]),
            sigma=np.array([sigma]), theta=np.zeros((1, 5)), seed=0, acceptance=1.0,
        )

    def test_single_median_quantile(self):
        draws = self.single_draw(0.0, 1.0, 1.0)
        sample = memos.predictive_sample(draws, {"X": 5.0}, m=1)
        assert sample.values.shape == (1, 1, 1)
        assert sample.values[0, 0, 0] == pytest.approx(5.0, abs=1e-12)

    def test_two_member_quartiles(self):
        draws = self.single_draw(0.0, 0.0, 1.0)
        sample = memos.predictive_sample(draws, {"X": 0.0}, m=2)
        assert sample.pooled("X") == pytest.approx([-0.67449, 0.67449], abs=1e-5)

    def test_first_of_fifty_quantiles(self):
        draws = self.single_draw(0.0, 0.0, 1.0)
        sample = memos.predictive_sample(draws, {"X": 0.0}, m=50)
        assert sample.values[0, 0, 0] == pytest.approx(-2.32635, abs=1e-5)

    def test_nondecreasing_within_subsample(self):
        rng = np.random.default_rng(0)
        draws = memos.PosteriorDraws(
            sites=["A", "B"], a=rng.normal(0, 1, (7, 2)), b=rng.normal(1, 0.1, (7, 2)),
            sigma=rng.uniform(0.5, 2.0, 7), theta=np.zeros((7, 5)), seed=0,
            acceptance=1.0,
        )
        sample = memos.predictive_sample(draws, {"A": 3.0, "B": -1.0}, m=9)
        assert np.all(np.diff(sample.values, axis=1) >= 0)

    def test_missing_fbar_site_error(self):
        draws = self.single_draw(0.0, 1.0, 1.0)
        with pytest.raises(ValueError, match="missing"):
            memos.predictive_sample(draws, {"Y": 1.0}, m=2)


class TestMixtureCdf:
    def test_single_component_is_gaussian(self):
        draws = TestPredictiveSample.single_draw(1.0, 0.5, 2.0)
        x = np.linspace(-5, 10, 9)
        got = memos.mixture_cdf(draws, {"X": 4.0}, x)[:, 0]
        assert np.allclose(got, norm.cdf(x, 3.0, 2.0), atol=1e-12)

    def test_symmetric_two_component_midpoint(self):
        draws = memos.PosteriorDraws(
            sites=["X"], a=np.array([[-2.0], [2.0]]), b=np.zeros((2, 1)),
            sigma=np.array([1.0, 1.0]), theta=np.zeros((2, 5)), seed=0, acceptance=1.0,
        )
        assert memos.mixture_cdf(draws, {"X": 0.0}, 0.0)[0] == pytest.approx(0.5)

    def test_monotone_with_unit_limits(self):
        rng = np.random.default_rng(1)
        draws = memos.PosteriorDraws(
            sites=["X"], a=rng.normal(0, 1, (20, 1)), b=rng.normal(1, 0.2, (20, 1)),
            sigma=rng.uniform(0.5, 1.5, 20), theta=np.zeros((20, 5)), seed=0,
            acceptance=1.0,
        )
        x = np.linspace(-40, 60, 200)
        cdf = memos.mixture_cdf(draws, {"X": 5.0}, x)[:, 0]
        assert np.all(np.diff(cdf) >= -1e-12)
        assert cdf[0] < 1e-6 and cdf[-1] > 1 - 1e-6

    def test_agrees_with_predictive_sample_ecdf(self):
        rng = np.random.default_rng(2)
        n = 50
        draws = memos.PosteriorDraws(
            sites=["X"], a=rng.normal(0, 1, (n, 1)), b=rng.normal(1, 0.1, (n, 1)),
            sigma=rng.uniform(0.8, 1.2, n), theta=np.zeros((n, 5)), seed=0,
            acceptance=1.0,
        )
        sample = memos.predictive_sample(draws, {"X": 5.0}, m=100)  # N = 5000
        values = np.sort(sample.pooled("X"))
        grid = np.linspace(values[0] - 1, values[-1] + 1, 300)
        ecdf = np.searchsorted(values, grid, side="right") / len(values)
        cdf = memos.mixture_cdf(draws, {"X": 5.0}, grid)[:, 0]
        assert np.max(np.abs(ecdf - cdf)) < 0.02


class TestDrawsCsvRoundtrip:
    def test_roundtrip(self, tmp_path, small_problem):
        locs, msh, ops, training = small_problem
        draws = memos.sample_posterior(
            training, locs, n=5, seed=3, mesh=msh,
            config=memos.McmcConfig(burn_in=30, thin=1),
        )
        path = tmp_path / "draws.csv"
        draws.to_csv(path)
        back = memos.PosteriorDraws.from_csv(path)
        assert back.sites == sorted(draws.sites)
        idx = [back.sites.index(s) for s in draws.sites]
        assert np.allclose(back.a[:, idx], draws.a)
        assert np.allclose(back.sigma, draws.sigma)
