import numpy as np
import pytest

from shufflevar import (
    CovarianceModel,
    SizeGuard,
    mom_estimate,
    reml_estimate,
    sample_experiment,
)
from shufflevar.noise import substream
from shufflevar.sweeps import make_random_schedule


@pytest.fixture(scope="module")
def small_design():
    return make_random_schedule(12, 4, np.random.default_rng(0))


class TestIidEquivalence:
    def test_matches_mom_on_balanced_designs(self, small_design):
        # balanced one-way layout: REML under iid noise has the classical
        # moment solution in closed form
        d = small_design
        for r in range(5):
            y, _ = sample_experiment(
                d, 0.4, CovarianceModel.iid(), 1.0, seed=substream(10, r)
            )
            mom = mom_estimate(y.values, d)
            fit, est = reml_estimate(y.values, d, family="iid", n_starts=3, seed=0)
            if mom.sigma2_A_raw > 0:
                assert fit.sigma2_A == pytest.approx(mom.sigma2_A_raw, abs=1e-6)
            else:
                assert fit.sigma2_A == pytest.approx(0.0, abs=1e-6)

    def test_sigma2_eps_matches_ms_within(self, small_design):
        from shufflevar import ms_within

        d = small_design
        y, _ = sample_experiment(d, 0.4, CovarianceModel.iid(), 1.0, seed=substream(11, 0))
        mom = mom_estimate(y.values, d)
        fit, _ = reml_estimate(y.values, d, family="iid", n_starts=3, seed=0)
        if mom.sigma2_A_raw > 0:
            assert fit.sigma2_eps == pytest.approx(ms_within(y.values, d), rel=1e-5)


class TestExpNuggetRecovery:
    def test_median_recovery(self):
        d = make_random_schedule(36, 6, np.random.default_rng(1))
        model = CovarianceModel.exp_nugget(0.7, 30.0)
        fits = []
        for r in range(30):
            y, _ = sample_experiment(d, 0.4, model, 1.0, seed=substream(20, r))
            _, est = reml_estimate(
                y.values, d, family="exp_nugget", n_starts=2,
                max_evals=600, xatol=1e-5, seed=0,
            )
            fits.append(est.sigma2_A_raw)
        assert abs(np.median(fits) - 0.4) <= 0.05

    def test_model_accepts_covariance_model(self, small_design):
        d = small_design
        y, _ = sample_experiment(
            d, 0.3, CovarianceModel.exp_nugget(0.5, 5.0), 1.0, seed=substream(21, 0)
        )
        fit, est = reml_estimate(
            y.values, d, family=CovarianceModel.exp_nugget(0.5, 5.0),
            n_starts=2, max_evals=400, xatol=1e-4, seed=0,
        )
        assert fit.family == "exp_nugget"
        assert 0.0 < fit.theta[0] < 1.0 and fit.theta[1] > 0.0
        assert est.method == "reml:exp_nugget"

    def test_noise_level_is_model_based(self, small_design):
        from shufflevar import noise_level
        from shufflevar.noise import cov_exp_nugget

        d = small_design
        y, _ = sample_experiment(
            d, 0.3, CovarianceModel.exp_nugget(0.5, 5.0), 1.0, seed=substream(22, 0)
        )
        fit, est = reml_estimate(
            y.values, d, family="exp_nugget", n_starts=2,
            max_evals=400, xatol=1e-4, seed=0,
        )
        Sigma_hat = cov_exp_nugget(d.T, *fit.theta)
        assert est.noise_level == pytest.approx(
            noise_level(Sigma_hat, d, fit.sigma2_eps), rel=1e-10
        )


class TestArFamily:
    def test_ar1_fit_runs(self, small_design):
        d = small_design
        y, _ = sample_experiment(
            d, 0.3, CovarianceModel.ar([0.5]), 1.0, seed=substream(30, 0)
        )
        fit, est = reml_estimate(
            y.values, d, family="ar", ar_order=1, n_starts=2,
            max_evals=400, xatol=1e-4, seed=0,
        )
        assert fit.family == "ar"
        assert len(fit.theta) == 1
        assert abs(fit.theta[0]) < 1.0  # stationary

    def test_invalid_order(self, small_design):
        with pytest.raises(ValueError):
            reml_estimate(np.zeros(small_design.T), small_design, family="ar", ar_order=4)


class TestGuards:
    def test_size_guard(self, small_design):
        with pytest.raises(SizeGuard):
            reml_estimate(
                np.zeros(small_design.T), small_design, family="iid", size_guard=10
            )

    def test_unknown_family(self, small_design):
        with pytest.raises(ValueError):
            reml_estimate(np.zeros(small_design.T), small_design, family="bogus")

    def test_deterministic_given_seed(self, small_design):
        d = small_design
        y, _ = sample_experiment(
            d, 0.3, CovarianceModel.exp_nugget(0.5, 5.0), 1.0, seed=substream(40, 0)
        )
        f1, e1 = reml_estimate(y.values, d, "exp_nugget", n_starts=3,
                               max_evals=400, xatol=1e-4, seed=7)
        f2, e2 = reml_estimate(y.values, d, "exp_nugget", n_starts=3,
                               max_evals=400, xatol=1e-4, seed=7)
        assert f1.sigma2_A == f2.sigma2_A
        assert e1 == e2

    def test_budget_exhaustion_flags_non_converged(self, small_design):
        d = small_design
        y, _ = sample_experiment(
            d, 0.3, CovarianceModel.exp_nugget(0.5, 5.0), 1.0, seed=substream(41, 0)
        )
        fit, est = reml_estimate(
            y.values, d, "exp_nugget", n_starts=1, max_evals=5, xatol=1e-12, seed=0
        )
        assert not fit.converged
        assert "non_converged" in est.flags
