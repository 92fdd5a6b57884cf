import numpy as np
import pytest

from catelab import DgpConfig, evaluate_mse, gen_dgp, gen_effect, mu0_fn
from catelab.dataset import DataValidationError
from catelab.simulation import gen_covariates, gen_propensity


class TestCovariates:
    def test_unit_diagonal(self):
        _, sigma = gen_covariates(100, 8, seed=1)
        assert np.allclose(np.diag(sigma), 1.0, atol=1e-12)

    def test_positive_definite(self):
        _, sigma = gen_covariates(100, 12, seed=2)
        assert np.linalg.eigvalsh(sigma).min() > 0

    def test_column_means_near_zero(self):
        n = 4000
        x, _ = gen_covariates(n, 6, seed=3)
        bound = 4.0 / np.sqrt(n)
        cont = np.delete(np.arange(6), 4)
        assert np.all(np.abs(x[:, cont].mean(axis=0)) < bound)

    def test_fifth_column_discrete(self):
        x, _ = gen_covariates(500, 6, seed=4)
        assert set(np.unique(x[:, 4])) <= {-0.2, 0.0, 0.2, 0.6}


class TestMu0:
    def test_formula(self):
        row = np.array([1.0, 2.0, 3.0, 4.0, 0.6, 9.9])
        assert mu0_fn(row) == pytest.approx(14.6)

    def test_zero_vector(self):
        assert mu0_fn(np.zeros(5)) == 0.0

    def test_partial_terms(self):
        assert mu0_fn(np.array([1.0, 0.0, 0.0, 1.0, 0.2])) == pytest.approx(0.2)


class TestPropensity:
    def test_setting_one_constant_half(self, rng):
        x = rng.standard_normal((200, 5))
        e, d = gen_propensity(x, 1, seed=1)
        assert np.all(e == 0.5)
        assert set(np.unique(d)) <= {0, 1}

    def test_setting_two_mean_maps_to_half(self, rng):
        x = rng.standard_normal((500, 5))
        e, _ = gen_propensity(x, 2, seed=1)
        a = x[:, 0] * x[:, 1] + x[:, 2] * x[:, 3]
        at_mean = np.argmin(np.abs(a - a.mean()))
        assert e[at_mean] == pytest.approx(0.5, abs=0.02)
        assert np.all((e > 0) & (e < 1))

    def test_setting_two_treated_share(self):
        x, _ = gen_covariates(2000, 6, seed=5)
        _, d = gen_propensity(x, 2, seed=6)
        assert 0.45 <= d.mean() <= 0.55

    def test_degenerate_sd_error(self):
        x = np.zeros((50, 5))
        with pytest.raises(DataValidationError, match="sd"):
            gen_propensity(x, 2, seed=1)


class TestEffect:
    def test_setting_one_formula_no_noise(self):
        x = np.array([[1.0, 1.0, 1.0, 1.0, 0.6]])
        tau = gen_effect(x, 1, seed=1, noise_sd_w=0.0)
        assert tau[0] == pytest.approx(3.0)

    def test_setting_two_at_zero(self):
        tau = gen_effect(np.zeros((1, 5)), 2, seed=1)
        assert tau[0] == pytest.approx(1.5)

    def test_setting_two_deterministic_in_x(self, rng):
        x = rng.standard_normal((20, 5))
        assert np.array_equal(gen_effect(x, 2, seed=1), gen_effect(x, 2, seed=99))

    def test_setting_one_population_ate(self):
        # E[tau] = 0.6*0 + E[x5] + E[W] = mean of the four support points
        x, _ = gen_covariates(200000, 5, seed=7)
        tau = gen_effect(x, 1, seed=8)
        assert tau.mean() == pytest.approx(0.15, abs=0.02)


class TestGenDgp:
    def test_seed_determinism(self):
        cfg = DgpConfig(n=100, p=5, seed=42)
        a, b = gen_dgp(cfg), gen_dgp(cfg)
        assert np.array_equal(a.data.y, b.data.y)
        assert np.array_equal(a.data.d, b.data.d)
        assert np.array_equal(a.data.x, b.data.x)
        assert np.array_equal(a.true_tau, b.true_tau)

    def test_noise_variance_near_one(self):
        sim = gen_dgp(DgpConfig(n=5000, p=5, seed=9))
        u = sim.data.y - sim.true_tau * sim.data.d - sim.true_mu0
        assert abs(u.var() - 1.0) < 0.1

    def test_forced_control_outcome_free_of_effect(self):
        sim = gen_dgp(DgpConfig(n=200, p=5, seed=10), force_d=0)
        assert np.all(sim.data.d == 0)
        u = sim.data.y - sim.true_mu0
        assert abs(np.corrcoef(u, sim.true_tau)[0, 1]) < 0.2

    def test_setting_one_treatment_independent_of_x(self):
        sim = gen_dgp(DgpConfig(n=2000, p=6, propensity_setting=1, seed=11))
        bound = 4.0 / np.sqrt(2000)
        for j in range(6):
            rho = np.corrcoef(sim.data.d, sim.data.x[:, j])[0, 1]
            assert abs(rho) < bound

    def test_true_e_strictly_interior(self):
        for setting in (1, 2):
            sim = gen_dgp(DgpConfig(n=500, p=5, propensity_setting=setting, seed=12))
            assert np.all((sim.true_e > 0) & (sim.true_e < 1))

    def test_config_validation(self):
        with pytest.raises(DataValidationError):
            DgpConfig(n=10, p=5)
        with pytest.raises(DataValidationError):
            DgpConfig(n=100, p=3)
        with pytest.raises(DataValidationError):
            DgpConfig(n=100, p=5, propensity_setting=3)


class TestFigure3:
    def test_identical_seed_reproduces_pairs(self):
        from catelab import LearnerSpec, figure3_experiment, single_learner_stack
        ridge = single_learner_stack(LearnerSpec(kind="ridge", penalty=0.01, seed=1))
        kw = dict(e_spec=ridge, mu_spec=ridge, t_spec=ridge, n=200, p=5)
        a = figure3_experiment(replications=10, seed=13, **kw)
        b = figure3_experiment(replications=10, seed=13, **kw)
        assert a == b

    def test_replication_floor(self):
        from catelab import figure3_experiment
        with pytest.raises(ValueError):
            figure3_experiment(replications=5, seed=1)


class TestEvaluateMse:
    def test_exact_match(self, rng):
        t = rng.standard_normal(50)
        assert evaluate_mse(t, t) == 0.0

    def test_unit_shift(self, rng):
        t = rng.standard_normal(50)
        assert evaluate_mse(t + 1.0, t) == pytest.approx(1.0)

    def test_constant_predictor_gives_variance(self, rng):
        t = rng.standard_normal(50)
        est = np.full(50, t.mean())
        assert evaluate_mse(est, t) == pytest.approx(t.var(), abs=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            evaluate_mse(np.zeros(3), np.zeros(4))
