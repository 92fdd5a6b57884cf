import numpy as np
import pytest

from catelab import (DataValidationError, LearnerSpec, clip_propensity,
                     crossfit_nuisances, make_dataset, make_folds,
                     oracle_nuisances, overlap_report, single_learner_stack)
from catelab.nuisance import export_nuisances_csv


class TestClip:
    def test_clips_both_ends(self):
        out = clip_propensity([0.001, 0.5, 0.999], 0.01)
        assert np.allclose(out, [0.01, 0.5, 0.99])

    def test_interior_unchanged(self):
        e = np.array([0.2, 0.4, 0.6])
        assert np.array_equal(clip_propensity(e, 0.01), e)

    def test_idempotent(self, rng):
        e = rng.random(50)
        once = clip_propensity(e, 0.05)
        assert np.array_equal(clip_propensity(once, 0.05), once)

    def test_epsilon_out_of_range(self):
        with pytest.raises(ValueError):
            clip_propensity([0.5], 0.6)
        with pytest.raises(ValueError):
            clip_propensity([0.5], 0.0)


class TestOverlapReport:
    def test_no_clipping(self, rng):
        e = 0.2 + 0.6 * rng.random(100)
        report = overlap_report(e, 0.01)
        assert report.n_clipped_low == 0 and report.n_clipped_high == 0

    def test_single_low_value_indexed(self):
        e = np.array([0.3, 0.001, 0.7])
        report = overlap_report(e, 0.01)
        assert report.n_clipped_low == 1
        assert list(report.clipped_low_indices) == [1]

    def test_decile_vector_length(self, rng):
        report = overlap_report(rng.random(40), 0.01)
        assert report.deciles.shape == (11,)
        assert report.deciles[0] == report.minimum
        assert report.deciles[-1] == report.maximum


class TestCrossfit:
    def test_constant_outcome(self, rng, ridge_spec):
        n = 60
        x = rng.standard_normal((n, 2))
        d = np.tile([0, 1], n // 2)
        data = make_dataset(np.full(n, 7.0), d, x)
        plan = make_folds(n, 3, 1)
        spec = single_learner_stack(ridge_spec)
        nuis = crossfit_nuisances(data, plan, spec, spec)
        for vec in (nuis.mu_hat, nuis.mu0_hat, nuis.mu1_hat):
            assert np.allclose(vec, 7.0, atol=1e-6)

    def test_rct_propensity_near_half(self, ridge_spec, boost_spec):
        from catelab import gen_dgp, DgpConfig
        sim = gen_dgp(DgpConfig(n=2000, p=5, propensity_setting=1, seed=8))
        plan = make_folds(2000, 5, 2)
        spec = single_learner_stack(ridge_spec)
        nuis = crossfit_nuisances(sim.data, plan, spec, spec)
        assert 0.45 <= nuis.e_hat.mean() <= 0.55

    def test_two_fold_provenance(self, ridge_spec):
        x = np.arange(8, dtype=float).reshape(-1, 2)
        plan = make_folds(4, 2, 3)
        d = np.empty(4, dtype=int)
        for fold in (1, 2):  # one treated and one control row per fold
            d[plan.fold_indices(fold)] = [0, 1]
        data = make_dataset([1.0, 2.0, 3.0, 4.0], d, x)
        spec = single_learner_stack(LearnerSpec(kind="ridge", penalty=1.0, seed=1))
        nuis = crossfit_nuisances(data, plan, spec, spec)
        # rows of fold 1 were predicted while training only on fold 2
        assert np.array_equal(nuis.fold_of, plan.assignment)

    def test_no_leakage_constant_signal(self, ridge_spec):
        # y encodes the row index; out-of-fold predictions of a depth-0
        # tree equal the training mean, which must exclude the row itself
        n = 30
        x = np.zeros((n, 1))
        y = np.arange(n, dtype=float)
        d = np.tile([0, 1], n // 2)
        data = make_dataset(y, d, x)
        plan = make_folds(n, 3, 5)
        spec = single_learner_stack(
            LearnerSpec(kind="regression_tree", max_depth=0, min_node_size=1, seed=1))
        nuis = crossfit_nuisances(data, plan, spec, spec)
        for i in range(n):
            train_rows = np.flatnonzero(plan.assignment != plan.assignment[i])
            assert nuis.mu_hat[i] == pytest.approx(y[train_rows].mean())

    def test_missing_arm_names_fold(self, ridge_spec):
        # every treated row sits in fold 1, so fold 1's training
        # complement (= fold 2) has no treated observations
        x = np.arange(12, dtype=float).reshape(-1, 1)
        d = np.zeros(12, dtype=int)
        plan = make_folds(12, 2, 0)
        d[plan.fold_indices(1)] = 1
        data = make_dataset(np.ones(12), d, x)
        spec = single_learner_stack(ridge_spec)
        with pytest.raises(DataValidationError, match="fold 1"):
            crossfit_nuisances(data, plan, spec, spec)

    def test_e_hat_respects_clip(self, rng, ridge_spec):
        n = 40
        x = rng.standard_normal((n, 1))
        d = (x[:, 0] > 0).astype(int)  # perfectly separable
        if d.sum() in (0, n):
            d[0] = 1 - d[0]
        data = make_dataset(rng.standard_normal(n), d, x)
        plan = make_folds(n, 2, 1)
        spec = single_learner_stack(LearnerSpec(kind="regression_tree",
                                                max_depth=2, min_node_size=1, seed=1))
        nuis = crossfit_nuisances(data, plan, spec, spec, clip_epsilon=0.05)
        assert nuis.e_hat.min() >= 0.05 and nuis.e_hat.max() <= 0.95


def test_oracle_nuisances_pools_means():
    e = np.array([0.25, 0.75])
    mu0 = np.array([1.0, 2.0])
    mu1 = np.array([3.0, 6.0])
    nuis = oracle_nuisances(e, mu0, mu1, clip_epsilon=0.01)
    assert np.allclose(nuis.mu_hat, [1.5, 5.0])


def test_export_csv(tmp_path, rng, ridge_spec):
    n = 20
    x = rng.standard_normal((n, 2))
    d = np.tile([0, 1], n // 2)
    data = make_dataset(rng.standard_normal(n), d, x)
    plan = make_folds(n, 2, 1)
    spec = single_learner_stack(ridge_spec)
    nuis = crossfit_nuisances(data, plan, spec, spec)
    path = tmp_path / "nuis.csv"
    export_nuisances_csv(nuis, path)
    back = np.loadtxt(path, delimiter=",", skiprows=1)
    assert back.shape == (n, 5)
    assert np.allclose(back[:, 0], nuis.e_hat)
    assert np.array_equal(back[:, 4].astype(int), nuis.fold_of)
