import numpy as np
import pytest

from catelab import (CausalForestParams, DgpConfig, causal_forest_learner,
                     fit_causal_forest, fit_causal_tree, forest_from_json,
                     forest_to_json, forest_weights, gen_dgp, leaf_tau,
                     local_center, make_dataset, make_folds, oracle_nuisances,
                     predict_cate)
from catelab.util import rng_stream


def brute_force_depth1_split(x, y_res, d_res, rows, min_node_size):
    """Exhaustive enumeration oracle for the root split.

    Scans features in ascending order and thresholds in ascending order
    with a strict improvement test, mirroring the documented tie rule.
    """
    best = None
    n = rows.shape[0]
    for f in range(x.shape[1]):
        values = np.unique(x[rows, f])
        for lo, hi in zip(values[:-1], values[1:]):
            thr = 0.5 * (lo + hi)
            left = rows[x[rows, f] <= thr]
            right = rows[x[rows, f] > thr]
            if len(left) < min_node_size or len(right) < min_node_size:
                continue
            dd_l = float(np.sum(d_res[left] ** 2))
            dd_r = float(np.sum(d_res[right] ** 2))
            if dd_l <= 0.0 or dd_r <= 0.0:
                continue
            tau_l = float(np.sum(y_res[left] * d_res[left])) / dd_l
            tau_r = float(np.sum(y_res[right] * d_res[right])) / dd_r
            score = len(left) * len(right) * (tau_l - tau_r) ** 2
            if score > 0.0 and (best is None or score > best[0]):
                best = (score, f, thr)
    return best


def centered_instance(rng, n, p):
    x = rng.standard_normal((n, p))
    d = rng.integers(0, 2, n)
    if d.sum() in (0, n):
        d[0] = 1 - d[0]
    d_res = d - 0.5
    y_res = rng.standard_normal(n)
    data = make_dataset(y_res, d, x, _require_both_arms=False)
    return data, y_res, d_res


class TestLeafTau:
    def test_exact_multiple(self):
        d_res = np.array([0.5, -0.5, 0.5])
        assert leaf_tau(2.0 * d_res, d_res) == pytest.approx(2.0)

    def test_orthogonal_gives_zero(self):
        d_res = np.array([0.5, -0.5])
        y_res = np.array([1.0, 1.0])
        assert leaf_tau(y_res, d_res) == pytest.approx(0.0)

    def test_matches_ols_slope(self, rng):
        for _ in range(10):
            d_res = rng.standard_normal(8)
            y_res = rng.standard_normal(8)
            slope = np.linalg.lstsq(d_res[:, None], y_res, rcond=None)[0][0]
            assert leaf_tau(y_res, d_res) == pytest.approx(slope, abs=1e-12)

    def test_zero_denominator_raises(self):
        with pytest.raises(ValueError, match="degenerate"):
            leaf_tau(np.ones(3), np.zeros(3))


class TestLocalCenter:
    def test_perfect_mu_zeroes_outcome(self, rng):
        n = 30
        x = rng.standard_normal((n, 2))
        d = np.tile([0, 1], n // 2)
        mu = x[:, 0]
        data = make_dataset(mu, d, x)
        nuis = oracle_nuisances(np.full(n, 0.5), mu, mu)
        y_res, d_res = local_center(data, nuis)
        assert np.allclose(y_res, 0.0)
        assert set(np.unique(d_res)) == {-0.5, 0.5}

    def test_rct_treatment_residual_centered(self):
        sim = gen_dgp(DgpConfig(n=2000, p=5, propensity_setting=1, seed=4))
        nuis = oracle_nuisances(sim.true_e, sim.true_mu0, sim.true_mu0 + sim.true_tau)
        _, d_res = local_center(sim.data, nuis)
        assert abs(d_res.mean()) < 0.02

    def test_originals_untouched(self, rng):
        n = 20
        x = rng.standard_normal((n, 1))
        d = np.tile([0, 1], n // 2)
        data = make_dataset(rng.standard_normal(n), d, x)
        before = data.y.copy()
        nuis = oracle_nuisances(np.full(n, 0.5), np.zeros(n), np.zeros(n))
        local_center(data, nuis)
        assert np.array_equal(data.y, before)


class TestCausalTree:
    def test_strong_signal_splits_first_feature(self):
        sim = gen_dgp(DgpConfig(n=2000, p=5, propensity_setting=1,
                                effect_setting=1, seed=5))
        x1 = sim.data.x[:, 0]
        tau = 3.0 * (x1 > 0)
        y = tau * sim.data.d + rng_stream(5, 0).normal(0, 0.5, 2000)
        data = make_dataset(y, sim.data.d, sim.data.x)
        nuis = oracle_nuisances(np.full(2000, 0.5), np.zeros(2000), np.zeros(2000))
        y_res, d_res = local_center(data, nuis)
        params = CausalForestParams(n_trees=1, min_node_size=50, max_depth=1,
                                    mtry_fraction=1.0, seed=1)
        tree = fit_causal_tree(data, y_res, d_res, np.arange(2000), params,
                               rng_stream(1, 0))
        assert tree.root.feature == 0
        assert abs(tree.root.threshold) < 0.2

    def test_constant_effect_low_criterion(self, rng):
        n = 400
        x = rng.standard_normal((n, 3))
        d = np.tile([0, 1], n // 2)
        noise = 0.1 * rng.standard_normal(n)
        rows = np.arange(n)

        def best_root_score(y, mu0, mu1):
            data = make_dataset(y, d, x)
            nuis = oracle_nuisances(np.full(n, 0.5), mu0, mu1)
            y_res, d_res = local_center(data, nuis)
            found = brute_force_depth1_split(data.x, y_res, d_res, rows, 20)
            return found[0] if found else 0.0

        constant = best_root_score(2.0 * d + noise, np.zeros(n), np.full(n, 2.0))
        tau = 6.0 * (x[:, 0] > 0)
        strong = best_root_score(tau * d + noise, np.zeros(n), tau)
        assert constant < 0.01 * strong

    def test_matches_brute_force_oracle(self, rng):
        for trial in range(25):
            n = int(rng.integers(16, 31))
            p = int(rng.integers(1, 5))
            data, y_res, d_res = centered_instance(rng, n, p)
            params = CausalForestParams(n_trees=1, min_node_size=2, max_depth=1,
                                        mtry_fraction=1.0, subsample_fraction=1.0,
                                        seed=trial)
            tree = fit_causal_tree(data, y_res, d_res, np.arange(n), params,
                                   rng_stream(trial, 3))
            oracle = brute_force_depth1_split(data.x, y_res, d_res,
                                              tree.split_indices, 2)
            if oracle is None:
                assert tree.root.is_leaf
            else:
                assert tree.root.feature == oracle[1]
                assert tree.root.threshold == pytest.approx(oracle[2], abs=0.0)

    def test_honesty_estimate_half_outcomes_cannot_move_splits(self, rng):
        n = 300
        x = rng.standard_normal((n, 4))
        d = np.tile([0, 1], n // 2)
        y = x[:, 0] * d + rng.standard_normal(n)
        data = make_dataset(y, d, x)
        nuis = oracle_nuisances(np.full(n, 0.5), np.zeros(n), np.zeros(n))
        y_res, d_res = local_center(data, nuis)
        params = CausalForestParams(n_trees=1, min_node_size=10,
                                    mtry_fraction=1.0, seed=7)
        tree = fit_causal_tree(data, y_res, d_res, np.arange(n), params,
                               rng_stream(7, 1))
        # permute the outcome residuals of the estimate half only
        y_perm = y_res.copy()
        est = tree.estimate_indices
        y_perm[est] = y_perm[rng.permutation(est)]
        tree_perm = fit_causal_tree(data, y_perm, d_res, np.arange(n), params,
                                    rng_stream(7, 1))

        def structure(node):
            if node.is_leaf:
                return ("leaf",)
            return (node.feature, node.threshold,
                    structure(node.left), structure(node.right))

        assert structure(tree.root) == structure(tree_perm.root)

    def test_leaf_estimates_come_from_estimate_half(self, rng):
        n = 200
        data, y_res, d_res = centered_instance(rng, n, 3)
        params = CausalForestParams(n_trees=1, min_node_size=10,
                                    mtry_fraction=1.0, seed=3)
        tree = fit_causal_tree(data, y_res, d_res, np.arange(n), params,
                               rng_stream(3, 2))
        assert not set(tree.split_indices) & set(tree.estimate_indices)
        node = tree.root
        members = node.members
        assert set(members) <= set(tree.estimate_indices)
        assert node.tau == pytest.approx(leaf_tau(y_res[members], d_res[members]))


class TestForest:
    def make_model(self, rng, n=300, n_trees=12, **kw):
        x = rng.standard_normal((n, 3))
        d = np.tile([0, 1], n // 2)
        tau = x[:, 0]
        y = tau * d + 0.5 * rng.standard_normal(n)
        data = make_dataset(y, d, x)
        nuis = oracle_nuisances(np.full(n, 0.5), np.zeros(n), np.zeros(n))
        params = CausalForestParams(n_trees=n_trees, min_node_size=10, seed=9, **kw)
        return data, fit_causal_forest(data, params, nuis)

    def test_single_tree_prediction_equals_leaf_lookup(self, rng):
        data, model = self.make_model(rng, n_trees=1)
        tree = model.trees[0]
        for i in range(0, 20):
            x_row = data.x[i]
            node = tree.root
            last_valid = node if node.valid else None
            while not node.is_leaf:
                node = node.left if x_row[node.feature] <= node.threshold else node.right
                if node.valid:
                    last_valid = node
            assert predict_cate(model, x_row[None, :])[0] == pytest.approx(last_valid.tau)

    def test_seed_reproducibility(self, rng):
        data, model_a = self.make_model(rng, n_trees=5)
        rng2 = np.random.default_rng(12345)
        _, model_b = self.make_model(rng2, n_trees=5)
        assert np.array_equal(predict_cate(model_a, data.x),
                              predict_cate(model_b, data.x))

    def test_weights_sum_to_one_and_nonnegative(self, rng):
        data, model = self.make_model(rng)
        query = rng.standard_normal((25, 3))
        for row in query:
            alpha = forest_weights(model, row)
            assert (alpha >= 0).all()
            assert alpha.sum() == pytest.approx(1.0, abs=1e-10)

    def test_alpha_supported_on_estimate_halves(self, rng):
        data, model = self.make_model(rng, n_trees=4)
        est_union = set()
        for tree in model.trees:
            est_union |= set(tree.estimate_indices)
        alpha = forest_weights(model, data.x[0])
        assert set(np.flatnonzero(alpha > 0)) <= est_union

    def test_alpha_formula_reproduces_predict(self, rng):
        data, model = self.make_model(rng)
        y_res, d_res = model.y_res, model.d_res
        for row in data.x[:20]:
            alpha = forest_weights(model, row)
            manual = float(alpha @ (y_res * d_res)) / float(alpha @ (d_res * d_res))
            assert predict_cate(model, row[None, :])[0] == pytest.approx(manual, abs=1e-10)

    def test_recovers_monotone_effect(self, rng):
        n = 1200
        x = rng.standard_normal((n, 3))
        d = np.tile([0, 1], n // 2)
        y = x[:, 0] * d + 0.5 * rng.standard_normal(n)
        data = make_dataset(y, d, x)
        nuis = oracle_nuisances(np.full(n, 0.5), np.zeros(n), np.zeros(n))
        params = CausalForestParams(n_trees=100, min_node_size=10, seed=4)
        model = fit_causal_forest(data, params, nuis)
        tau_hat = predict_cate(model, data.x)
        # Spearman correlation via rank transform
        rho = np.corrcoef(np.argsort(np.argsort(tau_hat)),
                          np.argsort(np.argsort(x[:, 0])))[0, 1]
        assert rho > 0.8

    def test_kfold_learner_covers_all_rows(self, rng):
        sim = gen_dgp(DgpConfig(n=400, p=5, propensity_setting=1, seed=6))
        nuis = oracle_nuisances(sim.true_e, sim.true_mu0, sim.true_mu0 + sim.true_tau)
        plan = make_folds(400, 4, 2)
        params = CausalForestParams(n_trees=20, min_node_size=10, seed=5)
        cate = causal_forest_learner(sim.data, plan, params, nuis)
        assert np.all(np.isfinite(cate.tau_hat))
        assert cate.method == "CF"

    def test_json_round_trip(self, rng):
        data, model = self.make_model(rng, n_trees=3)
        restored = forest_from_json(forest_to_json(model))
        assert np.array_equal(predict_cate(model, data.x),
                              predict_cate(restored, data.x))
        for row in data.x[:5]:
            assert np.array_equal(forest_weights(model, row),
                                  forest_weights(restored, row))
