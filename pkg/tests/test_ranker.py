import math
import warnings

import numpy as np
import pytest

import oracles
from nestedltr.core import ALL_LABELS
from nestedltr.labeling import RankingDataset
from nestedltr.ranker import BoostedRanker, TrainConfig, Tree, delta_dcg, fit, lambda_gradients, score
from nestedltr.ranker.objectives import group_dcg, lambda_gradients_grouped, pairwise_surrogate_loss
from nestedltr.ranker.search import hyperparameter_search, read_trial_log, sample_configs, write_trial_log
from nestedltr.ranker.tree import apply_bins, grow_tree, quantile_bin_edges


def ranking_data(n_groups, size=20, n_feat=3, seed=0, noise=0.3):
    """Label = graded function of feature 0 plus noise; other features are noise."""
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n_groups * size, n_feat))
    latent = X[:, 0] + noise * rng.normal(size=len(X))
    y = np.clip(np.round(latent + 1), 0, 3)
    labels = np.zeros((len(X), len(ALL_LABELS)))
    labels[:, 0] = y
    labels[:, 3] = y > 0
    gid = np.repeat(np.arange(n_groups), size)
    return RankingDataset(gid, np.tile(np.arange(size), n_groups), X, labels,
                          [f"f{i}" for i in range(n_feat)])


class TestDeltaDcg:
    def test_equal_gains(self):
        assert delta_dcg([2, 2, 1], 1, 2) == 0.0

    def test_hand_value(self):
        assert delta_dcg([1, 0], 1, 2, k=2) == pytest.approx(0.36907, abs=1e-5)

    def test_beyond_cutoff(self):
        assert delta_dcg([3, 1, 0, 2], 3, 4, k=2) == 0.0

    def test_swap_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(2000):
            n = int(rng.integers(2, 30))
            g = rng.uniform(0, 4, size=n)
            a, b = (int(x) for x in rng.choice(np.arange(1, n + 1), size=2, replace=False))
            assert abs(delta_dcg(g, a, b) - oracles.delta_dcg_by_swap(g, a, b)) <= 1e-12

    def test_rejects(self):
        with pytest.raises(ValueError):
            delta_dcg([1, 0], 1, 1)
        with pytest.raises(ValueError):
            delta_dcg([1, 0], 1, 3)
        with pytest.raises(ValueError):
            delta_dcg([1, 0], 0, 1)


class TestLambdas:
    def test_equal_gains_zero(self):
        g, h = lambda_gradients([0.3, -1.0, 2.0], [1.0, 1.0, 1.0])
        assert not g.any() and not h.any()

    def test_tied_scores_half(self):
        # one pair with dDCG = 0.5: gains chosen so |g_i - g_j| * |1 - 1/log2 3| = 0.5
        gap = 0.5 / (1 - 1 / math.log2(3))
        g, _ = lambda_gradients([0.0, 0.0], [gap, 0.0])
        assert g[0] == pytest.approx(-0.25, abs=1e-12) and g[1] == pytest.approx(0.25, abs=1e-12)

    def test_sigmoid_value(self):
        gap = 1.0 / (1 - 1 / math.log2(3))
        g, _ = lambda_gradients([2.0, 0.0], [gap, 0.0])
        assert g[0] == pytest.approx(-1 / (1 + math.e ** 2), abs=1e-5)
        assert g[0] == pytest.approx(-0.11920, abs=1e-5)

    def test_finite_differences(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            n = int(rng.integers(2, 9))
            s = rng.normal(size=n)
            y = rng.integers(0, 4, size=n).astype(float)
            k = None if rng.uniform() < 0.5 else int(rng.integers(1, n + 1))
            pos = np.empty(n, dtype=np.int64)
            pos[np.lexsort((np.arange(n), -s))] = np.arange(1, n + 1)
            g, h = lambda_gradients(s, y, k=k)
            fd = oracles.finite_difference(lambda x: pairwise_surrogate_loss(x, y, k, positions=pos), s)
            assert np.all(np.abs(fd - g) <= 1e-4 * np.abs(g) + 1e-8)
            assert g.sum() == 0.0
            assert np.all(h >= 0)

    def test_grouped_independent(self):
        s = np.array([0.1, 0.5, -0.2, 1.0, 0.0])
        y = np.array([1.0, 0.0, 2.0, 0.0, 1.0])
        g, _ = lambda_gradients_grouped(np.array([0, 3, 5]), s, y)
        g1, _ = lambda_gradients(s[:3], y[:3])
        g2, _ = lambda_gradients(s[3:], y[3:])
        assert np.allclose(g, np.concatenate([g1, g2]))


class TestTree:
    def test_stump_routing(self):
        t = Tree.stump(0, 0.5, 1.0, 2.0)
        assert list(t.predict(np.array([[0.3], [0.5], [0.7]]))) == [1.0, 1.0, 2.0]
        model = BoostedRanker([t], 0.1, 0.0, "lambdarank", 1)
        assert score(model, [0.3]) == pytest.approx(0.1, abs=1e-15)

    def test_empty_ensemble_is_base(self):
        model = BoostedRanker([], 0.1, 0.75, "pointwise", 2)
        assert np.all(model.predict(np.zeros((4, 2))) == 0.75)

    def test_bins_respect_thresholds(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(500, 2))
        X[:, 1] = np.round(X[:, 1])
        edges = quantile_bin_edges(X, 16)
        b = apply_bins(X, edges)
        for f in range(2):
            for bb, e in enumerate(edges[f]):
                assert np.all(X[b[:, f] <= bb, f] <= e) and np.all(X[b[:, f] > bb, f] > e)
        assert len(edges[1]) == len(np.unique(X[:, 1])) - 1

    def test_newton_leaves(self):
        X = np.array([[0.0], [0.0], [1.0], [1.0]])
        edges = quantile_bin_edges(X, 4)
        grad = np.array([1.0, 1.0, -2.0, -2.0])
        hess = np.ones(4)
        tree, rows = grow_tree(apply_bins(X, edges), grad, hess, edges, max_depth=1, min_examples_per_leaf=1,
                               l2_reg=1.0)
        assert tree.depth == 1
        assert rows.tolist() == [-2 / 3, -2 / 3, 4 / 3, 4 / 3]
        assert np.allclose(tree.predict(X), rows)

    def test_min_leaf_blocks_split(self):
        X = np.arange(10.0)[:, None]
        edges = quantile_bin_edges(X, 16)
        tree, _ = grow_tree(apply_bins(X, edges), np.arange(10.0) - 5, np.ones(10), edges, 3, 6, 1.0)
        assert tree.n_nodes == 1

    def test_round_trip(self):
        t = Tree.stump(1, -0.25, 0.5, -1.5)
        assert Tree.from_dict(t.to_dict()).to_dict() == t.to_dict()
        with pytest.raises(ValueError):
            Tree([0], [0.0], [-1], [-1], [0.0])


class TestFit:
    def test_reaches_ideal_dcg(self):
        train = ranking_data(150, n_feat=1, noise=0.0, seed=1)
        val = ranking_data(60, n_feat=1, noise=0.0, seed=2)
        model = fit(train, val, "s1", TrainConfig(num_trees_max=100, min_examples_per_leaf=5))
        b = val.group_bounds()
        ideal = np.mean([oracles.ideal_dcg(val.label("s1")[s:e], 10) for s, e in zip(b[:-1], b[1:])])
        got = group_dcg(b, model.predict(val.features), val.item_id, val.label("s1"), 10).mean()
        assert model.n_trees <= 100
        assert got >= 0.99 * ideal

    def test_early_stopping_contract(self):
        train = ranking_data(60, seed=3, noise=1.5)
        val = ranking_data(30, seed=4, noise=1.5)
        cfg = TrainConfig(num_trees_max=400, early_stopping_patience=10, min_examples_per_leaf=5, learning_rate=0.3)
        model = fit(train, val, "s1", cfg)
        meta = model.training_meta
        t_star = meta["best_iteration"]
        assert model.n_trees == t_star
        assert meta["iterations"] <= t_star + 10
        hist = meta["validation_history"]
        assert meta["best_validation_dcg"] == max(hist) == hist[t_star]
        b = val.group_bounds()
        again = group_dcg(b, model.predict(val.features), val.item_id, val.label("s1"), 10).mean()
        assert again == pytest.approx(meta["best_validation_dcg"], abs=1e-12)

    def test_deterministic_bytes(self):
        train, val = ranking_data(40, seed=5), ranking_data(20, seed=6)
        cfg = TrainConfig(num_trees_max=30, min_examples_per_leaf=5, feature_fraction=0.67, seed=3)
        assert fit(train, val, "s1", cfg).dumps() == fit(train, val, "s1", cfg).dumps()

    def test_constant_labels(self):
        train, val = ranking_data(20, seed=7), ranking_data(10, seed=8)
        train.labels[:, 0] = 1.0
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            model = fit(train, val, "s1", TrainConfig(num_trees_max=20))
        assert caught and model.n_trees == 0 and model.training_meta["status"] == "degenerate"
        b = val.group_bounds()
        constant = group_dcg(b, np.zeros(len(val)), val.item_id, val.label("s1"), 10).mean()
        assert model.training_meta["best_validation_dcg"] == constant

    def test_pointwise_objective(self):
        train, val = ranking_data(50, seed=9), ranking_data(20, seed=10)
        model = fit(train, val, "s1", TrainConfig(objective="pointwise", num_trees_max=60, min_examples_per_leaf=5))
        assert model.base_score == pytest.approx(np.average(train.label("s1"),
                                                            weights=np.where(train.positive, model.training_meta[
                                                                "scale_pos_weight"], 1.0)))
        assert model.n_trees > 0

    def test_serialization_round_trip(self, tmp_path):
        train, val = ranking_data(40, seed=11), ranking_data(20, seed=12)
        model = fit(train, val, "s1", TrainConfig(num_trees_max=25, min_examples_per_leaf=5))
        path = tmp_path / "m.json"
        model.save(path)
        back = BoostedRanker.load(path)
        X = np.random.default_rng(0).normal(size=(1000, 3))
        assert np.array_equal(back.predict(X), model.predict(X))
        assert back.dumps() == model.dumps()
        with pytest.raises(ValueError):
            back.predict(np.zeros((2, 4)))

    def test_config_validation(self):
        for bad in (dict(objective="listnet"), dict(learning_rate=0), dict(histogram_bins=1),
                    dict(scale_pos_weight="sometimes"), dict(scale_pos_weight=-1.0), dict(max_depth=0)):
            with pytest.raises(ValueError):
                TrainConfig(**bad)
        with pytest.raises(ValueError):
            TrainConfig.from_dict({"learning_rat": 0.1})

    def test_auto_pos_weight(self):
        train, val = ranking_data(30, seed=13), ranking_data(10, seed=14)
        model = fit(train, val, "s1", TrainConfig(num_trees_max=3))
        pos = train.positive
        assert model.training_meta["scale_pos_weight"] == (~pos).sum() / pos.sum()


class TestSearch:
    def test_single_trial(self):
        train, val = ranking_data(30, seed=1), ranking_data(10, seed=2)
        best, trials, model = hyperparameter_search(train, val, "s1", {"max_depth": [2, 4]}, n_trials=1, seed=0,
                                                    base_config=TrainConfig(num_trees_max=10))
        assert len(trials) == 1 and best.max_depth == trials[0]["max_depth"]
        assert model.n_trees == trials[0]["n_trees"]

    def test_point_space_is_repeatable(self):
        train, val = ranking_data(30, seed=3), ranking_data(10, seed=4)
        space = {"learning_rate": 0.2, "max_depth": 3, "num_trees_max": 15, "min_examples_per_leaf": 5}
        _, trials, _ = hyperparameter_search(train, val, "s1", space, n_trials=5, seed=1)
        assert len({t["validation_dcg"] for t in trials}) == 1
        assert len({t["n_trees"] for t in trials}) == 1

    def test_rejects_diverging_config(self):
        train, val = ranking_data(60, seed=5, noise=0.5), ranking_data(30, seed=6, noise=0.5)
        space = {"learning_rate": {"choices": [0.1, 10.0]}, "num_trees_max": 40, "min_examples_per_leaf": 5}
        configs = sample_configs(space, 6, seed=2, base=TrainConfig())
        assert {c.learning_rate for c in configs} == {0.1, 10.0}
        best, trials, _ = hyperparameter_search(train, val, "s1", space, n_trials=6, seed=2)
        assert best.learning_rate == 0.1

    def test_trial_log_round_trip(self, tmp_path):
        train, val = ranking_data(20, seed=7), ranking_data(10, seed=8)
        _, trials, _ = hyperparameter_search(train, val, "s1", {"num_trees_max": [3, 6]}, n_trials=3, seed=3)
        path = tmp_path / "trials.csv"
        write_trial_log(trials, path, comment="provenance")
        rows = read_trial_log(path)
        assert len(rows) == 3
        assert float(rows[1]["validation_dcg"]) == trials[1]["validation_dcg"]

    def test_space_validation(self):
        with pytest.raises(ValueError):
            sample_configs({"sigma": [0.5, 2.0]}, 2, 0, TrainConfig())
        with pytest.raises(ValueError):
            sample_configs({"max_depth": [5, 2]}, 2, 0, TrainConfig())
        with pytest.raises(ValueError):
            sample_configs({"max_depth": 3}, 0, 0, TrainConfig())

    def test_draws_within_ranges(self):
        space = {"learning_rate": [0.01, 0.3], "max_depth": [2, 8], "num_trees_max": [10, 20],
                 "min_examples_per_leaf": {"choices": [5, 50]}}
        for c in sample_configs(space, 50, seed=4, base=TrainConfig()):
            assert 0.01 <= c.learning_rate <= 0.3 and 2 <= c.max_depth <= 8 and 10 <= c.num_trees_max <= 20
            assert isinstance(c.max_depth, int) and c.min_examples_per_leaf in (5, 50)


class TestObjectiveProperties:
    def test_hessian_second_differences(self):
        rng = np.random.default_rng(8)
        h_fd = 1e-4
        for _ in range(100):
            n = int(rng.integers(2, 9))
            s = rng.normal(size=n)
            y = rng.integers(0, 4, size=n).astype(float)
            pos = np.empty(n, dtype=np.int64)
            pos[np.lexsort((np.arange(n), -s))] = np.arange(1, n + 1)
            _, h = lambda_gradients(s, y)
            f = lambda x: pairwise_surrogate_loss(x, y, positions=pos)  # noqa: E731
            for i in range(n):
                up, dn = s.copy(), s.copy()
                up[i] += h_fd
                dn[i] -= h_fd
                second = (f(up) - 2 * f(s) + f(dn)) / h_fd ** 2
                assert abs(second - h[i]) <= 1e-3 * h[i] + 1e-6

    @pytest.mark.parametrize("c", [0.5, 3.0])
    def test_gain_scale_keeps_one_step_order(self, c):
        data = ranking_data(40, seed=21)
        scaled = ranking_data(40, seed=21)
        scaled.labels[:, 0] *= c
        cfg = TrainConfig(num_trees_max=1, max_depth=3, min_examples_per_leaf=5, l2_reg=0.0,
                          scale_pos_weight=1.0, early_stopping_patience=1)
        a = fit(data, data, "s1", cfg)
        b = fit(scaled, scaled, "s1", cfg)
        assert a.n_trees == b.n_trees == 1
        sa, sb = a.predict(data.features), b.predict(data.features)
        assert np.array_equal(np.argsort(sa, kind="stable"), np.argsort(sb, kind="stable"))

    def test_pointwise_constant_feature_mean(self):
        data = ranking_data(10, seed=22)
        data.features[:] = 1.0
        cfg = TrainConfig(objective="pointwise", num_trees_max=1, max_depth=1, min_examples_per_leaf=1,
                          scale_pos_weight=1.0, l2_reg=0.0)
        model = fit(data, data, "s1", cfg)
        assert np.all(np.abs(model.predict(data.features) - data.label("s1").mean()) <= 1e-9)

    def test_early_stopping_never_regresses(self):
        train = ranking_data(50, seed=23, noise=1.2)
        val = ranking_data(25, seed=24, noise=1.2)
        cfg = TrainConfig(num_trees_max=120, early_stopping_patience=15, min_examples_per_leaf=3, learning_rate=0.5)
        meta = fit(train, val, "s1", cfg).training_meta
        assert meta["best_validation_dcg"] >= max(meta["validation_history"][: meta["best_iteration"] + 1])
