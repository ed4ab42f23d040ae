import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from icforest.core import Dataset, Schema
from icforest.ctree import (SplitRule, Tree, TreeConfig, column_levels, find_split, grow_tree,
                            node_test, route, select_variable)
from icforest.npmle import logrank_scores, npmle_fit
from icforest.simgen import ScenarioSpec, generate


def numeric_dataset(X):
    X = np.asarray(X, dtype=float)
    n, m = X.shape
    schema = Schema.from_dict({f"x{j}": "numeric" for j in range(m)})
    return Dataset(np.zeros(n), np.ones(n), X, schema)


def tree_scores(data):
    curve = npmle_fit(data.left, data.right)
    return logrank_scores(data.left, data.right, curve)


class TestNodeTest:
    def test_permutation_moments(self):
        # exact moments over all 6! orderings of the scores
        rng = np.random.default_rng(0)
        U = rng.normal(size=6)
        x = rng.uniform(size=6)
        T = np.array([x @ U[list(p)] for p in itertools.permutations(range(6))])
        res = node_test(U, x[:, None], [0], np.ones(6), [0]).stats[0]
        np.testing.assert_allclose(res.mu, [T.mean()], rtol=1e-12)
        np.testing.assert_allclose(res.sigma_diag, [T.var()], rtol=1e-12)

    def test_case_weights_equal_replication(self):
        rng = np.random.default_rng(1)
        U = rng.normal(size=8)
        X = np.column_stack([rng.uniform(size=8), rng.integers(1, 4, 8)])
        w = rng.integers(0, 4, 8)
        a = node_test(U, X, [0, 3], w, [0, 1])
        Xr, Ur = np.repeat(X, w, axis=0), np.repeat(U, w)
        b = node_test(Ur, Xr, [0, 3], np.ones(len(Ur)), [0, 1])
        for sa, sb in zip(a.stats, b.stats):
            np.testing.assert_allclose(sa.sigma_diag, sb.sigma_diag, rtol=1e-12)
            assert sa.c_max == pytest.approx(sb.c_max, rel=1e-12)

    def test_constant_scores(self):
        X = np.random.default_rng(2).uniform(size=(20, 3))
        res = node_test(np.ones(20), X, [0, 0, 0], np.ones(20), [0, 1, 2])
        assert res.p_value == 1.0
        assert not res.informative

    def test_constant_covariate(self):
        U = np.random.default_rng(3).normal(size=20)
        res = node_test(U, np.ones((20, 1)), [0], np.ones(20), [0])
        assert res.p_value == 1.0

    def test_two_sample_by_hand(self):
        # 50 low scores in level 1, 50 high scores in level 2
        U = np.r_[np.zeros(50), np.ones(50)]
        x = np.r_[np.ones(50), 2 * np.ones(50)]
        res = node_test(U, x[:, None], [2], np.ones(100), [0])
        # T for level 1 is 0, mean 50 * 0.5, variance 0.25/99 * (100*50 - 2500)
        z = 25 / math.sqrt(0.25 / 99 * 2500)
        assert res.stats[0].c_max == pytest.approx(z)
        assert res.p_value < 1e-6

    def test_uniform_under_null(self):
        rng = np.random.default_rng(4)
        hits = 0
        for _ in range(200):
            U = rng.normal(size=2000)
            x = rng.uniform(size=2000)
            hits += node_test(U, x[:, None], [0], np.ones(2000), [0]).p_value < 0.05
        assert abs(hits / 200 - 0.05) <= 0.03

    @given(st.floats(0.1, 10), st.floats(-5, 5))
    def test_affine_score_invariance(self, a, b):
        rng = np.random.default_rng(5)
        U = rng.normal(size=30)
        X = np.column_stack([rng.uniform(size=30), rng.integers(1, 4, 30)])
        r1 = node_test(U, X, [0, 3], np.ones(30), [0, 1])
        r2 = node_test(a * U + b, X, [0, 3], np.ones(30), [0, 1])
        for s1, s2 in zip(r1.stats, r2.stats):
            assert s1.c_max == pytest.approx(s2.c_max, rel=1e-8)
        assert select_variable(r1) == select_variable(r2)


class TestSelectVariable:
    def test_argmin(self):
        assert select_variable([0.3, 0.001, 0.2]) == 1

    def test_tie(self):
        assert select_variable([0.01, 0.01]) == 0

    def test_single(self):
        assert select_variable([0.7]) == 0


class TestFindSplit:
    def test_middle_threshold(self):
        rule = find_split(np.array([1, 1, 5, 5.0]), np.array([1, 2, 3, 4.0]), 0, np.ones(4), 1, 0)
        assert rule.threshold == 2.5

    def test_minbucket_two_leaves_middle_only(self):
        # with minbucket 2 only the middle threshold keeps two per child
        rule = find_split(np.array([5, 1, 1, 1.0]), np.array([1, 2, 3, 4.0]), 0, np.ones(4), 2, 0)
        assert rule.threshold == 2.5

    def test_minbucket_three_none(self):
        rule = find_split(np.array([1, 1, 5, 5.0]), np.array([1, 2, 3, 4.0]), 0, np.ones(4), 3, 0)
        assert rule is None

    def test_minprob_strict(self):
        U = np.array([0, 1, 1, 1.0])
        x = np.array([1, 2, 3, 4.0])
        assert find_split(U, x, 0, np.ones(4), 0, 0.25) .threshold == 2.5
        assert find_split(U, x, 0, np.ones(4), 0, 0.0).threshold == 1.5

    def test_nominal_shared_low(self):
        x = np.array([1, 1, 2, 2, 3, 3.0])
        U = np.array([0, 0.1, 0, 0.1, 5, 5.1])
        rule = find_split(U, x, 3, np.ones(6), 1, 0)
        assert rule.subset == frozenset({1, 2})

    def test_nominal_tie_lexicographic(self):
        x = np.array([1, 2, 3, 4.0])
        U = np.array([0, 1, 0, 1.0])
        rule = find_split(U, x, 4, np.ones(4), 1, 0)
        assert rule.subset == frozenset({1, 3})

    def test_threshold_between_observed(self):
        rng = np.random.default_rng(7)
        x = rng.uniform(size=50)
        rule = find_split(rng.normal(size=50), x, 0, np.ones(50), 5, 0.01)
        xs = np.sort(x)
        k = np.searchsorted(xs, rule.threshold)
        assert xs[k - 1] < rule.threshold < xs[k]

    def test_too_many_levels(self):
        x = np.arange(1, 15, dtype=float)
        with pytest.raises(ValueError, match="12"):
            find_split(np.arange(14.0), x, 14, np.ones(14), 1, 0)


class TestRouting:
    def test_root_only(self):
        data = numeric_dataset(np.random.default_rng(0).uniform(size=(10, 2)))
        tree = grow_tree(data, np.zeros(10), np.ones(10), TreeConfig(), np.random.default_rng(0))
        assert tree.n_leaves == 1
        assert route(tree, [0.3, 0.9]) == 0

    def test_numeric_rule(self):
        assert SplitRule(0, threshold=2.5).goes_left(np.array([2.0, 3.0])).tolist() == [True, False]

    def test_unseen_level_goes_left(self):
        rule = SplitRule(0, subset=frozenset({2}), observed=frozenset({2, 3}))
        assert rule.goes_left(np.array([1.0, 2.0, 3.0])).tolist() == [True, True, False]


class TestGrowTree:
    def test_minsplit_above_n(self):
        data = generate(ScenarioSpec("tree", n=60, seed=1))
        tree = grow_tree(data, tree_scores(data), np.ones(60), TreeConfig(minsplit=61),
                         np.random.default_rng(0))
        assert tree.n_leaves == 1

    def test_noise_tiny_alpha_single_leaf(self):
        rng = np.random.default_rng(11)
        single = 0
        for _ in range(50):
            data = numeric_dataset(rng.uniform(size=(100, 5)))
            U = rng.normal(size=100)
            tree = grow_tree(data, U, np.ones(100), TreeConfig(alpha=1e-9), rng)
            single += tree.n_leaves == 1
        assert single >= 45

    def test_first_split_on_signal(self):
        hits = 0
        for seed in range(100):
            data = generate(ScenarioSpec("tree", n=500, seed=seed))
            U = tree_scores(data)
            test = node_test(U, data.X, column_levels(data), np.ones(500), range(10))
            hits += select_variable(test) in (0, 1, 2)
        assert hits >= 95

    def test_structure_invariants(self):
        data = generate(ScenarioSpec("tree", n=200, seed=3))
        U = tree_scores(data)
        w = np.random.default_rng(3).multinomial(200, np.full(200, 1 / 200))
        cfg = TreeConfig(alpha=1.0, mtry=3, minsplit=20, minbucket=7)
        tree = grow_tree(data, U, w, cfg, np.random.default_rng(9))
        sums = np.bincount(tree.leaf_of, weights=w, minlength=tree.n_leaves)
        assert sums.sum() == w.sum()
        assert (sums >= 7).all()
        np.testing.assert_array_equal(tree.route_matrix(data.X), tree.leaf_of)
        again = grow_tree(data, U, w, cfg, np.random.default_rng(9))
        assert again.to_dict() == tree.to_dict()

    def test_affine_scores_same_tree(self):
        data = generate(ScenarioSpec("tree", n=150, seed=4))
        U = tree_scores(data)
        cfg = TreeConfig(alpha=0.05)
        a = grow_tree(data, U, np.ones(150), cfg, np.random.default_rng(0))
        b = grow_tree(data, 3 * U - 2, np.ones(150), cfg, np.random.default_rng(0))
        assert a.to_dict() == b.to_dict()

    def test_row_permutation_same_partition(self):
        data = generate(ScenarioSpec("tree", n=150, seed=5))
        U = tree_scores(data)
        perm = np.random.default_rng(1).permutation(150)
        cfg = TreeConfig(alpha=0.05)
        a = grow_tree(data, U, np.ones(150), cfg, np.random.default_rng(0))
        b = grow_tree(data.subset(perm), U[perm], np.ones(150), cfg, np.random.default_rng(0))
        # same partition of rows, leaf labels may differ
        pairs = set(zip(a.leaf_of[perm].tolist(), b.leaf_of.tolist()))
        assert len(pairs) == a.n_leaves == b.n_leaves

    def test_json_round_trip(self):
        data = generate(ScenarioSpec("tree", n=120, seed=6))
        tree = grow_tree(data, tree_scores(data), np.ones(120), TreeConfig(alpha=1.0),
                         np.random.default_rng(0))
        back = Tree.from_dict(tree.to_dict())
        assert back.to_dict() == tree.to_dict()
        np.testing.assert_array_equal(back.route_matrix(data.X), tree.leaf_of)

    @pytest.mark.parametrize("kw", [{"alpha": 0}, {"mtry": 0}, {"minprob": 1.0},
                                    {"minbucket": -1}, {"maxdepth": -1}])
    def test_bad_config(self, kw):
        with pytest.raises(ValueError):
            TreeConfig(**kw)
