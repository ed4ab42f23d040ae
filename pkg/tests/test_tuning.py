import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from icforest.cforest import ForestConfig
from icforest.core import Dataset, Schema
from icforest.npmle import SurvivalCurve, npmle_fit
from icforest.simgen import ScenarioSpec, generate
from icforest.tuning import (auto_tune, indicator_estimate, interval_brier, mtry_pool,
                             round_half_away, rule_15_default_6, tune_mtry)


def constant_half():
    # point mass 0.5 at zero, the rest beyond any horizon
    return SurvivalCurve(np.array([0.0, 100.0]), np.array([0.0, np.inf]), np.array([0.5, 0.5]))


class TestIndicator:
    curve = SurvivalCurve(np.array([0.0, 1.0, 2.0]), np.array([1.0, 2.0, 3.0]),
                          np.array([0.2, 0.6, 0.2]))

    def test_before_left(self):
        assert indicator_estimate(self.curve, 1.0, 2.0, 0.5) == 1.0
        assert indicator_estimate(self.curve, 1.0, 2.0, 1.0) == 1.0

    def test_after_right(self):
        assert indicator_estimate(self.curve, 1.0, 2.0, 2.5) == 0.0

    def test_midpoint(self):
        # S(L) = 0.8, S(R) = 0.2, S(1.5) = 0.5
        assert indicator_estimate(self.curve, 1.0, 2.0, 1.5) == pytest.approx(0.5)

    def test_flat_denominator(self):
        c = SurvivalCurve(np.array([5.0]), np.array([6.0]), np.array([1.0]))
        assert indicator_estimate(c, 1.0, 2.0, 1.5) == 0.5

    def test_right_censored(self):
        assert indicator_estimate(self.curve, 1.0, np.inf, 1.5) == pytest.approx(0.5 / 0.8)

    def test_negative_t(self):
        with pytest.raises(ValueError):
            indicator_estimate(self.curve, 1.0, 2.0, -1.0)


class TestIntervalBrier:
    schema = Schema.from_dict({"x": "numeric"})

    def test_constant_half_exact_at_midpoint(self):
        d = Dataset([1.0, 0.0], [1.0, 2.0], [[0.0], [0.0]], self.schema)
        assert interval_brier(d, [constant_half(), None]) == pytest.approx(0.25, abs=1e-12)

    def test_self_consistent_zero(self):
        d = Dataset([1.0], [2.0], [[0.0]], self.schema)
        c = SurvivalCurve(np.array([1.0]), np.array([2.0]), np.array([1.0]))
        assert interval_brier(d, [c]) == pytest.approx(0.0, abs=1e-15)

    def test_duplication_invariant(self):
        data = generate(ScenarioSpec("tree", n=30, seed=2))
        curve = npmle_fit(data.left, data.right)
        a = interval_brier(data, [curve] * 30)
        dd = data.subset(np.r_[np.arange(30), np.arange(30)])
        assert interval_brier(dd, [curve] * 60) == pytest.approx(a, rel=1e-12)

    def test_all_zero_endpoints(self):
        d = Dataset([0.0], [0.0], [[0.0]], self.schema)
        with pytest.raises(ValueError):
            interval_brier(d, [constant_half()])

    @given(st.integers(0, 2**16))
    def test_non_negative(self, seed):
        data = generate(ScenarioSpec("linear", n=15, seed=seed))
        curve = npmle_fit(data.left, data.right)
        assert interval_brier(data, [curve] * 15) >= 0


class TestPool:
    def test_m10(self):
        assert mtry_pool(10, 1.5) == [1, 2, 3, 5, 7, 10]

    def test_m1(self):
        assert mtry_pool(1) == [1]

    @given(st.integers(1, 200), st.floats(1.05, 4.0))
    def test_contains_ends(self, m, s):
        pool = mtry_pool(m, s)
        assert pool[0] == 1 and pool[-1] == m
        assert pool == sorted(set(pool))

    def test_bad_step(self):
        with pytest.raises(ValueError):
            mtry_pool(10, 1.0)

    def test_rounding(self):
        assert round_half_away(2.5) == 3
        assert round_half_away(-2.5) == -3
        assert round_half_away(2.4999) == 2


class TestRule:
    @pytest.mark.parametrize("n,expected", [(200, (30, 0.01, 12)), (500, (75, 0.01, 30)),
                                            (1000, (150, 0.01, 60))])
    def test_values(self, n, expected):
        assert rule_15_default_6(n) == expected

    def test_monotone_and_ordered(self):
        prev = (0, 0)
        for n in range(1, 3000):
            ms, _, mb = rule_15_default_6(n)
            assert ms >= prev[0] and mb >= prev[1]
            assert ms >= mb
            if n >= 10:
                assert ms > mb
            prev = (ms, mb)

    def test_small_n_tie(self):
        # 1.35 and 0.54 both round to 1
        assert rule_15_default_6(9) == (1, 0.01, 1)


@pytest.fixture(scope="module")
def data():
    return generate(ScenarioSpec("nonlinear", n=120, seed=9))


@pytest.mark.filterwarnings("ignore:.*no out-of-bag tree:RuntimeWarning")
class TestTune:
    def test_selected_not_worse_than_default(self, data):
        res = tune_mtry(data, ForestConfig(n_trees=20, seed=1))
        default = math.ceil(math.sqrt(data.m))
        assert default in res.pool
        assert res.best_ibs <= res.oob_ibs[res.pool.index(default)]
        assert res.forest.config.mtry == res.selected

    def test_deterministic(self, data):
        a = tune_mtry(data, ForestConfig(n_trees=10, seed=3))
        b = tune_mtry(data, ForestConfig(n_trees=10, seed=3))
        assert a.to_dict() == b.to_dict()
        assert a.forest.dumps() == b.forest.dumps()

    def test_threads_do_not_change_result(self, data):
        a = tune_mtry(data, ForestConfig(n_trees=5, seed=3), threads=1)
        b = tune_mtry(data, ForestConfig(n_trees=5, seed=3), threads=3)
        assert a.to_dict() == b.to_dict()

    def test_single_covariate_one_fit(self):
        schema = Schema.from_dict({"x": "numeric"})
        data = generate(ScenarioSpec("linear", n=40, seed=1))
        d1 = Dataset(data.left, data.right, data.X[:, :1], schema)
        res = tune_mtry(d1, ForestConfig(n_trees=5))
        assert res.pool == [1] and res.selected == 1

    def test_auto_tune_applies_rule(self, data):
        res = auto_tune(data, ForestConfig(n_trees=5, seed=0))
        cfg = res.forest.config
        assert (cfg.minsplit, cfg.minprob, cfg.minbucket) == rule_15_default_6(120)
