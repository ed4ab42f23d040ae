"""Conditional-inference trees on log-rank scores.

Variable selection and split search both standardize linear statistics
``T = sum_i w_i g(X_i) U_i`` by their permutation-conditional moments.  For
a transformation ``g`` and scores ``U`` under case weights ``w`` (total
``W``):

    E[T]   = (sum_i w_i g_i) * hbar
    Var[T] = V_h / (W - 1) * (W * sum_i w_i g_i**2 - (sum_i w_i g_i)**2)

where ``hbar`` and ``V_h`` are the weighted mean and (1/W) variance of ``U``.
Numeric covariates use ``g(x) = x``; nominal ones use level indicators.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_ndtr

from .core import Dataset, MAX_NOMINAL_LEVELS

_VAR_EPS = 1e-12
_LOG2 = math.log(2.0)


@dataclass(frozen=True)
class TreeConfig:
    """Split controls.  ``maxdepth=None`` means unbounded; ``mtry=None`` means all."""

    alpha: float = 0.05
    mtry: int | None = None
    minsplit: float = 20
    minbucket: float = 7
    minprob: float = 0.01
    maxdepth: int | None = None

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        if self.mtry is not None and self.mtry < 1:
            raise ValueError("mtry must be >= 1")
        if not 0 <= self.minprob < 1:
            raise ValueError("minprob must lie in [0, 1)")
        if self.minsplit < 0 or self.minbucket < 0:
            raise ValueError("minsplit and minbucket must be non-negative")
        if self.maxdepth is not None and self.maxdepth < 0:
            raise ValueError("maxdepth must be non-negative")


@dataclass(frozen=True)
class LinearStatistic:
    variable: int
    t: np.ndarray
    mu: np.ndarray
    sigma_diag: np.ndarray
    c_max: float
    log_p: float

    @property
    def p_value(self) -> float:
        return math.exp(self.log_p)

    @property
    def informative(self) -> bool:
        return math.isfinite(self.c_max)


@dataclass(frozen=True)
class NodeTest:
    stats: list[LinearStatistic]
    log_p: float

    @property
    def p_value(self) -> float:
        return math.exp(self.log_p)

    @property
    def informative(self) -> bool:
        return any(s.informative for s in self.stats)


@dataclass(frozen=True)
class SplitRule:
    """Go left iff ``x <= threshold`` (numeric) or level in ``subset``.

    For nominal rules, levels absent from ``observed`` are sent left.
    """

    variable: int
    threshold: float | None = None
    subset: frozenset[int] | None = None
    observed: frozenset[int] | None = None
    statistic: float = field(default=float("nan"), compare=False)

    @property
    def is_nominal(self) -> bool:
        return self.subset is not None

    def goes_left(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.subset is None:
            return x <= self.threshold
        sub = np.isin(x, list(self.subset))
        unseen = ~np.isin(x, list(self.observed))
        return sub | unseen


def _score_moments(U, w):
    W = w.sum()
    hbar = (w @ U) / W
    Vh = (w @ (U - hbar) ** 2) / W
    return W, hbar, Vh


def _log_pvalue(c_max: float, n_comp: int) -> float:
    if not math.isfinite(c_max):
        return 0.0
    return min(0.0, math.log(n_comp) + _LOG2 + float(log_ndtr(-c_max)))


def node_test(scores, X, levels, weights, variables) -> NodeTest:
    """Test independence of scores and each covariate in ``variables``.

    Parameters
    ----------
    scores, weights : arrays of length n
        Rows with zero weight do not take part.
    X : (n, m) array
    levels : sequence of int
        Number of nominal levels per column, 0 for numeric.
    variables : sequence of int
        Candidate column indices.

    Per-variable p-values come from the normal tail of the max standardized
    component, Bonferroni-adjusted over the informative components; the
    global p-value is Bonferroni over ``len(variables)``.
    """
    w = np.asarray(weights, dtype=float)
    rows = np.flatnonzero(w > 0)
    if rows.size == 0:
        raise ValueError("node has no positive weights")
    w = w[rows]
    U = np.asarray(scores, dtype=float)[rows]
    W, hbar, Vh = _score_moments(U, w)
    stats = []
    const_scores = Vh <= 0 or W <= 1 or np.ptp(U) == 0
    for j in variables:
        x = X[rows, j]
        K = levels[j]
        if K:
            g = (x[:, None] == np.arange(1, K + 1)[None, :]).astype(float)
        else:
            g = x[:, None]
        wg = w @ g
        t = (w * U) @ g
        mu = wg * hbar
        sig = Vh / (W - 1) * (W * (w @ g**2) - wg**2) if W > 1 else np.zeros_like(wg)
        if K:
            ok = (wg > 0) & (wg < W)
        else:
            ok = np.array([np.ptp(x) > 0])
        ok &= sig >= _VAR_EPS
        if const_scores or not ok.any():
            c_max = math.nan
            n_comp = 1
        else:
            c_max = float(np.max(np.abs(t[ok] - mu[ok]) / np.sqrt(sig[ok])))
            n_comp = int(ok.sum())
        stats.append(LinearStatistic(int(j), t, mu, sig, c_max, _log_pvalue(c_max, n_comp)))
    best = min(s.log_p for s in stats)
    return NodeTest(stats, min(0.0, math.log(len(stats)) + best))


def select_variable(test: NodeTest | list) -> int:
    """Variable with the smallest p-value; ties go to the smallest index."""
    stats = test.stats if isinstance(test, NodeTest) else test
    if stats and not isinstance(stats[0], LinearStatistic):
        pv = list(stats)
        return int(min(range(len(pv)), key=lambda k: (pv[k], k)))
    best = min(stats, key=lambda s: (s.log_p, s.variable))
    return best.variable


def _admissible(Wl, W, minbucket, minprob):
    Wr = W - Wl
    return (Wl >= minbucket) & (Wr >= minbucket) & (Wl > minprob * W) & (Wr > minprob * W)


def find_split(scores, x, n_levels: int, weights, minbucket: float = 7,
               minprob: float = 0.01, variable: int = 0) -> SplitRule | None:
    """Best admissible binary split of one covariate.

    Candidates are scored by ``|T - E T| / sd(T)`` for the left-child
    indicator.  Returns None when no candidate passes ``minbucket`` and
    ``minprob`` in both children.
    """
    w = np.asarray(weights, dtype=float)
    rows = np.flatnonzero(w > 0)
    w = w[rows]
    U = np.asarray(scores, dtype=float)[rows]
    x = np.asarray(x, dtype=float)[rows]
    W, hbar, Vh = _score_moments(U, w)
    scale = Vh / (W - 1) if W > 1 else 0.0

    def standardized(Wl, Tl):
        var = scale * Wl * (W - Wl)
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.abs(Tl - Wl * hbar) / np.sqrt(var)
        return np.where(var > 0, z, 0.0)

    if n_levels:
        obs = np.unique(x).astype(int)
        if obs.size < 2:
            return None
        if obs.size > MAX_NOMINAL_LEVELS:
            raise ValueError(f"nominal split search is limited to {MAX_NOMINAL_LEVELS} levels")
        Wk = np.array([w[x == k].sum() for k in obs])
        Tk = np.array([(w * U)[x == k].sum() for k in obs])
        rest = obs.size - 1
        subsets = []
        for mask in range(2**rest - 1):
            chosen = [0] + [i + 1 for i in range(rest) if mask >> i & 1]
            subsets.append(tuple(chosen))
        subsets.sort(key=lambda c: tuple(obs[list(c)]))
        idx = [list(c) for c in subsets]
        Wl = np.array([Wk[c].sum() for c in idx])
        Tl = np.array([Tk[c].sum() for c in idx])
        ok = _admissible(Wl, W, minbucket, minprob)
        if not ok.any():
            return None
        z = np.where(ok, standardized(Wl, Tl), -np.inf)
        k = int(np.argmax(z))
        return SplitRule(variable, subset=frozenset(int(v) for v in obs[idx[k]]),
                         observed=frozenset(int(v) for v in obs), statistic=float(z[k]))

    order = np.argsort(x, kind="stable")
    xs, ws, us = x[order], w[order], U[order]
    last = np.flatnonzero(xs[1:] != xs[:-1])
    if last.size == 0:
        return None
    Wl = np.cumsum(ws)[last]
    Tl = np.cumsum(ws * us)[last]
    ok = _admissible(Wl, W, minbucket, minprob)
    if not ok.any():
        return None
    z = np.where(ok, standardized(Wl, Tl), -np.inf)
    k = int(np.argmax(z))
    lo, hi = xs[last[k]], xs[last[k] + 1]
    c = lo + (hi - lo) / 2
    if not lo <= c < hi:
        c = lo
    return SplitRule(variable, threshold=float(c), statistic=float(z[k]))


@dataclass
class Tree:
    """Fitted tree stored as flat node arrays.

    Internal nodes carry a :class:`SplitRule` and child indices; leaves carry
    consecutive leaf ids in depth-first order.  ``leaf_of`` holds the leaf of
    every original row, in-bag or not.
    """

    rules: list
    children: list
    leaf_ids: list
    inbag: np.ndarray
    leaf_of: np.ndarray = field(default=None)

    @property
    def n_leaves(self) -> int:
        return sum(1 for k in self.leaf_ids if k >= 0)

    def route_matrix(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.empty(X.shape[0], dtype=np.int64)
        stack = [(0, np.arange(X.shape[0]))]
        while stack:
            node, idx = stack.pop()
            if self.leaf_ids[node] >= 0:
                out[idx] = self.leaf_ids[node]
                continue
            rule = self.rules[node]
            go = rule.goes_left(X[idx, rule.variable])
            left, right = self.children[node]
            stack.append((left, idx[go]))
            stack.append((right, idx[~go]))
        return out

    def to_dict(self) -> dict:
        nodes = []
        for k, rule in enumerate(self.rules):
            if self.leaf_ids[k] >= 0:
                nodes.append({"leaf": int(self.leaf_ids[k])})
                continue
            d = {"var": rule.variable, "children": list(self.children[k])}
            if rule.is_nominal:
                d["kind"] = "nominal"
                d["subset"] = sorted(rule.subset)
                d["observed"] = sorted(rule.observed)
            else:
                d["kind"] = "numeric"
                d["threshold"] = rule.threshold
            nodes.append(d)
        return {"nodes": nodes, "inbag": self.inbag.tolist(), "leaf_of": self.leaf_of.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        rules, children, leaf_ids = [], [], []
        for node in d["nodes"]:
            if "leaf" in node:
                rules.append(None)
                children.append(None)
                leaf_ids.append(int(node["leaf"]))
                continue
            if node["kind"] == "nominal":
                rules.append(SplitRule(node["var"], subset=frozenset(node["subset"]),
                                       observed=frozenset(node["observed"])))
            else:
                rules.append(SplitRule(node["var"], threshold=float(node["threshold"])))
            children.append(tuple(node["children"]))
            leaf_ids.append(-1)
        return cls(rules, children, leaf_ids, np.asarray(d["inbag"], dtype=np.int64),
                   np.asarray(d["leaf_of"], dtype=np.int64))


def route(tree: Tree, x) -> int:
    return int(tree.route_matrix(np.asarray(x, dtype=float)[None, :])[0])


def column_levels(dataset: Dataset) -> list[int]:
    return [c.n_levels for c in dataset.schema.covariates]


def grow_tree(dataset: Dataset, scores, weights, config: TreeConfig,
              rng: np.random.Generator) -> Tree:
    """Grow one tree on the rows with positive case weight.

    A node becomes a leaf when its weight is below ``minsplit``, it sits at
    ``maxdepth``, no candidate covariate carries information, the global
    p-value exceeds ``alpha`` (only when ``alpha < 1``), or the selected
    covariate has no admissible split.
    """
    X = dataset.X
    levels = column_levels(dataset)
    if any(k > MAX_NOMINAL_LEVELS for k in levels):
        raise ValueError(f"nominal covariates are limited to {MAX_NOMINAL_LEVELS} levels")
    w_all = np.asarray(weights, dtype=float)
    U_all = np.asarray(scores, dtype=float)
    m = dataset.m
    mtry = m if config.mtry is None else min(config.mtry, m)
    maxdepth = math.inf if config.maxdepth is None else config.maxdepth

    rules, children, leaf_ids = [], [], []
    n_leaves = 0

    def new_node():
        rules.append(None)
        children.append(None)
        leaf_ids.append(-1)
        return len(rules) - 1

    def grow(node, rows, depth):
        nonlocal n_leaves

        def make_leaf():
            nonlocal n_leaves
            leaf_ids[node] = n_leaves
            n_leaves += 1

        w = w_all[rows]
        if w.sum() < config.minsplit or depth >= maxdepth or rows.size < 2:
            return make_leaf()
        variables = np.sort(rng.choice(m, size=mtry, replace=False))
        U = U_all[rows]
        Xn = X[rows]
        test = node_test(U, Xn, levels, w, variables)
        if not test.informative or (config.alpha < 1 and test.p_value > config.alpha):
            return make_leaf()
        j = select_variable(test)
        rule = find_split(U, Xn[:, j], levels[j], w, config.minbucket, config.minprob,
                          variable=j)
        if rule is None:
            return make_leaf()
        go = rule.goes_left(Xn[:, j])
        rules[node] = rule
        left, right = new_node(), new_node()
        children[node] = (left, right)
        grow(left, rows[go], depth + 1)
        grow(right, rows[~go], depth + 1)

    root = new_node()
    grow(root, np.flatnonzero(w_all > 0), 0)
    tree = Tree(rules, children, leaf_ids, np.asarray(weights).astype(np.int64))
    tree.leaf_of = tree.route_matrix(X)
    return tree
