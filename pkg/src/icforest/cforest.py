"""Conditional-inference survival forest for interval-censored data.

Trees are grown on multinomial bootstrap samples with log-rank scores from
each sample's own NPMLE.  Predictions average per-tree leaf co-membership
weights over the original rows and refit a weighted NPMLE.
"""

from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import asdict, dataclass, replace

import numpy as np

from .core import Dataset, INF_TOKEN
from .ctree import Tree, TreeConfig, grow_tree
from .npmle import SurvivalCurve, logrank_scores, npmle_fit

MODEL_FORMAT = "icforest-model-v1"


class NoOOBError(ValueError):
    pass


@dataclass(frozen=True)
class ForestConfig:
    """Forest hyperparameters.

    ``mtry=None`` resolves to ``ceil(sqrt(m))``.  ``alpha=1`` disables
    significance stopping.  ``bootstrap="none"`` gives every tree unit weights.
    """

    n_trees: int = 100
    mtry: int | None = None
    minsplit: float = 20
    minprob: float = 0.01
    minbucket: float = 7
    maxdepth: int | None = None
    alpha: float = 1.0
    seed: int = 0
    bootstrap: str = "multinomial"

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.bootstrap not in ("multinomial", "none"):
            raise ValueError(f"unknown bootstrap scheme {self.bootstrap!r}")
        TreeConfig(self.alpha, self.mtry, self.minsplit, self.minbucket, self.minprob,
                   self.maxdepth)

    def resolved_mtry(self, m: int) -> int:
        if self.mtry is None:
            return math.ceil(math.sqrt(m))
        return min(self.mtry, m)

    def tree_config(self, m: int) -> TreeConfig:
        return TreeConfig(alpha=self.alpha, mtry=self.resolved_mtry(m),
                          minsplit=self.minsplit, minbucket=self.minbucket,
                          minprob=self.minprob, maxdepth=self.maxdepth)

    def to_dict(self) -> dict:
        return asdict(self)


def ctree_config(m: int, seed: int = 0, alpha: float = 0.05, **controls) -> ForestConfig:
    """A single unbootstrapped tree with significance stopping."""
    return ForestConfig(n_trees=1, mtry=m, alpha=alpha, seed=seed, bootstrap="none",
                        **controls)


def tree_rng(seed: int, b: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(b,)))


@dataclass
class Forest:
    config: ForestConfig
    trees: list[Tree]
    left: np.ndarray
    right: np.ndarray
    fingerprint: str
    m: int

    @property
    def n(self) -> int:
        return self.left.shape[0]

    @property
    def inbag(self) -> np.ndarray:
        return np.stack([t.inbag for t in self.trees])

    @property
    def leaves(self) -> np.ndarray:
        return np.stack([t.leaf_of for t in self.trees])

    def to_dict(self) -> dict:
        enc = [INF_TOKEN if math.isinf(r) else float(r) for r in self.right]
        return {"format": MODEL_FORMAT,
                "config": self.config.to_dict(),
                "schema_fingerprint": self.fingerprint,
                "m": self.m,
                "train": {"left": [float(x) for x in self.left], "right": enc},
                "trees": [t.to_dict() for t in self.trees]}

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "Forest":
        if d.get("format") != MODEL_FORMAT:
            raise ValueError(f"not an {MODEL_FORMAT} model file")
        right = np.array([math.inf if r == INF_TOKEN else float(r)
                          for r in d["train"]["right"]])
        return cls(ForestConfig(**d["config"]), [Tree.from_dict(t) for t in d["trees"]],
                   np.asarray(d["train"]["left"], dtype=float), right,
                   d["schema_fingerprint"], int(d["m"]))

    @classmethod
    def loads(cls, text: str) -> "Forest":
        return cls.from_dict(json.loads(text))

    def digest(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()


def bootstrap_weights(n: int, config: ForestConfig, rng: np.random.Generator) -> np.ndarray:
    if config.bootstrap == "none":
        return np.ones(n, dtype=np.int64)
    return rng.multinomial(n, np.full(n, 1.0 / n)).astype(np.int64)


def fit_tree(dataset: Dataset, config: ForestConfig, b: int) -> Tree:
    """Grow tree ``b`` of a forest from its own seed-derived stream."""
    rng = tree_rng(config.seed, b)
    w = bootstrap_weights(dataset.n, config, rng)
    inb = w > 0
    curve = npmle_fit(dataset.left, dataset.right, w)
    U = np.zeros(dataset.n)
    U[inb] = logrank_scores(dataset.left[inb], dataset.right[inb], curve,
                             exact_left_limit=True)
    return grow_tree(dataset, U, w, config.tree_config(dataset.m), rng)


def fit_forest(dataset: Dataset, config: ForestConfig = ForestConfig()) -> Forest:
    if np.unique(np.stack([dataset.left, dataset.right], 1), axis=0).shape[0] == 1:
        warnings.warn("all intervals identical: trees will be single leaves", RuntimeWarning,
                      stacklevel=2)
    trees = [fit_tree(dataset, config, b) for b in range(config.n_trees)]
    return Forest(config, trees, dataset.left.copy(), dataset.right.copy(),
                  dataset.schema.fingerprint(), dataset.m)


def fit_ctree(dataset: Dataset, seed: int = 0, alpha: float = 0.05, **controls) -> Forest:
    """Standalone tree, wrapped as a one-tree forest so prediction is shared."""
    return fit_forest(dataset, ctree_config(dataset.m, seed, alpha, **controls))


def _weights_from_leaves(leaves_new, leaves_train, members=None):
    """Average over trees of 1{same leaf} / leaf size.

    ``leaves_new`` is (B, k), ``leaves_train`` is (B, n); ``members`` (B, n)
    optionally restricts who counts as a leaf member.  Returns (k, n) weights
    and the per-row number of contributing trees.
    """
    B, k = leaves_new.shape
    n = leaves_train.shape[1]
    V = np.zeros((k, n))
    used = np.zeros(k)
    for b in range(B):
        lt = leaves_train[b]
        mem = np.ones(n, dtype=bool) if members is None else members[b]
        counts = np.bincount(lt[mem], minlength=max(lt.max(), leaves_new[b].max()) + 1)
        c = counts[leaves_new[b]]
        hit = (lt[None, :] == leaves_new[b][:, None]) & mem[None, :]
        ok = c > 0
        V[ok] += hit[ok] / c[ok, None]
        used += ok
    return V, used


def observation_weights(forest: Forest, X) -> np.ndarray:
    """Adaptive nearest-neighbour weights; one row per query, rows sum to 1."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    leaves_new = np.stack([t.route_matrix(X) for t in forest.trees])
    V, used = _weights_from_leaves(leaves_new, forest.leaves)
    if (used < len(forest.trees)).any():
        warnings.warn("some trees have an empty leaf for a query; they were skipped",
                      RuntimeWarning, stacklevel=2)
    if (used == 0).any():
        raise ValueError("no tree provides neighbours for a query row")
    return V / used[:, None]


def _fit_weighted(forest: Forest, v) -> SurvivalCurve:
    return npmle_fit(forest.left, forest.right, v)


def _curves_from_weights(forest: Forest, V, keys) -> list[SurvivalCurve]:
    cache: dict = {}
    out = []
    for k, key in enumerate(keys):
        if key not in cache:
            cache[key] = _fit_weighted(forest, V[k])
        out.append(cache[key])
    return out


def predict_curve(forest: Forest, x) -> SurvivalCurve:
    v = observation_weights(forest, np.asarray(x, dtype=float)[None, :])[0]
    return _fit_weighted(forest, v)


def predict_curves(forest: Forest, X) -> list[SurvivalCurve]:
    """Curves for many rows; rows routed identically by every tree share a fit."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    leaves_new = np.stack([t.route_matrix(X) for t in forest.trees])
    V, used = _weights_from_leaves(leaves_new, forest.leaves)
    if (used == 0).any():
        raise ValueError("no tree provides neighbours for a query row")
    V /= used[:, None]
    keys = [tuple(col) for col in leaves_new.T]
    return _curves_from_weights(forest, V, keys)


def oob_weights(forest: Forest, rows=None) -> tuple[np.ndarray, np.ndarray]:
    """OOB weights for training rows, plus the number of OOB trees per row.

    Only trees where the row is out-of-bag contribute, and leaf members are
    restricted to that tree's in-bag rows.  Rows without OOB trees get a zero
    weight vector.
    """
    inbag = forest.inbag
    leaves = forest.leaves
    rows = np.arange(forest.n) if rows is None else np.asarray(rows)
    k = rows.size
    V = np.zeros((k, forest.n))
    used = np.zeros(k)
    for b in range(len(forest.trees)):
        mem = inbag[b] > 0
        oob = ~mem[rows]
        if not oob.any():
            continue
        lt = leaves[b]
        counts = np.bincount(lt[mem], minlength=lt.max() + 1)
        lq = lt[rows[oob]]
        c = counts[lq]
        hit = (lt[None, :] == lq[:, None]) & mem[None, :]
        ok = c > 0
        sel = np.flatnonzero(oob)[ok]
        V[sel] += hit[ok] / c[ok, None]
        used[sel] += 1
    has = used > 0
    V[has] /= used[has, None]
    return V, used


def oob_predict(forest: Forest, i: int) -> SurvivalCurve:
    V, used = oob_weights(forest, [i])
    if used[0] == 0:
        raise NoOOBError(f"no OOB trees for row {i}")
    return _fit_weighted(forest, V[0])


def oob_curves(forest: Forest) -> list[SurvivalCurve | None]:
    """OOB curve per training row (None where the row is never out-of-bag)."""
    V, used = oob_weights(forest)
    out: list[SurvivalCurve | None] = []
    for i in range(forest.n):
        out.append(_fit_weighted(forest, V[i]) if used[i] > 0 else None)
    return out


def with_overrides(config: ForestConfig, **kw) -> ForestConfig:
    return replace(config, **{k: v for k, v in kw.items() if v is not None})
