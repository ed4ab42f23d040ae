"""Out-of-bag tuning of ``mtry`` with the interval-censored Brier score.

Also holds the sample-size rule for ``minsplit``/``minprob``/``minbucket``
(15% of n, the default 0.01, 6% of n).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from functools import partial

import numpy as np

from ._parallel import ordered_map
from .cforest import Forest, ForestConfig, fit_forest, oob_curves
from .core import Dataset
from .npmle import SurvivalCurve

GRID_POINTS = 512
DEFAULT_MINPROB = 0.01


def round_half_away(x: float) -> int:
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


def rule_15_default_6(n: int) -> tuple[int, float, int]:
    """(minsplit, minprob, minbucket) scaled to the sample size."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return round_half_away(0.15 * n), DEFAULT_MINPROB, round_half_away(0.06 * n)


def indicator_estimate(curve: SurvivalCurve, left: float, right: float, t):
    """Estimated ``1{T > t}`` for an event known to lie in ``(left, right]``."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be >= 0")
    sL = curve.survival(left)
    sR = curve.survival(right)
    den = sL - sR
    if den < 1e-12:
        mid = np.full(t.shape, 0.5)
    else:
        mid = np.clip((curve.survival(t) - sR) / den, 0.0, 1.0)
    out = np.where(t <= left, 1.0, np.where(np.isfinite(right) & (t > right), 0.0, mid))
    return float(out) if out.ndim == 0 else out


def _grid(t_max: float, *extra) -> np.ndarray:
    pts = [np.linspace(0.0, t_max, GRID_POINTS)]
    for e in extra:
        e = np.asarray(e, dtype=float)
        pts.append(e[np.isfinite(e) & (e >= 0) & (e <= t_max)])
    return np.unique(np.concatenate(pts))


def interval_brier(dataset: Dataset, curves) -> float:
    """Integrated Brier score for interval-censored data.

    Rows whose curve is None are skipped.  The time horizon is the largest
    finite interval endpoint.  Each row is integrated by the trapezoid rule on
    a 512-point grid merged with that row's curve breakpoints and endpoints.
    """
    left, right = dataset.left, dataset.right
    ends = np.concatenate([left, right])
    t_max = float(ends[np.isfinite(ends)].max())
    if t_max <= 0:
        raise ValueError("all interval endpoints are zero")
    total, count = 0.0, 0
    for i, curve in enumerate(curves):
        if curve is None:
            continue
        t = _grid(t_max, curve.breakpoints(), [left[i], right[i]])
        err = (indicator_estimate(curve, left[i], right[i], t) - curve.survival(t)) ** 2
        total += np.trapezoid(err, t) / t_max
        count += 1
    if count == 0:
        raise ValueError("no curves to score")
    return total / count


def mtry_pool(m: int, step_factor: float = 1.5) -> list[int]:
    """Candidate mtry values spreading geometrically around sqrt(m)."""
    s = step_factor
    if s <= 1:
        raise ValueError("step factor must exceed 1")
    if m < 1:
        raise ValueError("m must be >= 1")
    root = math.sqrt(m)
    r1 = 0
    while root / s ** (r1 + 1) > 1:
        r1 += 1
    r2 = 0
    while root * s ** (r2 + 1) < m:
        r2 += 1
    values = {1, m}
    for r in range(-r1, r2 + 1):
        values.add(min(max(round_half_away(root * s**r), 1), m))
    return sorted(values)


@dataclass
class TuneResult:
    pool: list[int]
    oob_ibs: list[float]
    selected: int
    forest: Forest
    excluded_rows: int = 0

    @property
    def best_ibs(self) -> float:
        return self.oob_ibs[self.pool.index(self.selected)]

    def to_dict(self) -> dict:
        return {"pool": self.pool, "oob_ibs": self.oob_ibs, "selected": self.selected}


def oob_brier(forest: Forest, dataset: Dataset) -> tuple[float, int]:
    curves = oob_curves(forest)
    missing = sum(c is None for c in curves)
    return interval_brier(dataset, curves), missing


def _candidate(mtry: int, dataset: Dataset, template: ForestConfig):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        forest = fit_forest(dataset, replace(template, mtry=mtry))
    ibs, missing = oob_brier(forest, dataset)
    return forest, float(ibs), missing


def tune_mtry(dataset: Dataset, template: ForestConfig = ForestConfig(),
              step_factor: float = 1.5, threads: int = 1) -> TuneResult:
    """Pick mtry by out-of-bag integrated Brier score.

    Every candidate is fitted with the template's seed.  The default
    ``ceil(sqrt(m))`` is always evaluated alongside the geometric pool.  Ties
    go to the smaller mtry.  Candidates may be fitted in ``threads`` worker
    processes without changing the result.
    """
    m = dataset.m
    pool = sorted(set(mtry_pool(m, step_factor)) | {math.ceil(math.sqrt(m))})
    fits = ordered_map(partial(_candidate, dataset=dataset, template=template), pool, threads)
    forests = [f[0] for f in fits]
    scores = [f[1] for f in fits]
    excluded = max(f[2] for f in fits)
    if excluded:
        warnings.warn(f"{excluded} rows had no out-of-bag tree and were excluded",
                      RuntimeWarning, stacklevel=2)
    best = min(range(len(pool)), key=lambda k: (scores[k], pool[k]))
    return TuneResult(pool, scores, pool[best], forests[best], excluded)


def auto_tune(dataset: Dataset, template: ForestConfig = ForestConfig(),
              step_factor: float = 1.5, threads: int = 1) -> TuneResult:
    """Apply the sample-size rule to the split controls, then tune mtry."""
    minsplit, minprob, minbucket = rule_15_default_6(dataset.n)
    base = replace(template, minsplit=minsplit, minprob=minprob, minbucket=minbucket)
    return tune_mtry(dataset, base, step_factor, threads)
