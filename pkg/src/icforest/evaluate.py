"""Estimation metrics: integrated L2 to truth, medians, outside-interval
rates and the leave-one-out harness."""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import dataclass, field, replace
from functools import partial

import numpy as np

from ._parallel import ordered_map
from .cforest import ForestConfig, ctree_config, fit_forest, predict_curve
from .core import Dataset
from .npmle import SurvivalCurve
from .tuning import GRID_POINTS, auto_tune

MEDIAN_TOL = 1e-12
TIDY_HEADER = ("scenario", "method", "replicate", "metric", "value")


def integrated_L2(true_curves, est_curves, T, grid_points: int = GRID_POINTS) -> float:
    """Mean over rows of the normalized integral of (S_hat - S)^2 on [0, max T].

    Each row uses the trapezoid rule on ``grid_points`` uniform points merged
    with the finite breakpoints of either curve that has them.
    """
    T = np.asarray(T, dtype=float)
    if T.size == 0 or len(true_curves) == 0:
        raise ValueError("missing truth")
    if len(true_curves) != len(est_curves):
        raise ValueError("need one estimated curve per true curve")
    t_max = float(T.max())
    if not np.isfinite(t_max) or t_max <= 0:
        raise ValueError("max event time must be positive and finite")
    base = np.linspace(0.0, t_max, grid_points)
    total = 0.0
    for s_true, s_hat in zip(true_curves, est_curves):
        pts = [base]
        for c in (s_true, s_hat):
            if hasattr(c, "breakpoints"):
                b = c.breakpoints()
                pts.append(b[(b >= 0) & (b <= t_max)])
        t = np.unique(np.concatenate(pts))
        d = np.asarray(s_hat.survival(t)) - np.asarray(s_true.survival(t))
        total += np.trapezoid(d * d, t) / t_max
    return total / len(true_curves)


def median_time(curve: SurvivalCurve) -> float | None:
    """Smallest t with S(t) <= 0.5, or None if the curve never gets there."""
    u = curve.mass
    after = np.cumsum(u[::-1])[::-1] - u  # S just past each support
    before = after + u
    hit = np.flatnonzero((u > 0) & (after <= 0.5 + MEDIAN_TOL))
    if hit.size == 0:
        return None
    j = int(hit[0])
    p, q = float(curve.tau_left[j]), float(curve.tau_right[j])
    if p == q or before[j] <= 0.5 + MEDIAN_TOL:
        return p
    if math.isinf(q):
        return None
    return p + (before[j] - 0.5) / u[j] * (q - p)


def outside_metrics(medians, left, right) -> tuple[float, float | None]:
    """(p_out, d_out) for predicted medians against (L, R].

    A median equal to L counts as outside with distance 0.  Undefined
    medians (None or nan) are dropped before averaging.
    """
    med = np.array([np.nan if m is None else m for m in medians], dtype=float)
    left = np.asarray(left, dtype=float)
    right = np.asarray(right, dtype=float)
    if not (med.shape == left.shape == right.shape):
        raise ValueError("need one median per observation")
    ok = ~np.isnan(med)
    if not ok.any():
        raise ValueError("no defined medians")
    med, left, right = med[ok], left[ok], right[ok]
    below = med <= left
    above = med > right
    out = below | above
    p_out = float(out.mean())
    if not out.any():
        return p_out, None
    dist = np.where(below, left - med, med - right)[out]
    return p_out, float(dist.mean())


@dataclass(frozen=True)
class MethodConfig:
    """A fitting recipe: ``ctree`` or ``cforest``, optionally auto-tuned."""

    method: str = "cforest"
    forest: ForestConfig = ForestConfig()
    auto_tune: bool = False
    step_factor: float = 1.5
    alpha: float = 0.05

    def __post_init__(self):
        if self.method not in ("ctree", "cforest"):
            raise ValueError(f"unknown method {self.method!r}")

    def fit(self, dataset: Dataset):
        if self.method == "ctree":
            f = self.forest
            cfg = ctree_config(dataset.m, f.seed, self.alpha, minsplit=f.minsplit,
                               minbucket=f.minbucket, minprob=f.minprob, maxdepth=f.maxdepth)
            return fit_forest(dataset, cfg)
        if self.auto_tune:
            return auto_tune(dataset, self.forest, self.step_factor).forest
        return fit_forest(dataset, self.forest)

    def to_dict(self) -> dict:
        return {"method": self.method, "forest": self.forest.to_dict(),
                "auto_tune": self.auto_tune, "step_factor": self.step_factor,
                "alpha": self.alpha}

    @classmethod
    def from_dict(cls, d: dict) -> "MethodConfig":
        d = dict(d)
        d["forest"] = ForestConfig(**d.get("forest", {}))
        return cls(**d)


@dataclass
class MetricReport:
    """Tidy metric rows ``(scenario, method, replicate, metric, value)``."""

    rows: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    medians: list | None = None

    def add(self, scenario: str, method: str, replicate: int, metric: str, value):
        if value is not None and metric in ("l2", "l2_oracle", "d_out") and value < 0:
            raise ValueError(f"{metric} must be >= 0")
        if value is not None and metric == "p_out" and not 0 <= value <= 1:
            raise ValueError("p_out must lie in [0, 1]")
        self.rows.append((scenario, method, int(replicate), metric, value))

    def extend(self, other: "MetricReport"):
        self.rows.extend(other.rows)
        self.failures.extend(other.failures)

    def values(self, metric: str, method: str | None = None,
               scenario: str | None = None) -> np.ndarray:
        return np.array([r[4] for r in self.rows
                         if r[3] == metric and r[4] is not None
                         and (method is None or r[1] == method)
                         and (scenario is None or r[0] == scenario)], dtype=float)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TIDY_HEADER)
        for s, meth, rep, metric, v in self.rows:
            w.writerow((s, meth, rep, metric, "" if v is None else repr(float(v))))
        return buf.getvalue()

    def summary(self) -> dict:
        """Median and quartiles per (scenario, method, metric) cell."""
        cells: dict = {}
        for s, meth, _, metric, v in self.rows:
            if v is not None:
                cells.setdefault((s, meth, metric), []).append(v)
        out = []
        for (s, meth, metric), vals in sorted(cells.items()):
            q1, med, q3 = np.quantile(np.asarray(vals, dtype=float), [0.25, 0.5, 0.75])
            out.append({"scenario": s, "method": meth, "metric": metric, "n": len(vals),
                        "q1": float(q1), "median": float(med), "q3": float(q3)})
        return {"cells": out, "failures": self.failures}

    def summary_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "MetricReport":
        rep = cls()
        reader = csv.reader(io.StringIO(text))
        header = next(reader)
        if tuple(header) != TIDY_HEADER:
            raise ValueError(f"unexpected report header {header}")
        for s, meth, r, metric, v in reader:
            rep.rows.append((s, meth, int(r), metric, float(v) if v else None))
        return rep


def _loocv_fold(i: int, dataset: Dataset, method: MethodConfig):
    rows = np.delete(np.arange(dataset.n), i)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            model = method.fit(dataset.subset(rows))
            curve = predict_curve(model, dataset.X[i])
    except (ValueError, FloatingPointError) as exc:
        return i, None, f"{type(exc).__name__}: {exc}"
    return i, median_time(curve), None


def loocv(dataset: Dataset, method: MethodConfig = MethodConfig(), threads: int | None = None,
          scenario: str = "data", replicate: int = 0,
          label: str | None = None) -> MetricReport:
    """Leave-one-out medians scored by ``outside_metrics``.

    Every fold is fitted with the same seed.  Failed folds are recorded in
    ``failures`` and excluded from the metrics.
    """
    if dataset.n < 2:
        raise ValueError("loocv needs n >= 2")
    results = ordered_map(partial(_loocv_fold, dataset=dataset, method=method),
                          range(dataset.n), threads)
    report = MetricReport()
    meds: list = []
    for i, med, err in results:
        if err is not None:
            report.failures.append({"fold": i, "error": err})
        meds.append(med)
    label = label or method.method
    ok = [k for k, m in enumerate(meds) if m is not None]
    report.add(scenario, label, replicate, "n_undefined",
               float(sum(m is None for m in meds) - len(report.failures)))
    if ok:
        p_out, d_out = outside_metrics([meds[k] for k in ok], dataset.left[ok],
                                       dataset.right[ok])
        report.add(scenario, label, replicate, "p_out", p_out)
        report.add(scenario, label, replicate, "d_out", d_out)
    report.medians = meds
    return report


def with_seed(method: MethodConfig, seed: int) -> MethodConfig:
    return replace(method, forest=replace(method.forest, seed=seed))
