"""Simulation benchmark: tree vs default forest vs auto-tuned forest."""

from __future__ import annotations

import logging
import warnings
from dataclasses import replace
from functools import partial

import numpy as np
from scipy.stats import binomtest

from ._parallel import ordered_map
from .cforest import ForestConfig, predict_curves
from .evaluate import MethodConfig, MetricReport, integrated_L2
from .simgen import ScenarioSpec, calibrate_k, generate

log = logging.getLogger(__name__)

DEFAULT_REPS = 50
DEFAULT_TREES = 50
METHODS = ("ctree", "cforest_default", "cforest_tuned")


def replicate_seed(seed: int, rep: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=(rep,)).generate_state(1)[0])


def method_configs(n_trees: int, seed: int, step_factor: float = 1.5) -> dict:
    base = ForestConfig(n_trees=n_trees, seed=seed)
    return {"ctree": MethodConfig("ctree", base),
            "cforest_default": MethodConfig("cforest", base),
            "cforest_tuned": MethodConfig("cforest", base, auto_tune=True,
                                          step_factor=step_factor)}


def _l2(method: MethodConfig, data, truth) -> float:
    model = method.fit(data)
    curves = predict_curves(model, data.X)
    return integrated_L2(truth.curves, curves, truth.T)


def run_replicate(item, n_trees: int = DEFAULT_TREES, methods=METHODS,
                  oracle: bool = True, step_factor: float = 1.5) -> MetricReport:
    """Generate one dataset and score every method on it.

    ``item`` is ``(scenario, rep, k)``; ``k`` is the calibrated exam count.
    """
    scenario, rep, k = item
    seed = replicate_seed(scenario.seed, rep)
    report = MetricReport()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        data = generate(replace(scenario, seed=seed), k=k)
        exact = data.oracle()
        configs = method_configs(n_trees, seed, step_factor)
        for name in methods:
            targets = [("l2", data)] + ([("l2_oracle", exact)] if oracle else [])
            for metric, d in targets:
                try:
                    report.add(scenario.name, name, rep, metric, _l2(configs[name], d, data.truth))
                except (ValueError, FloatingPointError) as exc:
                    msg = f"{scenario.name} rep {rep} {name} {metric}: {exc}"
                    log.warning(msg)
                    report.failures.append({"scenario": scenario.name, "method": name,
                                            "replicate": rep, "metric": metric,
                                            "error": str(exc)})
    return report


def exam_count(scenario: ScenarioSpec) -> int | None:
    """Calibrated exam count, shared by every replicate of a cell."""
    if scenario.rc == 0:
        return None
    cal = np.random.default_rng(np.random.SeedSequence(scenario.seed, spawn_key=(3,)))
    return calibrate_k(scenario, scenario.rc, cal)


def run_bench(scenarios, reps: int = DEFAULT_REPS, n_trees: int = DEFAULT_TREES,
              methods=METHODS, oracle: bool = True, threads: int | None = None,
              step_factor: float = 1.5) -> MetricReport:
    """Run every scenario for ``reps`` replicates.

    Replicate ``r`` of a scenario with base seed ``s`` simulates and fits with
    a seed derived from ``(s, r)``, so results do not depend on ``threads``.
    """
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise ValueError(f"unknown methods {sorted(unknown)}")
    items = []
    for sc in scenarios:
        k = exam_count(sc)
        items.extend((sc, r, k) for r in range(reps))
    parts = ordered_map(partial(run_replicate, n_trees=n_trees, methods=tuple(methods),
                                oracle=oracle, step_factor=step_factor), items, threads)
    report = MetricReport()
    for p in parts:
        report.extend(p)
    return report


def sign_test(a, b) -> float:
    """One-sided sign test p-value for ``a < b`` over paired values."""
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    d = d[d != 0]
    if d.size == 0:
        return 1.0
    return float(binomtest(int((d < 0).sum()), d.size, 0.5, alternative="greater").pvalue)
