"""Simulated interval-censored benchmark data.

Three covariate-to-survival setups (tree, linear, nonlinear) crossed with
five event-time families, examination-gap widths G1-G3 and optional
right-censoring by truncating the examination sequence.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri

from .core import Covariate, Dataset, Schema, Truth

SETUPS = ("tree", "linear", "nonlinear")
FAMILIES = ("exponential", "weibull_dec", "weibull_inc", "lognormal", "hjorth")
GAPS = {"G1": (0.15, 0.35), "G2": (0.75, 0.95), "G3": (1.65, 1.85)}
RC_RATES = (0.0, 0.2, 0.4)

# parameters for the four leaf groups of the tree setup
TREE_PARAMS = {
    "exponential": [{"rate": r} for r in (0.1, 0.23, 0.4, 0.9)],
    "weibull_dec": [{"shape": 0.9, "scale": s} for s in (7.0, 3.0, 2.5, 1.0)],
    "weibull_inc": [{"shape": 3.0, "scale": s} for s in (2.0, 4.3, 6.2, 10.0)],
    "lognormal": [{"mu": mu, "sigma": sd}
                  for mu, sd in ((2.0, 0.3), (1.7, 0.2), (1.3, 0.3), (0.5, 0.5))],
    "hjorth": [{"a": a, "b": 1.0, "c": 5.0} for a in (0.01, 0.15, 0.20, 0.90)],
}

CALIBRATION_DRAWS = 10_000
RATE_TOLERANCE = 0.05


class CalibrationWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class DistributionSpec:
    """Event-time law.  ``params`` values may be scalars or broadcastable arrays.

    Families and parameters: ``exponential(rate)``, ``weibull(shape, scale)``
    with ``S = exp(-(t/scale)**shape)``, ``lognormal(mu, sigma)`` on log-time,
    ``hjorth(a, b, c)`` with ``S = exp(-a t^2 / 2) / (1 + c t)**(b / c)``.
    """

    family: str
    params: dict = field(hash=False)

    def __post_init__(self):
        need = {"exponential": ("rate",), "weibull": ("shape", "scale"),
                "lognormal": ("mu", "sigma"), "hjorth": ("a", "b", "c")}
        if self.family not in need:
            raise ValueError(f"unknown family {self.family!r}")
        for name in need[self.family]:
            if name not in self.params:
                raise ValueError(f"{self.family} needs parameter {name!r}")
            if name != "mu" and np.any(np.asarray(self.params[name]) <= 0):
                raise ValueError(f"{self.family} parameter {name} must be > 0")

    def survival(self, t):
        t = np.asarray(t, dtype=float)
        p = self.params
        with np.errstate(divide="ignore"):
            if self.family == "exponential":
                return np.exp(-p["rate"] * t)
            if self.family == "weibull":
                return np.exp(-(t / p["scale"]) ** p["shape"])
            if self.family == "lognormal":
                z = (np.log(np.maximum(t, 0.0)) - p["mu"]) / p["sigma"]
                return np.where(t > 0, ndtr(-z), 1.0)
        a, b, c = p["a"], p["b"], p["c"]
        return np.exp(-0.5 * a * t**2) / (1.0 + c * t) ** (b / c)

    def inverse_survival(self, u, tol: float = 1e-10):
        """Time ``t`` with ``S(t) = u``."""
        u = np.asarray(u, dtype=float)
        p = self.params
        if self.family == "exponential":
            return -np.log(u) / p["rate"]
        if self.family == "weibull":
            return p["scale"] * (-np.log(u)) ** (1.0 / p["shape"])
        if self.family == "lognormal":
            return np.exp(p["mu"] - p["sigma"] * ndtri(u))
        return self._bisect(u, tol)

    def _bisect(self, u, tol):
        shape = np.broadcast_shapes(u.shape, *(np.shape(v) for v in self.params.values()))
        u = np.broadcast_to(u, shape)
        lo = np.zeros(u.shape)
        hi = np.ones(u.shape)
        while True:
            short = self.survival(hi) >= u
            if not short.any():
                break
            hi = np.where(short, hi * 2.0, hi)
        while np.max(hi - lo) > tol:
            mid = 0.5 * (lo + hi)
            above = self.survival(mid) >= u
            lo = np.where(above, mid, lo)
            hi = np.where(above, hi, mid)
        return 0.5 * (lo + hi)

    def sample(self, size, rng: np.random.Generator):
        u = 1.0 - rng.random(size)  # in (0, 1]
        return self.inverse_survival(u)

    def row(self, i: int) -> "DistributionSpec":
        """Scalar spec of row ``i`` when parameters are arrays."""
        return DistributionSpec(self.family, {
            k: float(v if np.ndim(v) == 0 else v[i]) for k, v in self.params.items()})

    def label(self) -> str:
        args = ",".join(f"{k}={float(v)!r}" for k, v in sorted(self.params.items()))
        return f"{self.family}({args})"


def draw_event_time(spec: DistributionSpec, rng: np.random.Generator) -> float:
    return float(spec.sample(None, rng))


def theta(setup: str, x) -> np.ndarray | float:
    """Location parameter of the linear and nonlinear setups (uses X1, X2)."""
    x = np.asarray(x, dtype=float)
    x1, x2 = x[..., 0], x[..., 1]
    if setup == "linear":
        out = -x1 - x2
    elif setup == "nonlinear":
        s = x1 + x2
        out = -(-np.cos(s * np.pi) + np.sqrt(s))
    else:
        raise ValueError(f"theta is defined for linear/nonlinear setups, not {setup!r}")
    return float(out) if np.ndim(out) == 0 else out


def family_spec(family: str, th) -> DistributionSpec:
    """Event-time law for the linear and nonlinear setups given theta."""
    e = np.exp(th)
    if family == "exponential":
        return DistributionSpec("exponential", {"rate": e})
    if family == "weibull_inc":
        return DistributionSpec("weibull", {"shape": 2.0, "scale": 10.0 * e})
    if family == "weibull_dec":
        return DistributionSpec("weibull", {"shape": 0.5, "scale": 5.0 * e})
    if family == "lognormal":
        return DistributionSpec("lognormal", {"mu": 1.5, "sigma": e})
    if family == "hjorth":
        return DistributionSpec("hjorth", {"a": e, "b": 1.0, "c": 5.0})
    raise ValueError(f"unknown family {family!r}")


def tree_family_spec(family: str, group: int) -> DistributionSpec:
    params = TREE_PARAMS[family][group - 1]
    kind = {"weibull_dec": "weibull", "weibull_inc": "weibull"}.get(family, family)
    return DistributionSpec(kind, dict(params))


@dataclass(frozen=True)
class TreeRules:
    """Splits of the tree setup.

    Root: X1 in ``x1_left``.  Left child: X2 == ``x2_left`` gives group 1,
    else 2.  Right child: X3 <= ``x3_threshold`` gives group 3, else 4.
    """

    x1_left: tuple[int, ...] = (1, 2)
    x2_left: int = 1
    x3_threshold: float = 1.0


def tree_setup_assign(x1, x2, x3, rules: TreeRules = TreeRules()):
    x1, x2, x3 = (np.asarray(v, dtype=float) for v in (x1, x2, x3))
    left = np.isin(x1, rules.x1_left)
    g = np.where(left, np.where(x2 == rules.x2_left, 1, 2),
                 np.where(x3 <= rules.x3_threshold, 3, 4))
    return int(g) if g.ndim == 0 else g


def tree_schema() -> Schema:
    kinds = {1: 5, 4: 5, 7: 5, 2: 2, 5: 2, 8: 2}
    return Schema(tuple(
        Covariate(f"x{j}", tuple(str(k) for k in range(1, kinds[j] + 1)) if j in kinds else None)
        for j in range(1, 11)))


def smooth_schema() -> Schema:
    return Schema(tuple(Covariate(f"x{j}") for j in range(1, 11)))


def draw_covariates(setup: str, n: int, rng: np.random.Generator) -> np.ndarray:
    X = np.empty((n, 10))
    if setup == "tree":
        for j in range(10):
            col = j + 1
            if col in (1, 4, 7):
                X[:, j] = rng.integers(1, 6, n)
            elif col in (2, 5, 8):
                X[:, j] = rng.integers(1, 3, n)
            else:
                X[:, j] = rng.uniform(0.0, 2.0, n)
    elif setup in ("linear", "nonlinear"):
        for j in range(10):
            if j + 1 in (2, 3, 6, 8, 9):
                X[:, j] = rng.integers(0, 2, n)
            else:
                X[:, j] = rng.uniform(0.0, 1.0, n)
    else:
        raise ValueError(f"unknown setup {setup!r}")
    return X


def event_law(setup: str, family: str, X, rules: TreeRules = TreeRules()):
    """Vectorized event-time law for each row of ``X`` plus group labels."""
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}")
    if setup == "tree":
        groups = tree_setup_assign(X[:, 0], X[:, 1], X[:, 2], rules)
        specs = [tree_family_spec(family, g) for g in (1, 2, 3, 4)]
        kind = specs[0].family
        params = {k: np.array([specs[g - 1].params[k] for g in groups])
                  for k in specs[0].params}
        return DistributionSpec(kind, params), groups
    return family_spec(family, theta(setup, X)), None


def exam_interval(T: float, exams) -> tuple[float, float]:
    """Interval of consecutive examination times containing ``T``.

    ``exams`` are increasing examination times; ``T`` beyond the last one
    gives a right-censored interval.
    """
    exams = np.asarray(exams, dtype=float)
    j = int(np.searchsorted(exams, T, side="left"))
    if j == exams.size:
        return (float(exams[-1]) if exams.size else 0.0, math.inf)
    return (float(exams[j - 1]) if j > 0 else 0.0, float(exams[j]))


def censor(T: float, gap: str | tuple[float, float], k: int | None,
           rng: np.random.Generator) -> tuple[float, float]:
    """Interval-censor ``T`` with uniform examination gaps.

    ``k=None`` keeps examining until ``T`` is bracketed; otherwise exactly
    ``k`` examinations are made and ``T > t_k`` is right-censored.
    """
    lo, hi = GAPS[gap] if isinstance(gap, str) else gap
    if T <= 0:
        raise ValueError("event time must be positive")
    if k is not None:
        if k < 1:
            raise ValueError("at least one examination is required")
        return exam_interval(T, np.cumsum(rng.uniform(lo, hi, k)))
    t = 0.0
    while True:
        exams = t + np.cumsum(rng.uniform(lo, hi, 32))
        if exams[-1] >= T:
            j = int(np.searchsorted(exams, T, side="left"))
            return (float(exams[j - 1]) if j > 0 else t), float(exams[j])
        t = float(exams[-1])


@dataclass(frozen=True)
class ScenarioSpec:
    setup: str = "tree"
    family: str = "exponential"
    gap: str = "G1"
    rc: float = 0.0
    n: int = 200
    seed: int = 0
    rules: TreeRules = TreeRules()

    def __post_init__(self):
        if self.setup not in SETUPS:
            raise ValueError(f"setup must be one of {SETUPS}")
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}")
        if self.gap not in GAPS:
            raise ValueError(f"gap must be one of {tuple(GAPS)}")
        if not 0 <= self.rc < 1:
            raise ValueError("rc must lie in [0, 1)")
        if self.n < 1:
            raise ValueError("n must be >= 1")

    @property
    def name(self) -> str:
        return f"{self.setup}-{self.family}-{self.gap}-rc{int(round(self.rc * 100))}-n{self.n}"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["rules"]["x1_left"] = list(self.rules.x1_left)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        d = dict(d)
        if "rules" in d:
            r = dict(d["rules"])
            r["x1_left"] = tuple(r["x1_left"])
            d["rules"] = TreeRules(**r)
        return cls(**d)


def _streams(seed: int):
    ss = np.random.SeedSequence(seed)
    return [np.random.default_rng(s) for s in ss.spawn(3)]


def rc_rate_curve(scenario: ScenarioSpec, rng: np.random.Generator,
                  draws: int = CALIBRATION_DRAWS, k_max: int | None = None) -> np.ndarray:
    """Monte Carlo right-censoring rate P(T > t_k) for k = 1..k_max."""
    X = draw_covariates(scenario.setup, draws, rng)
    law, _ = event_law(scenario.setup, scenario.family, X, scenario.rules)
    T = law.sample(draws, rng)
    lo, hi = GAPS[scenario.gap]
    if k_max is None:
        k_max = int(np.ceil(np.quantile(T, 0.999) / lo)) + 1
    exams = np.cumsum(rng.uniform(lo, hi, (draws, k_max)), axis=1)
    return (T[:, None] > exams).mean(axis=0)


def calibrate_k(scenario: ScenarioSpec, target: float, rng: np.random.Generator,
                draws: int = CALIBRATION_DRAWS) -> int | None:
    """Examination count whose simulated right-censoring rate is nearest ``target``.

    ``target == 0`` means unlimited examinations and returns None.
    """
    if target == 0:
        return None
    rates = rc_rate_curve(scenario, rng, draws)
    k = int(np.argmin(np.abs(rates - target))) + 1
    if abs(rates[k - 1] - target) > RATE_TOLERANCE:
        warnings.warn(f"{scenario.name}: achieved right-censoring rate "
                      f"{rates[k - 1]:.3f} for target {target}", CalibrationWarning,
                      stacklevel=2)
    return k


def generate(scenario: ScenarioSpec, k: int | None = None, oracle: bool = False) -> Dataset:
    """Simulate one dataset with truth attached.

    Covariates, event times and examination gaps use independent streams of
    ``scenario.seed``.  For ``rc > 0`` the examination count ``k`` is
    calibrated from a fourth stream unless given.  ``oracle=True`` returns
    exact times as degenerate intervals.
    """
    cov_rng, event_rng, gap_rng = _streams(scenario.seed)
    if scenario.rc > 0 and k is None:
        cal = np.random.default_rng(np.random.SeedSequence(scenario.seed, spawn_key=(3,)))
        k = calibrate_k(scenario, scenario.rc, cal)
    elif scenario.rc == 0:
        k = None
    X = draw_covariates(scenario.setup, scenario.n, cov_rng)
    law, _ = event_law(scenario.setup, scenario.family, X, scenario.rules)
    T = law.sample(scenario.n, event_rng)
    curves = [law.row(i) for i in range(scenario.n)]
    bounds = [censor(float(t), scenario.gap, k, gap_rng) for t in T]
    left = np.array([b[0] for b in bounds])
    right = np.array([b[1] for b in bounds])
    schema = tree_schema() if scenario.setup == "tree" else smooth_schema()
    truth = Truth(T, curves, [c.label() for c in curves])
    if oracle:
        return Dataset(T, T, X, schema, truth)
    return Dataset(left, right, X, schema, truth)


def scenario_manifest(scenario: ScenarioSpec, dataset: Dataset, k: int | None) -> str:
    curves = {}
    for cid, c in zip(dataset.truth.curve_ids, dataset.truth.curves):
        curves.setdefault(cid, {"family": c.family, "params": c.params})
    doc = {"scenario": scenario.to_dict(), "exam_count": k, "curves": curves}
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"
