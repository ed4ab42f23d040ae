"""Shared domain types: censoring intervals, covariate schema, datasets.

Right-censoring is encoded as ``right = inf`` and serialized as the token
``inf``.  Exact observations have ``left == right``.  Nominal covariates are
stored in the design matrix as level codes ``1..K``.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

INF_TOKEN = "inf"
MAX_NOMINAL_LEVELS = 12


class DataError(ValueError):
    """Raised for malformed or invariant-violating input data."""


@dataclass(frozen=True)
class Interval:
    """A censoring interval ``(left, right]``."""

    left: float
    right: float = math.inf

    def __post_init__(self):
        if not (self.left >= 0):
            raise DataError(f"left endpoint must be >= 0, got {self.left}")
        if not (self.right >= self.left):
            raise DataError(f"left > right: ({self.left}, {self.right}]")

    @property
    def is_exact(self) -> bool:
        return self.left == self.right

    @property
    def is_right_censored(self) -> bool:
        return math.isinf(self.right)

    def contains(self, t: float) -> bool:
        if self.is_exact:
            return t == self.left
        return self.left < t <= self.right


@dataclass(frozen=True)
class Covariate:
    """Kind of one covariate: numeric (``levels is None``) or nominal."""

    name: str
    levels: tuple[str, ...] | None = None

    @property
    def is_nominal(self) -> bool:
        return self.levels is not None

    @property
    def n_levels(self) -> int:
        return 0 if self.levels is None else len(self.levels)

    def spec(self) -> Any:
        if self.levels is None:
            return "numeric"
        if self.levels == tuple(str(k) for k in range(1, len(self.levels) + 1)):
            return f"nominal:{len(self.levels)}"
        return list(self.levels)


@dataclass(frozen=True)
class Schema:
    """Ordered covariate kinds.

    The JSON form maps column names to ``"numeric"``, ``"nominal:K"`` (levels
    written as integers ``1..K``) or an explicit list of level labels.
    """

    covariates: tuple[Covariate, ...]

    def __post_init__(self):
        if len(self.covariates) < 1:
            raise DataError("schema must declare at least one covariate")
        names = [c.name for c in self.covariates]
        if len(set(names)) != len(names):
            raise DataError("duplicate covariate names in schema")
        for c in self.covariates:
            if c.is_nominal and c.n_levels < 1:
                raise DataError(f"nominal covariate {c.name!r} has no levels")

    @classmethod
    def from_dict(cls, spec: dict[str, Any]) -> "Schema":
        covs = []
        for name, kind in spec.items():
            if isinstance(kind, list):
                covs.append(Covariate(name, tuple(str(x) for x in kind)))
            elif kind == "numeric":
                covs.append(Covariate(name))
            elif isinstance(kind, str) and kind.startswith("nominal:"):
                try:
                    k = int(kind.split(":", 1)[1])
                except ValueError:
                    raise DataError(f"bad nominal spec {kind!r} for {name!r}") from None
                if k < 1:
                    raise DataError(f"nominal cardinality must be >= 1 for {name!r}")
                covs.append(Covariate(name, tuple(str(i) for i in range(1, k + 1))))
            else:
                raise DataError(f"unknown covariate kind {kind!r} for {name!r}")
        return cls(tuple(covs))

    @classmethod
    def load(cls, path: str | Path) -> "Schema":
        with open(path) as fh:
            try:
                spec = json.load(fh)
            except json.JSONDecodeError as exc:
                raise DataError(f"schema {path}: {exc}") from None
        if not isinstance(spec, dict):
            raise DataError(f"schema {path}: expected a JSON object")
        return cls.from_dict(spec)

    def to_dict(self) -> dict[str, Any]:
        return {c.name: c.spec() for c in self.covariates}

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.covariates]

    @property
    def m(self) -> int:
        return len(self.covariates)

    def nominal_mask(self) -> np.ndarray:
        return np.array([c.is_nominal for c in self.covariates])

    def parse_value(self, j: int, token: str) -> float:
        cov = self.covariates[j]
        token = token.strip()
        if cov.levels is None:
            value = float(token)
            if not math.isfinite(value):
                raise ValueError(f"non-finite value {token!r} for {cov.name}")
            return value
        try:
            return float(cov.levels.index(token) + 1)
        except ValueError:
            # tolerate "3.0" for integer-coded levels
            try:
                as_int = str(int(float(token)))
            except ValueError:
                as_int = None
            if as_int is not None and as_int in cov.levels:
                return float(cov.levels.index(as_int) + 1)
            raise ValueError(f"unknown nominal level {token!r} for {cov.name}") from None

    def format_value(self, j: int, value: float) -> str:
        cov = self.covariates[j]
        if cov.levels is None:
            return repr(float(value))
        return cov.levels[int(value) - 1]

    def validate_matrix(self, X: np.ndarray) -> None:
        if X.ndim != 2 or X.shape[1] != self.m:
            raise DataError(f"covariate matrix must have {self.m} columns")
        if not np.all(np.isfinite(X)):
            raise DataError("covariates must be finite")
        for j, cov in enumerate(self.covariates):
            if cov.is_nominal:
                col = X[:, j]
                bad = (col != np.round(col)) | (col < 1) | (col > cov.n_levels)
                if bad.any():
                    i = int(np.flatnonzero(bad)[0])
                    raise DataError(
                        f"nominal level {col[i]!r} outside 1..{cov.n_levels} "
                        f"for {cov.name} at row {i + 1}")


@dataclass(frozen=True)
class Truth:
    """Simulation ground truth: exact event times and per-row survival curves.

    ``curves[i]`` is any object with a vectorized ``survival(t)`` method.
    """

    T: np.ndarray
    curves: Sequence[Any]
    curve_ids: Sequence[str] = ()


@dataclass(frozen=True)
class Dataset:
    """Interval-censored responses with covariates.

    Arrays are made read-only on construction.
    """

    left: np.ndarray
    right: np.ndarray
    X: np.ndarray
    schema: Schema
    truth: Truth | None = field(default=None, compare=False)

    def __post_init__(self):
        left = np.array(self.left, dtype=float)
        right = np.array(self.right, dtype=float)
        X = np.array(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        n = left.shape[0]
        if n < 1:
            raise DataError("dataset must contain at least one row")
        if left.shape != (n,) or right.shape != (n,) or X.shape[0] != n:
            raise DataError("left, right and X must have matching row counts")
        validate_intervals(left, right)
        self.schema.validate_matrix(X)
        if self.truth is not None:
            T = np.asarray(self.truth.T, dtype=float)
            if T.shape != (n,) or len(self.truth.curves) != n:
                raise DataError("truth must have one entry per row")
            exact = left == right
            ok = np.where(exact, T == left, (left < T) & (T <= right))
            if not ok.all():
                i = int(np.flatnonzero(~ok)[0])
                raise DataError(f"true event time outside its interval at row {i + 1}")
        for arr in (left, right, X):
            arr.flags.writeable = False
        object.__setattr__(self, "left", left)
        object.__setattr__(self, "right", right)
        object.__setattr__(self, "X", X)

    @property
    def n(self) -> int:
        return self.left.shape[0]

    @property
    def m(self) -> int:
        return self.X.shape[1]

    def interval(self, i: int) -> Interval:
        return Interval(float(self.left[i]), float(self.right[i]))

    def subset(self, rows: Sequence[int] | np.ndarray) -> "Dataset":
        rows = np.asarray(rows)
        truth = None
        if self.truth is not None:
            ids = list(self.truth.curve_ids)
            truth = Truth(self.truth.T[rows], [self.truth.curves[i] for i in rows],
                          [ids[i] for i in rows] if ids else ())
        return Dataset(self.left[rows], self.right[rows], self.X[rows], self.schema, truth)

    def oracle(self) -> "Dataset":
        """Same covariates with exact event times as degenerate intervals."""
        if self.truth is None:
            raise DataError("oracle data requires truth")
        T = self.truth.T
        return Dataset(T, T, self.X, self.schema, self.truth)


def validate_intervals(left: np.ndarray, right: np.ndarray) -> None:
    if np.isnan(left).any() or np.isnan(right).any():
        i = int(np.flatnonzero(np.isnan(left) | np.isnan(right))[0])
        raise DataError(f"missing endpoint at row {i + 1}")
    if (left < 0).any():
        i = int(np.flatnonzero(left < 0)[0])
        raise DataError(f"negative left endpoint at row {i + 1}")
    if np.isinf(left).any():
        i = int(np.flatnonzero(np.isinf(left))[0])
        raise DataError(f"infinite left endpoint at row {i + 1}")
    if (left > right).any():
        i = int(np.flatnonzero(left > right)[0])
        raise DataError(f"left > right at row {i + 1}")


def check_case_weights(w: np.ndarray, n: int) -> np.ndarray:
    """Validate non-negative integer case weights with a positive entry."""
    w = np.asarray(w)
    if w.shape != (n,):
        raise ValueError(f"expected {n} case weights, got shape {w.shape}")
    if (w < 0).any() or not np.all(np.asarray(w, dtype=float) == np.round(w)):
        raise ValueError("case weights must be non-negative integers")
    if not (w > 0).any():
        raise ValueError("case weights must have at least one positive entry")
    return w.astype(np.int64)


def check_prediction_weights(v: np.ndarray, n: int, atol: float = 1e-12) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (n,):
        raise ValueError(f"expected {n} weights, got shape {v.shape}")
    if (v < 0).any():
        raise ValueError("prediction weights must be non-negative")
    if abs(v.sum() - 1.0) > atol:
        raise ValueError(f"prediction weights sum to {v.sum()!r}, not 1")
    return v


def _parse_time(token: str) -> float:
    token = token.strip()
    if token.lower() in (INF_TOKEN, "+inf", "infinity"):
        return math.inf
    return float(token)


def format_time(t: float) -> str:
    return INF_TOKEN if math.isinf(t) else repr(float(t))


def load_csv(path: str | Path, schema: Schema) -> Dataset:
    """Read a ``left,right,<covariates...>`` CSV file.

    Covariate columns are matched to the schema by header name.  Errors name
    the offending 1-based data row.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if header[:2] != ["left", "right"]:
            raise DataError(f"{path}: header must start with 'left,right'")
        cols = header[2:]
        if sorted(cols) != sorted(schema.names) or len(cols) != len(set(cols)):
            raise DataError(f"{path}: covariate columns {cols} do not match schema "
                            f"{schema.names}")
        order = [cols.index(name) for name in schema.names]
        lefts, rights, rows = [], [], []
        for k, rec in enumerate(reader, start=1):
            if not rec or all(not tok.strip() for tok in rec):
                continue
            if len(rec) != len(header):
                raise DataError(f"malformed row {k}: expected {len(header)} fields, "
                                f"got {len(rec)}")
            try:
                L = _parse_time(rec[0])
                R = _parse_time(rec[1])
                x = [schema.parse_value(j, rec[2 + order[j]]) for j in range(schema.m)]
            except ValueError as exc:
                raise DataError(f"malformed row {k}: {exc}") from None
            if math.isnan(L) or math.isnan(R) or L < 0 or math.isinf(L):
                raise DataError(f"malformed row {k}: bad left endpoint {rec[0]!r}")
            if L > R:
                raise DataError(f"left > right at row {k}")
            lefts.append(L)
            rights.append(R)
            rows.append(x)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return Dataset(np.array(lefts), np.array(rights), np.array(rows), schema)


def write_csv(dataset: Dataset, path: str | Path) -> None:
    schema = dataset.schema
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["left", "right", *schema.names])
        for i in range(dataset.n):
            writer.writerow([format_time(dataset.left[i]), format_time(dataset.right[i]),
                             *(schema.format_value(j, dataset.X[i, j])
                               for j in range(schema.m))])


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
