"""Weighted Turnbull NPMLE and interval-censored log-rank scores.

Endpoint conventions
--------------------
Intervals are open on the left and closed on the right.  An exact
observation ``t`` is treated as the degenerate set ``{t}``, i.e. as if its
left endpoint were ``t-``.  Sorting endpoints by ``(value, kind)`` with
``t-`` < right ``t`` < left ``t`` reduces the Turnbull construction to one
scan: every left endpoint immediately followed by a right endpoint opens a
support interval.

Inside a bounded support interval the likelihood does not identify where
the mass sits.  :meth:`SurvivalCurve.survival` spreads it linearly across the
interval; mass on an unbounded support ``(p, inf)`` is never dropped before
``t = inf``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .core import DataError, INF_TOKEN

TOL = 1e-8
MAX_ITER = 1000
MASS_EPS = 1e-10

_EXACT_LEFT, _RIGHT, _LEFT = 0, 1, 2


class ConvergenceWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class TurnbullSupport:
    """Disjoint sorted support intervals and the observation incidence.

    Observation ``i`` covers supports ``first[i]..last[i]`` (inclusive).
    """

    left: np.ndarray
    right: np.ndarray
    first: np.ndarray
    last: np.ndarray

    @property
    def l(self) -> int:
        return self.left.shape[0]

    @property
    def degenerate(self) -> np.ndarray:
        return self.left == self.right

    @property
    def incidence(self) -> np.ndarray:
        """Dense n-by-l 0/1 matrix (alpha)."""
        j = np.arange(self.l)
        return ((j >= self.first[:, None]) & (j <= self.last[:, None])).astype(np.int8)


def turnbull_support(left, right) -> TurnbullSupport:
    left = np.asarray(left, dtype=float)
    right = np.asarray(right, dtype=float)
    n = left.shape[0]
    if n < 1:
        raise ValueError("need at least one interval")
    vals = np.concatenate([left, right])
    kinds = np.concatenate([np.where(left == right, _EXACT_LEFT, _LEFT),
                            np.full(n, _RIGHT)])
    order = np.lexsort((kinds, vals))
    sv, sk = vals[order], kinds[order]
    new = np.ones(2 * n, dtype=bool)
    new[1:] = (sv[1:] != sv[:-1]) | (sk[1:] != sk[:-1])
    dense = np.cumsum(new) - 1
    rank = np.empty(2 * n, dtype=np.int64)
    rank[order] = dense
    uv, uk = sv[new], sk[new]
    is_left = uk != _RIGHT
    opens = np.flatnonzero(is_left[:-1] & ~is_left[1:])
    lrank, rrank = rank[:n], rank[n:]
    first = np.searchsorted(opens, lrank, side="left")
    last = np.searchsorted(opens + 1, rrank, side="right") - 1
    return TurnbullSupport(uv[opens], uv[opens + 1], first, last)


@dataclass(frozen=True, eq=False)
class SurvivalCurve:
    """Probability masses on Turnbull support intervals.

    ``loglik`` is the weighted log-likelihood at the returned masses (in the
    caller's weight scale); ``converged`` is False when the iteration budget
    ran out.
    """

    tau_left: np.ndarray
    tau_right: np.ndarray
    mass: np.ndarray
    loglik: float = field(default=float("nan"), compare=False)
    n_iter: int = field(default=0, compare=False)
    converged: bool = field(default=True, compare=False)

    def survival(self, t, left_limit: bool = False):
        """S(t) = P(T > t) with linear interpolation inside supports.

        ``left_limit=True`` returns S(t-), which differs only at point masses.
        """
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        tt = np.atleast_1d(t)[:, None]
        p, q = self.tau_left[None, :], self.tau_right[None, :]
        bounded = np.isfinite(q)
        qb = np.where(bounded, q, p)
        width = np.where(bounded & (q > p), qb - p, 1.0)
        with np.errstate(invalid="ignore"):
            frac = np.clip((qb - tt) / width, 0.0, 1.0)
        at = (tt <= p) if left_limit else (tt < p)
        keep = np.where(p == q, at.astype(float),
                        np.where(bounded, frac, 1.0))
        out = keep @ self.mass
        out = np.where(np.isinf(tt[:, 0]), 0.0, out)
        out = np.clip(out, 0.0, 1.0)
        return float(out[0]) if scalar else out

    def __eq__(self, other):
        if not isinstance(other, SurvivalCurve):
            return NotImplemented
        return (np.array_equal(self.tau_left, other.tau_left)
                and np.array_equal(self.tau_right, other.tau_right)
                and np.array_equal(self.mass, other.mass))

    __hash__ = None

    def breakpoints(self) -> np.ndarray:
        """Finite support endpoints carrying positive mass."""
        pos = self.mass > 0
        pts = np.concatenate([self.tau_left[pos], self.tau_right[pos]])
        return np.unique(pts[np.isfinite(pts)])

    def to_dict(self) -> dict:
        def enc(x):
            return INF_TOKEN if math.isinf(x) else float(x)
        return {"tau": [[enc(a), enc(b)] for a, b in zip(self.tau_left, self.tau_right)],
                "mass": [float(m) for m in self.mass]}

    @classmethod
    def from_dict(cls, d: dict) -> "SurvivalCurve":
        tau = np.array([[math.inf if x == INF_TOKEN else float(x) for x in pair]
                        for pair in d["tau"]], dtype=float).reshape(-1, 2)
        return cls(tau[:, 0], tau[:, 1], np.asarray(d["mass"], dtype=float))


def survival_at(curve: SurvivalCurve, t):
    if np.any(np.asarray(t) < 0):
        raise ValueError("t must be >= 0")
    return curve.survival(t)


def _prepare(left, right, weights):
    left = np.asarray(left, dtype=float)
    right = np.asarray(right, dtype=float)
    n = left.shape[0]
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (n,):
        raise ValueError(f"expected {n} weights, got shape {w.shape}")
    if (w < 0).any() or not np.isfinite(w).all():
        raise ValueError("weights must be finite and non-negative")
    keep = w > 0
    if not keep.any():
        raise ValueError("weights are all zero")
    return left[keep], right[keep], w[keep]


def _aggregate(left, right, w):
    """Merge identical intervals, summing their weights."""
    pairs = np.stack([left, right], axis=1)
    uniq, inv = np.unique(pairs, axis=0, return_inverse=True)
    sums = np.bincount(inv.ravel(), weights=w, minlength=uniq.shape[0])
    return uniq[:, 0], uniq[:, 1], sums


def npmle_fit(left, right, weights=None, tol: float = TOL,
              max_iter: int = MAX_ITER) -> SurvivalCurve:
    """Maximize ``sum_i w_i log P(L_i < T <= R_i)`` over Turnbull masses.

    Zero-weight observations are ignored and identical intervals pooled.
    ``tol`` applies to the log-likelihood with weights normalized to sum to
    one.  Masses below ``1e-10`` are zeroed and the rest renormalized.
    """
    L, R, w = _prepare(left, right, weights)
    L, R, w = _aggregate(L, R, w)
    sup = turnbull_support(L, R)
    W = w.sum()
    v = w / W
    l = sup.l
    if l == 1:
        u, ll, it, conv = np.ones(1), 0.0, 0, True
    else:
        u0 = np.full(l, 1.0 / l)
        u, ll, it, conv = _kernels.solve(sup.first, sup.last, v, u0, float(tol), int(max_iter))
    if not conv:
        warnings.warn(f"NPMLE did not converge in {max_iter} iterations",
                      ConvergenceWarning, stacklevel=2)
    u = np.where(u < MASS_EPS, 0.0, u)
    u = u / u.sum()
    ll = _kernels.loglik(sup.first, sup.last, v, u)
    return SurvivalCurve(sup.left, sup.right, u, loglik=float(W * ll), n_iter=int(it),
                         converged=bool(conv))


def loglik(support: TurnbullSupport, mass, weights) -> float:
    return float(_kernels.loglik(support.first, support.last,
                                 np.asarray(weights, dtype=float), np.asarray(mass, dtype=float)))


def self_consistency_step(support: TurnbullSupport, mass, weights) -> np.ndarray:
    """One weighted Turnbull (EM) update of the support masses."""
    w = np.asarray(weights, dtype=float)
    u = np.asarray(mass, dtype=float)
    keep = w > 0
    if not keep.any():
        raise ValueError("weights are all zero")
    a, b = support.first[keep], support.last[keep]
    P = _kernels.obs_probs(a, b, u)
    if (P <= 0).any():
        i = int(np.flatnonzero(keep)[np.flatnonzero(P <= 0)[0]])
        raise FloatingPointError(f"observation {i} has zero probability under the "
                                 "current masses")
    out, _ = _kernels.em_step(a, b, w[keep], u)
    return out


def icm_step(support: TurnbullSupport, mass, weights) -> np.ndarray:
    """One iterative-convex-minorant step; never lowers the log-likelihood.

    Works on ``Lambda_k = log(-log S(tau_k))`` at the support left ends.  If
    the halving line search finds no non-decreasing step the input is
    returned unchanged.
    """
    w = np.asarray(weights, dtype=float)
    keep = w > 0
    out, _ = _kernels.icm_step(support.first[keep], support.last[keep], w[keep],
                               np.asarray(mass, dtype=float))
    return out


def _xlogx(s):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(s > 0, s * np.log(np.where(s > 0, s, 1.0)), 0.0)


def logrank_scores(left, right, curve: SurvivalCurve,
                   exact_left_limit: bool = False) -> np.ndarray:
    """Interval-censored log-rank scores against a reference curve.

    Zero-probability intervals fall back to the exact-time formula
    ``1 + log S(L)``; a score that is still undefined raises ``DataError``.
    With ``exact_left_limit`` an exact time where S(L) = 0 (the largest
    event of an exact-data fit) is scored across the jump at L instead,
    ``[S(L-) log S(L-) - 0] / S(L-) = log S(L-)``.
    """
    left = np.asarray(left, dtype=float)
    right = np.asarray(right, dtype=float)
    sL = curve.survival(left)
    sR = curve.survival(right)
    diff = sL - sR
    use_ratio = (left < right) & (diff > MASS_EPS)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = (_xlogx(sL) - _xlogx(sR)) / np.where(use_ratio, diff, 1.0)
        exact = 1.0 + np.log(sL)
    U = np.where(use_ratio, ratio, exact)
    if exact_left_limit:
        fix = (left == right) & (sL <= 0)
        if fix.any():
            with np.errstate(divide="ignore"):
                U[fix] = np.log(curve.survival(left[fix], left_limit=True))
    bad = ~np.isfinite(U)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise DataError(f"log-rank score undefined at row {i + 1}: S(L) = 0")
    return U
