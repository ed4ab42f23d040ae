"""Compiled inner loops for the weighted Turnbull NPMLE.

Observation ``i`` covers the contiguous block of support intervals
``a[i]..b[i]`` (inclusive), so every sweep is O(n + l).  Weights ``v`` are
assumed positive; callers drop zero-weight rows beforehand.
"""

import numpy as np
from numba import njit

# free ICM coordinates must keep S strictly inside (0, 1)
_S_EPS = 1e-14
_MAX_HALVINGS = 40


@njit(cache=True)
def obs_probs(a, b, u):
    l = u.shape[0]
    C = np.empty(l + 1)
    C[0] = 0.0
    for j in range(l):
        C[j + 1] = C[j] + u[j]
    P = np.empty(a.shape[0])
    for i in range(a.shape[0]):
        P[i] = C[b[i] + 1] - C[a[i]]
    return P


@njit(cache=True)
def loglik(a, b, v, u):
    P = obs_probs(a, b, u)
    total = 0.0
    for i in range(P.shape[0]):
        if P[i] <= 0.0:
            return -np.inf
        total += v[i] * np.log(P[i])
    return total


@njit(cache=True)
def em_step(a, b, v, u):
    """One weighted self-consistency sweep; returns (new mass, ok flag)."""
    l = u.shape[0]
    P = obs_probs(a, b, u)
    D = np.zeros(l + 1)
    W = 0.0
    for i in range(P.shape[0]):
        W += v[i]
        if P[i] <= 0.0:
            return u.copy(), False
        r = v[i] / P[i]
        D[a[i]] += r
        D[b[i] + 1] -= r
    out = np.empty(l)
    acc = 0.0
    for j in range(l):
        acc += D[j]
        out[j] = u[j] * acc / W
    tot = out.sum()
    for j in range(l):
        out[j] /= tot
    return out, True


@njit(cache=True)
def pava(y, w):
    """Weighted least-squares non-decreasing fit (pool adjacent violators)."""
    n = y.shape[0]
    vals = np.empty(n)
    wts = np.empty(n)
    cnt = np.empty(n, dtype=np.int64)
    top = -1
    for i in range(n):
        top += 1
        vals[top] = y[i]
        wts[top] = w[i]
        cnt[top] = 1
        while top > 0 and vals[top - 1] > vals[top]:
            nw = wts[top - 1] + wts[top]
            vals[top - 1] = (vals[top - 1] * wts[top - 1] + vals[top] * wts[top]) / nw
            wts[top - 1] = nw
            cnt[top - 1] += cnt[top]
            top -= 1
    out = np.empty(n)
    pos = 0
    for k in range(top + 1):
        for _ in range(cnt[k]):
            out[pos] = vals[k]
            pos += 1
    return out


@njit(cache=True)
def _mass_from_tail(s):
    l = s.shape[0] - 1
    u = np.empty(l)
    for j in range(l):
        d = s[j] - s[j + 1]
        u[j] = d if d > 0.0 else 0.0
    tot = u.sum()
    for j in range(l):
        u[j] /= tot
    return u


@njit(cache=True)
def icm_step(a, b, v, u):
    """One projected Newton step in Lambda_k = log(-log S_k).

    ``S_k`` is the survival just before support ``k``.  The diagonal Newton
    proposal is projected onto monotone Lambda by weighted PAVA and accepted
    along a halving line search only if the log-likelihood does not drop.
    Returns (mass, accepted).
    """
    l = u.shape[0]
    if l < 2:
        return u.copy(), False
    ll0 = loglik(a, b, v, u)
    if not np.isfinite(ll0):
        return u.copy(), False
    # head[k] = sum_{j<k} u_j, s[k] = sum_{j>=k} u_j
    head = np.empty(l + 1)
    s = np.empty(l + 1)
    head[0] = 0.0
    for j in range(l):
        head[j + 1] = head[j] + u[j]
    s[l] = 0.0
    for j in range(l - 1, -1, -1):
        s[j] = s[j + 1] + u[j]
    s[0] = 1.0
    k0 = 1
    while k0 < l and head[k0] <= _S_EPS:
        k0 += 1
    k1 = l - 1
    while k1 >= k0 and s[k1] <= _S_EPS:
        k1 -= 1
    if k1 < k0:
        return u.copy(), False
    nf = k1 - k0 + 1
    lam = np.empty(nf)
    c = np.empty(nf)
    for f in range(nf):
        k = k0 + f
        # -log S accurately for S near 1
        if s[k] > 0.5:
            c[f] = -np.log1p(-head[k])
        else:
            c[f] = -np.log(s[k])
        lam[f] = np.log(c[f])

    P = obs_probs(a, b, u)
    A = np.zeros(l + 1)
    Q = np.zeros(l + 1)
    for i in range(P.shape[0]):
        r = v[i] / P[i]
        q = r / P[i]
        A[a[i]] += r
        Q[a[i]] += q
        A[b[i] + 1] -= r
        Q[b[i] + 1] += q
    y = np.empty(nf)
    wt = np.empty(nf)
    for f in range(nf):
        k = k0 + f
        sk = s[k] if s[k] > 0.5 else np.exp(-c[f])
        ds = -c[f] * sk
        d2s = sk * c[f] * (c[f] - 1.0)
        g = A[k] * ds
        w = Q[k] * ds * ds
        curv = -A[k] * d2s
        if curv > 0.0:
            w += curv
        if w > 1e-300:
            y[f] = lam[f] + g / w
            wt[f] = w
        else:
            y[f] = lam[f]
            wt[f] = 1e-300
    prop = pava(y, wt)
    lo = -np.inf
    hi = np.inf
    if k0 > 1 and head[k0 - 1] > 0.0:
        lo = np.log(-np.log1p(-head[k0 - 1])) if s[k0 - 1] > 0.5 else np.log(-np.log(s[k0 - 1]))
    if k1 < l - 1 and s[k1 + 1] > 0.0:
        hi = np.log(-np.log(s[k1 + 1]))
    for f in range(nf):
        if prop[f] < lo:
            prop[f] = lo
        if prop[f] > hi:
            prop[f] = hi

    step = 1.0
    s_new = s.copy()
    for _ in range(_MAX_HALVINGS):
        for f in range(nf):
            lam_f = lam[f] + step * (prop[f] - lam[f])
            s_new[k0 + f] = np.exp(-np.exp(lam_f))
        u_new = _mass_from_tail(s_new)
        ll1 = loglik(a, b, v, u_new)
        if np.isfinite(ll1) and ll1 >= ll0:
            return u_new, True
        step *= 0.5
    return u.copy(), False


@njit(cache=True)
def solve(a, b, v, u0, tol, max_iter):
    """Alternate EM and ICM until the log-likelihood gain drops below tol.

    Returns (mass, loglik, iterations, converged).
    """
    u = u0.copy()
    ll = loglik(a, b, v, u)
    for it in range(1, max_iter + 1):
        u_em, ok = em_step(a, b, v, u)
        if not ok:
            return u, ll, it, False
        u_icm, _ = icm_step(a, b, v, u_em)
        ll_new = loglik(a, b, v, u_icm)
        u = u_icm
        if ll_new - ll < tol:
            return u, ll_new, it, True
        ll = ll_new
    return u, ll, max_iter, False
