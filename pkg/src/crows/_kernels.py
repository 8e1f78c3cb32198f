"""Compiled inner loops for the exchange search and the Lasso path.

These mirror the pure-Python reference implementations in
:mod:`crows.construct` and :mod:`crows.analyze`; the test suite checks that
both routes agree move for move.
"""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def _row_times_S(u, S, v):
    # v = u' S
    m = S.shape[0]
    for col in range(m):
        acc = 0
        for p in range(m):
            acc += u[p] * S[p, col]
        v[col] = acc


@njit(cache=True, nogil=True)
def _flip_update(u, S, j):
    # rank-2 update of S for a sign change of u[j]; u[j] is the old sign
    m = S.shape[0]
    t = 2 * u[j]
    for p in range(m):
        if p != j:
            d = t * u[p]
            S[j, p] -= d
            S[p, j] -= d
    u[j] = -u[j]


@njit(cache=True, nogil=True)
def optimize_rows(X, S, c, max_passes):
    """Run full passes of 1-CEx and 2-CEx over the rows of ``X`` in place.

    Returns ``(passes, converged, total_delta_Q, n_moves)``.
    """
    n, k = X.shape
    m = k + 1
    u = np.empty(m, dtype=np.int64)
    v = np.empty(m, dtype=np.int64)
    in_low = np.zeros(m, dtype=np.bool_)
    high = np.empty(m, dtype=np.int64)
    total = 0
    moves = 0
    passes = 0
    converged = False
    while passes < max_passes:
        passes += 1
        changed = False
        for i in range(n):
            u[0] = 1
            count = 0
            for j in range(k):
                u[j + 1] = X[i, j]
                if X[i, j] == 1:
                    count += 1
            _row_times_S(u, S, v)

            # 1-coordinate exchanges
            for j in range(1, m):
                if u[j] == 1 or count < c:
                    lsj = v[j] - u[j] * n
                    delta = 8 * (k - u[j] * lsj)
                    if delta < 0:
                        count -= u[j]
                        _flip_update(u, S, j)
                        X[i, j - 1] = u[j]
                        total += delta
                        moves += 1
                        changed = True
                        _row_times_S(u, S, v)

            # 2-coordinate exchanges
            nh = 0
            for j in range(1, m):
                in_low[j] = u[j] == -1
                if u[j] == 1:
                    high[nh] = j
                    nh += 1
            for h in range(nh):
                j = high[h]
                best_l = -1
                best_val = 0
                for l in range(1, m):
                    if in_low[l]:
                        val = v[l] - 2 * S[j, l]
                        if best_l < 0 or val < best_val:
                            best_val = val
                            best_l = l
                if best_l < 0:
                    continue
                delta = 8 * (2 * (k - 1) + n - (v[j] - n) + best_val)
                if delta < 0:
                    _flip_update(u, S, j)
                    _flip_update(u, S, best_l)
                    X[i, j - 1] = u[j]
                    X[i, best_l - 1] = u[best_l]
                    in_low[best_l] = False
                    in_low[j] = True
                    total += delta
                    moves += 1
                    changed = True
                    _row_times_S(u, S, v)
        if not changed:
            converged = True
            break
    return passes, converged, total, moves


@njit(cache=True, nogil=True)
def lasso_cd(G, b, beta, lam, tol, max_sweeps):
    """Covariance-form cyclic coordinate descent at one lambda, in place.

    Minimises ``0.5 beta'G beta - b'beta + lam ||beta||_1``; with
    ``G = X'X/n`` and ``b = X'y/n`` this is the Lasso objective up to a
    constant.  Stops when no coordinate moves by more than ``tol``.
    Returns ``(sweeps, converged)``.
    """
    p = b.shape[0]
    grad = np.empty(p)  # b - G beta
    for l in range(p):
        acc = b[l]
        for q in range(p):
            acc -= G[l, q] * beta[q]
        grad[l] = acc
    s = 0
    max_change = np.inf
    while s < max_sweeps:
        s += 1
        max_change = 0.0
        for j in range(p):
            gjj = G[j, j]
            if gjj <= 0.0:
                continue
            old = beta[j]
            z = grad[j] + gjj * old
            if z > lam:
                new = (z - lam) / gjj
            elif z < -lam:
                new = (z + lam) / gjj
            else:
                new = 0.0
            if new != old:
                d = new - old
                beta[j] = new
                for l in range(p):
                    grad[l] -= G[l, j] * d
                if abs(d) > max_change:
                    max_change = abs(d)
        if max_change <= tol:
            break
    return s, max_change <= tol
