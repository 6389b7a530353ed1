"""Compiled covariance-update coordinate descent for weighted L1 least squares.

Works on the profiled problem

    min_b  0.5 * b'Gb - c'b + sum_j w_j |b_j|

with ``G = Mt'Mt / n`` and ``c = Mt'yt / n`` where ``Mt``, ``yt`` have the
unpenalized block projected out. ``g = c - G b`` is kept up to date so each
coordinate update costs O(p) only when the coordinate moves.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _sweep(G, g, b, w, idx, m):
    max_delta = 0.0
    for t in range(m):
        j = idx[t]
        h = G[j, j]
        bj = b[j]
        if h <= 1e-14 or np.isinf(w[j]):
            new = 0.0
        else:
            z = g[j] + h * bj
            if z > w[j]:
                new = (z - w[j]) / h
            elif z < -w[j]:
                new = (z + w[j]) / h
            else:
                new = 0.0
        delta = new - bj
        if delta != 0.0:
            p = G.shape[0]
            for k in range(p):
                g[k] -= delta * G[k, j]
            b[j] = new
            ad = abs(delta)
            if ad > max_delta:
                max_delta = ad
    return max_delta


@njit(cache=True)
def _objective(yy_half, c, g, b, w):
    # 0.5*|r|^2/n + sum w|b| written through g = c - G b
    val = yy_half
    pen = 0.0
    for j in range(b.shape[0]):
        if b[j] != 0.0:
            val -= 0.5 * b[j] * (c[j] + g[j])
            pen += w[j] * abs(b[j])
    return val + pen


@njit(cache=True)
def coordinate_descent(G, c, w, b, max_sweeps, tol, yy_half, trace):
    """Run CD in place on ``b``.

    Full sweeps until the first converged full sweep, with active-set sweeps in
    between once the support has settled. Returns
    ``(n_sweeps, converged, n_trace)``; when ``trace`` is non-empty the
    objective after each sweep is written into it.
    """
    p = b.shape[0]
    g = c - G @ b
    full = np.arange(p)
    act = np.empty(p, dtype=np.int64)
    n_sweeps = 0
    n_trace = 0
    record = trace.shape[0] > 0
    converged = False
    while n_sweeps < max_sweeps:
        d = _sweep(G, g, b, w, full, p)
        n_sweeps += 1
        if record and n_trace < trace.shape[0]:
            trace[n_trace] = _objective(yy_half, c, g, b, w)
            n_trace += 1
        if d < tol:
            converged = True
            break
        m = 0
        for j in range(p):
            if b[j] != 0.0:
                act[m] = j
                m += 1
        while n_sweeps < max_sweeps:
            d = _sweep(G, g, b, w, act, m)
            n_sweeps += 1
            if record and n_trace < trace.shape[0]:
                trace[n_trace] = _objective(yy_half, c, g, b, w)
                n_trace += 1
            if d < tol:
                break
    return n_sweeps, converged, n_trace
