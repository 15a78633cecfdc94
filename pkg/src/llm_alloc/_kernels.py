"""Hot numeric kernels with numba and pure-numpy implementations.

The numba path is used by default when numba imports; set the environment
variable LLM_ALLOC_NO_NUMBA=1 to force the numpy path. Both implementations
follow the same pivot/tie-break logic so results agree across paths.
`benchmarks/bench_kernels.py` compares the two.
"""

from __future__ import annotations

import os

import numpy as np

_env = os.environ.get("LLM_ALLOC_NO_NUMBA", "").strip().lower()
NUMBA_DISABLED = _env in ("1", "true", "yes", "on")

try:
    if NUMBA_DISABLED:
        njit = None
    else:
        from numba import njit
except ImportError:  # pragma: no cover - numba is a declared dependency
    njit = None

NUMBA_ENABLED = njit is not None

RATIO_TIE_TOL = 1e-12
STRONG_PIVOT = 1e-7

# Status codes shared by both simplex implementations.
SIMPLEX_OPTIMAL = 0
SIMPLEX_UNBOUNDED = 1
SIMPLEX_ITER_LIMIT = 2


def _simplex_loop_loops(T, basis, tol, max_iter):
    """Primal simplex iterations on a dense tableau, Bland's rule.

    T is (m+1, n+1): m constraint rows plus the reduced-cost row, last
    column is the RHS. basis[i] is the variable index basic in row i.
    Mutates T and basis in place; returns a status code.

    RHS values are clamped at zero in the ratio test (they can drift a few
    ulps negative), and rows with solid pivot magnitude are preferred within
    the ratio tie window so the tableau never gets divided by noise.
    """
    m = T.shape[0] - 1
    n = T.shape[1] - 1
    for _ in range(max_iter):
        col = -1
        for j in range(n):
            if T[m, j] < -tol:
                col = j
                break
        if col == -1:
            return SIMPLEX_OPTIMAL
        best = np.inf
        for i in range(m):
            a = T[i, col]
            if a > tol:
                r = T[i, n]
                if r < 0.0:
                    r = 0.0
                ratio = r / a
                if ratio < best:
                    best = ratio
        if best == np.inf:
            return SIMPLEX_UNBOUNDED
        row = -1
        for i in range(m):
            a = T[i, col]
            if a > STRONG_PIVOT:
                r = T[i, n]
                if r < 0.0:
                    r = 0.0
                if r / a <= best + RATIO_TIE_TOL:
                    if row == -1 or basis[i] < basis[row]:
                        row = i
        if row == -1:
            for i in range(m):
                a = T[i, col]
                if a > tol:
                    r = T[i, n]
                    if r < 0.0:
                        r = 0.0
                    if r / a <= best + RATIO_TIE_TOL:
                        if row == -1 or basis[i] < basis[row]:
                            row = i
        piv = T[row, col]
        for j in range(n + 1):
            T[row, j] /= piv
        for i in range(m + 1):
            if i != row:
                f = T[i, col]
                if f != 0.0:
                    for j in range(n + 1):
                        T[i, j] -= f * T[row, j]
        basis[row] = col
    return SIMPLEX_ITER_LIMIT


def _simplex_loop_numpy(T, basis, tol, max_iter):
    """Vectorized twin of _simplex_loop_loops (same pivots, same ties)."""
    m = T.shape[0] - 1
    n = T.shape[1] - 1
    for _ in range(max_iter):
        neg = np.nonzero(T[m, :n] < -tol)[0]
        if neg.size == 0:
            return SIMPLEX_OPTIMAL
        col = int(neg[0])
        colvals = T[:m, col]
        pos = colvals > tol
        if not np.any(pos):
            return SIMPLEX_UNBOUNDED
        rhs = np.maximum(T[:m, n], 0.0)
        ratios = np.full(m, np.inf)
        ratios[pos] = rhs[pos] / colvals[pos]
        best = ratios.min()
        in_tie = ratios <= best + RATIO_TIE_TOL
        cand = np.nonzero(in_tie & (colvals > STRONG_PIVOT))[0]
        if cand.size == 0:
            cand = np.nonzero(in_tie & pos)[0]
        row = int(cand[np.argmin(basis[cand])])
        T[row, :] /= T[row, col]
        f = T[:, col].copy()
        f[row] = 0.0
        T -= np.outer(f, T[row, :])
        basis[row] = col
    return SIMPLEX_ITER_LIMIT


def _score_pairs_loops(valid, n_cfg, m_cfg, extra_gpus, dcomp, dcomm, ebar,
                       price, weight, theta_r_lam, r_i, f_i, remaining,
                       eps_head, delay_head, horizon, ps, rho_i,
                       out_delay, out_cov, out_cost):
    """Per-pair delay, effective coverage and marginal cost for one query.

    All pair-indexed inputs are flat (J*K,) arrays; entries where valid is
    false are left as zero coverage.
    """
    for p in range(valid.shape[0]):
        out_delay[p] = 0.0
        out_cov[p] = 0.0
        out_cost[p] = 0.0
        if not valid[p]:
            continue
        d = dcomp[p] * r_i / n_cfg[p] + m_cfg[p] * dcomm[p] * f_i
        out_delay[p] = d
        cov = remaining
        if ebar[p] > 0.0:
            ce = eps_head / ebar[p]
            if ce < cov:
                cov = ce
        if d > 0.0:
            cd = delay_head / d
            if cd < cov:
                cov = cd
        if cov <= 0.0:
            cov = 0.0
        out_cov[p] = cov
        out_cost[p] = horizon * (price[p] * extra_gpus[p]
                                 + ps * (weight[p] + theta_r_lam)) + rho_i * d


def _score_pairs_numpy(valid, n_cfg, m_cfg, extra_gpus, dcomp, dcomm, ebar,
                       price, weight, theta_r_lam, r_i, f_i, remaining,
                       eps_head, delay_head, horizon, ps, rho_i,
                       out_delay, out_cov, out_cost):
    out_delay[:] = 0.0
    out_cov[:] = 0.0
    out_cost[:] = 0.0
    v = valid.astype(bool)
    if not np.any(v):
        return
    n = n_cfg[v]
    d = dcomp[v] * r_i / n + m_cfg[v] * dcomm[v] * f_i
    cov = np.full(d.shape, remaining)
    eb = ebar[v]
    with np.errstate(divide="ignore"):
        ce = np.where(eb > 0.0, eps_head / np.where(eb > 0.0, eb, 1.0), np.inf)
        cd = np.where(d > 0.0, delay_head / np.where(d > 0.0, d, 1.0), np.inf)
    cov = np.minimum(cov, np.minimum(ce, cd))
    cov = np.maximum(cov, 0.0)
    out_delay[v] = d
    out_cov[v] = cov
    out_cost[v] = (horizon * (price[v] * extra_gpus[v]
                              + ps * (weight[v] + theta_r_lam)) + rho_i * d)


if NUMBA_ENABLED:
    _simplex_loop_numba = njit(cache=True)(_simplex_loop_loops)
    _score_pairs_numba = njit(cache=True)(_score_pairs_loops)
    simplex_loop = _simplex_loop_numba
    score_pairs = _score_pairs_numba
else:
    _simplex_loop_numba = None
    _score_pairs_numba = None
    simplex_loop = _simplex_loop_numpy
    score_pairs = _score_pairs_numpy

simplex_loop_numpy = _simplex_loop_numpy
score_pairs_numpy = _score_pairs_numpy
simplex_loop_numba = _simplex_loop_numba
score_pairs_numba = _score_pairs_numba
