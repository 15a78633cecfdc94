"""Dense two-phase primal simplex with Bland's anti-cycling rule.

Small and deterministic; intended for operational LPs and branch-and-bound
relaxation bounds (up to a few thousand variables), not as a general solver.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._kernels import (SIMPLEX_ITER_LIMIT, SIMPLEX_OPTIMAL, SIMPLEX_UNBOUNDED,
                       simplex_loop)

PIVOT_TOL = 1e-9
FEAS_TOL = 1e-7

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"


@dataclass
class LpProblem:
    """min c @ x  s.t.  A_ub x <= b_ub,  A_eq x = b_eq,  lo <= x <= hi."""
    c: np.ndarray
    a_ub: Optional[np.ndarray] = None
    b_ub: Optional[np.ndarray] = None
    a_eq: Optional[np.ndarray] = None
    b_eq: Optional[np.ndarray] = None
    bounds: Optional[list[tuple[float, float]]] = None  # default (0, inf)

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        n = self.c.shape[0]
        if self.a_ub is None:
            self.a_ub = np.zeros((0, n))
            self.b_ub = np.zeros(0)
        else:
            self.a_ub = np.asarray(self.a_ub, dtype=float).reshape(-1, n)
            self.b_ub = np.asarray(self.b_ub, dtype=float).ravel()
        if self.a_eq is None:
            self.a_eq = np.zeros((0, n))
            self.b_eq = np.zeros(0)
        else:
            self.a_eq = np.asarray(self.a_eq, dtype=float).reshape(-1, n)
            self.b_eq = np.asarray(self.b_eq, dtype=float).ravel()
        if self.bounds is None:
            self.bounds = [(0.0, np.inf)] * n
        if len(self.bounds) != n:
            raise ValueError(f"bounds length {len(self.bounds)} != {n} variables")
        for i, (lo, hi) in enumerate(self.bounds):
            if not np.isfinite(lo):
                raise ValueError(f"variable {i}: lower bound must be finite")
            if hi < lo:
                raise ValueError(f"variable {i}: empty bound interval [{lo}, {hi}]")


@dataclass
class LpResult:
    status: str
    x: Optional[np.ndarray] = None
    value: Optional[float] = None
    basis: Optional[np.ndarray] = field(default=None, repr=False)


def lp_solve(prob: LpProblem, max_iter: int = 200000) -> LpResult:
    n = prob.c.shape[0]
    lo = np.array([b[0] for b in prob.bounds])
    hi = np.array([b[1] for b in prob.bounds])

    # Shift to x' = x - lo >= 0; finite upper bounds become extra <= rows.
    b_ub = prob.b_ub - prob.a_ub @ lo
    b_eq = prob.b_eq - prob.a_eq @ lo
    const = float(prob.c @ lo)

    ub_rows = [prob.a_ub]
    ub_rhs = [b_ub]
    fin = np.nonzero(np.isfinite(hi))[0]
    if fin.size:
        bnd = np.zeros((fin.size, n))
        bnd[np.arange(fin.size), fin] = 1.0
        ub_rows.append(bnd)
        ub_rhs.append(hi[fin] - lo[fin])
    A_ub = np.vstack(ub_rows)
    B_ub = np.concatenate(ub_rhs)
    A_eq = prob.a_eq.copy()
    B_eq = b_eq.copy()

    # Row equilibration: wildly mixed row magnitudes otherwise let the
    # pivot tolerance admit garbage entries.
    def _scale(A, b):
        if A.shape[0]:
            s = np.abs(A).max(axis=1)
            s[s == 0.0] = 1.0
            A /= s[:, None]
            b /= s
    _scale(A_ub, B_ub)
    _scale(A_eq, B_eq)

    m_ub, m_eq = A_ub.shape[0], A_eq.shape[0]
    m = m_ub + m_eq

    # Normalize to Ax (+ slack) = b with b >= 0; track which rows need
    # artificial variables (eq rows always, ub rows flipped to >= form).
    rows = np.vstack([A_ub, A_eq])
    rhs = np.concatenate([B_ub, B_eq])
    slack_sign = np.zeros(m)
    slack_sign[:m_ub] = 1.0
    flip = rhs < 0
    rows[flip] *= -1.0
    rhs[flip] = -rhs[flip]
    slack_sign[flip] *= -1.0

    needs_art = np.ones(m, dtype=bool)
    needs_art[:m_ub] = slack_sign[:m_ub] < 0  # plain slack can start basic
    n_art = int(needs_art.sum())
    art_cols = {}
    acc = 0
    for i in range(m):
        if needs_art[i]:
            art_cols[i] = n + m_ub + acc
            acc += 1

    total = n + m_ub + n_art
    T = np.zeros((m + 1, total + 1))
    T[:m, :n] = rows
    for i in range(m_ub):
        T[i, n + i] = slack_sign[i]
    for i, cidx in art_cols.items():
        T[i, cidx] = 1.0
    T[:m, total] = rhs

    basis = np.empty(m, dtype=np.int64)
    for i in range(m):
        basis[i] = art_cols[i] if needs_art[i] else n + i

    # Phase 1: minimize the artificial sum.
    obj1 = np.zeros(total + 1)
    for cidx in art_cols.values():
        obj1[cidx] = 1.0
    T[m, :] = obj1
    for i in range(m):
        coef = T[m, basis[i]]
        if coef != 0.0:
            T[m, :] -= coef * T[i, :]
    status = simplex_loop(T, basis, PIVOT_TOL, max_iter)
    if status == SIMPLEX_ITER_LIMIT:
        raise RuntimeError("simplex iteration limit exceeded in phase 1")
    if T[m, total] < -FEAS_TOL:
        return LpResult(status=INFEASIBLE)

    # Drive leftover artificials out of the basis, dropping redundant rows;
    # pivot on the largest entry so noise never becomes a pivot element.
    art_set = set(art_cols.values())
    keep = np.ones(m, dtype=bool)
    for i in range(m):
        if basis[i] in art_set:
            j_best = int(np.argmax(np.abs(T[i, :n + m_ub])))
            piv_col = j_best if abs(T[i, j_best]) > PIVOT_TOL else -1
            if piv_col == -1:
                keep[i] = False
                continue
            T[i, :] /= T[i, piv_col]
            f = T[:, piv_col].copy()
            f[i] = 0.0
            T -= np.outer(f, T[i, :])
            basis[i] = piv_col

    row_idx = np.nonzero(keep)[0]
    real = n + m_ub
    T2 = np.zeros((row_idx.size + 1, real + 1))
    T2[:-1, :real] = T[row_idx, :real]
    T2[:-1, real] = T[row_idx, total]
    basis2 = basis[keep].copy()

    # Phase 2 objective, reduced against the current basis.
    obj2 = np.zeros(real + 1)
    obj2[:n] = prob.c
    T2[-1, :] = obj2
    for i in range(basis2.shape[0]):
        coef = T2[-1, basis2[i]]
        if coef != 0.0:
            T2[-1, :] -= coef * T2[i, :]
    status = simplex_loop(T2, basis2, PIVOT_TOL, max_iter)
    if status == SIMPLEX_ITER_LIMIT:
        raise RuntimeError("simplex iteration limit exceeded in phase 2")
    if status == SIMPLEX_UNBOUNDED:
        return LpResult(status=UNBOUNDED)

    x_shift = np.zeros(real)
    for i in range(basis2.shape[0]):
        x_shift[basis2[i]] = T2[i, real]
    x = x_shift[:n] + lo
    value = float(prob.c @ x_shift[:n]) + const
    return LpResult(status=OPTIMAL, x=x, value=value, basis=basis2.copy())
