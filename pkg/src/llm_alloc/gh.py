"""Greedy heuristic: set-cover pre-allocation followed by sequential
per-query allocation driven by the three constraint-aware mechanisms."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._kernels import score_pairs
from .cost import Config, CostBreakdown, Solution, objective
from .instance import GB, Instance
from .mechanisms import (TINY, AllocState, Candidate, MechanismFlags,
                         SolverTables, build_tables, fresh_state, m1_select,
                         m2_score, m3_upgrade, rank)


@dataclass(frozen=True)
class GhParams:
    ordering: Optional[np.ndarray] = None       # default: lambda descending
    mechanisms: MechanismFlags = field(default_factory=MechanismFlags)
    phase1_frac: Optional[float] = None         # default from Globals
    strict_verify: bool = False                 # skip instead of shrink


def default_ordering(inst: Instance) -> np.ndarray:
    lam = inst.arrays.lam
    return np.lexsort((np.arange(inst.I), -lam))


# ---------------------------------------------------------------------------
# Phase 1: coverage pre-allocation (greedy set cover)
# ---------------------------------------------------------------------------

def phase1_cover(inst: Instance, state: AllocState,
                 flags: MechanismFlags = MechanismFlags(),
                 phase1_frac: Optional[float] = None) -> None:
    a = inst.arrays
    g = inst.globals
    t = state.tables
    frac = g.phase1_frac if phase1_frac is None else phase1_frac
    I, J, K = inst.I, inst.J, inst.K

    if flags.m1:
        exists = t.m1_slot >= 0                     # (I,J,K)
        prod = np.where(exists, t.cfg_prod[np.arange(K)[None, None, :],
                                           np.clip(t.m1_slot, 0, None)], 0)
    else:
        exists = np.ones((I, J, K), dtype=bool)
        prod = np.ones((I, J, K), dtype=np.int64)
    err_ok = inst.coeffs.e_bar <= a.eps[:, None, None] + TINY
    member = exists & err_ok                        # (I,J,K)

    uncovered = np.ones(I, dtype=bool)
    while uncovered.any() and state.budget_used < frac * g.budget - TINY:
        cover = member & uncovered[:, None, None]
        sizes = cover.sum(axis=0)                   # (J,K)
        maxprod = np.where(cover, prod, 0).max(axis=0)
        cost = g.horizon * a.price[None, :] * maxprod
        best = None
        for j in range(J):
            for k in range(K):
                if sizes[j, k] == 0:
                    continue
                if state.budget_used + cost[j, k] > g.budget + TINY:
                    continue
                ratio = sizes[j, k] / cost[j, k]
                if best is None or ratio > best[0] + TINY:
                    best = (ratio, j, k)
        if best is None:
            break
        _, j, k = best
        members = np.nonzero(cover[:, j, k])[0]
        hardest = members[np.argmax(prod[members, j, k])]
        if flags.m1:
            cfg = state.tables.config_at(k, int(t.m1_slot[hardest, j, k]))
        else:
            cfg = Config(1, 1)
        state.cfg_n[j, k] = cfg.n
        state.cfg_m[j, k] = cfg.m
        state.y[j, k] = cfg.product
        state.budget_used += g.horizon * a.price[k] * cfg.product
        uncovered[members] = False


# ---------------------------------------------------------------------------
# Phase 2: sequential allocation
# ---------------------------------------------------------------------------

def assumed_configs(i: int, state: AllocState, inst: Instance,
                    flags: MechanismFlags):
    """Per-pair config the allocator would use for query i: M1 for inactive
    pairs, the deployed config or an M3 upgrade for active ones. Returns flat
    (J*K,) arrays (valid, n, m, extra_gpus, deploy, ignore_delay)."""
    a = inst.arrays
    t = state.tables
    co = inst.coeffs
    J, K = inst.J, inst.K
    P = J * K

    n_cfg = np.zeros(P)
    m_cfg = np.zeros(P)
    valid = np.zeros(P, dtype=np.bool_)
    extra = np.zeros(P)
    deploy = np.zeros(P, dtype=np.bool_)
    ignore_delay = np.zeros(P, dtype=np.bool_)

    if flags.m1:
        slots = t.m1_slot[i]                        # (J,K)
        inact_valid = slots >= 0
        sl = np.clip(slots, 0, None)
        kk = np.arange(K)[None, :]
        n_in = t.cfg_n[kk, sl].astype(float)
        m_in = t.cfg_m[kk, sl].astype(float)
    else:
        inact_valid = np.ones((J, K), dtype=bool)
        n_in = np.ones((J, K))
        m_in = np.ones((J, K))

    active = state.cfg_n > 0
    sel = (~active) & inact_valid
    valid[sel.ravel()] = True
    n_cfg.reshape(J, K)[sel] = n_in[sel]
    m_cfg.reshape(J, K)[sel] = m_in[sel]
    extra.reshape(J, K)[sel] = (n_in * m_in)[sel]
    deploy.reshape(J, K)[sel] = True

    for j, k in np.argwhere(active):
        p = j * K + k
        cur = state.config(j, k)
        d_cur = (co.d_comp[i, j, k] * a.r[i] / cur.n
                 + cur.m * co.d_comm[i, j, k] * a.f[i])
        if d_cur <= a.delta[i] + TINY:
            valid[p] = True
            n_cfg[p], m_cfg[p] = cur.n, cur.m
        elif flags.m3:
            up = m3_upgrade(i, j, k, state, inst)
            if up is not None:
                valid[p] = True
                n_cfg[p], m_cfg[p] = up.n, up.m
                extra[p] = up.product - state.y[j, k]
                deploy[p] = True
        else:
            # Ablation hole: reuse the slow deployed config with no delay
            # screening; the referee will surface the resulting SLO miss.
            valid[p] = True
            n_cfg[p], m_cfg[p] = cur.n, cur.m
            ignore_delay[p] = True
    return valid, n_cfg, m_cfg, extra, deploy, ignore_delay


def _build_candidates(i: int, state: AllocState, inst: Instance,
                      flags: MechanismFlags) -> list[Candidate]:
    a = inst.arrays
    co = inst.coeffs
    J, K = inst.J, inst.K
    P = J * K
    valid, n_cfg, m_cfg, extra, deploy, ignore_delay = \
        assumed_configs(i, state, inst, flags)

    price = np.broadcast_to(a.price[None, :], (J, K)).ravel()
    weight = np.broadcast_to(a.B[:, None], (J, K)).ravel()
    dcomp = co.d_comp[i].ravel()
    dcomm = co.d_comm[i].ravel()
    ebar = co.e_bar[i].ravel()
    out_delay = np.zeros(P)
    out_cov = np.zeros(P)
    out_cost = np.zeros(P)
    g = inst.globals
    score_pairs(valid, n_cfg, m_cfg, extra, dcomp, dcomm, ebar, price, weight,
                a.theta_gb[i] * a.r[i] * a.lam[i], a.r[i], a.f[i],
                float(state.u[i]), float(a.eps[i] - state.e_used[i]),
                float(a.delta[i] - state.d_used[i]), g.horizon,
                g.storage_price, a.rho[i], out_delay, out_cov, out_cost)

    # The delay-blind candidates keep only demand/error caps.
    for p in np.nonzero(ignore_delay)[0]:
        cov = float(state.u[i])
        if ebar[p] > 0.0:
            cov = min(cov, (a.eps[i] - state.e_used[i]) / ebar[p])
        out_cov[p] = max(cov, 0.0)

    cands = []
    for p in np.nonzero(valid & (out_cov > TINY))[0]:
        j, k = divmod(int(p), K)
        cov = float(out_cov[p])
        cands.append(Candidate(
            i=i, j=j, k=k, config=Config(int(n_cfg[p]), int(m_cfg[p])),
            coverage=cov, marginal_cost=float(out_cost[p]),
            tau_flag=1 if cov < state.u[i] - TINY else 0,
            mu=float(out_cost[p]) / cov, deploy=bool(deploy[p]),
            ignore_delay=bool(ignore_delay[p])))
    return cands


def _commit(cand: Candidate, state: AllocState, inst: Instance,
            strict: bool, flags: MechanismFlags = MechanismFlags()) -> float:
    """Verify capacity constraints at the commit amount and apply it,
    shrinking to the largest feasible fraction unless strict_verify.

    The weight-shard part of the memory check belongs to M1 (it is the
    mechanism that knows whether a model fits); with M1 ablated the
    allocator is blind to it and only meters the KV increment."""
    i, j, k = cand.i, cand.j, cand.k
    cfg = cand.config
    a = inst.arrays
    g = inst.globals
    co = inst.coeffs
    nm = cfg.product
    y_cur = int(state.y[j, k])
    changes_config = cand.deploy and (state.cfg_n[j, k] != cfg.n
                                      or state.cfg_m[j, k] != cfg.m)
    extra = nm - y_cur if changes_config else 0
    eff_nm = nm if cand.deploy or state.cfg_n[j, k] <= 0 else int(state.y[j, k])

    d_cfg = (co.d_comp[i, j, k] * a.r[i] / cfg.n
             + cfg.m * co.d_comm[i, j, k] * a.f[i])

    # Fresh coverage: earlier commits for this query may have consumed
    # error/delay headroom since the candidate was scored.
    cov = float(state.u[i])
    ebar = co.e_bar[i, j, k]
    if ebar > 0.0:
        cov = min(cov, (a.eps[i] - state.e_used[i]) / ebar)
    if not cand.ignore_delay and d_cfg > 0.0:
        cov = min(cov, (a.delta[i] - state.d_used[i]) / d_cfg)
    desired = min(float(state.u[i]), cov)
    if desired <= TINY:
        return 0.0

    z_flip = state.z[i, j, k] == 0.0
    dc1 = g.horizon * a.price[k] * extra
    dc2 = g.horizon * g.storage_price * a.B[j] if z_flip else 0.0
    if state.budget_used + dc1 + dc2 > g.budget + TINY:
        return 0.0

    # Upgrades must keep every previously routed query within its SLO.
    if changes_config and y_cur > 0:
        old = state.config(j, k)
        for i2 in np.nonzero(state.x[:, j, k] > 0.0)[0]:
            d_old = (co.d_comp[i2, j, k] * a.r[i2] / old.n
                     + old.m * co.d_comm[i2, j, k] * a.f[i2])
            d_new = (co.d_comp[i2, j, k] * a.r[i2] / cfg.n
                     + cfg.m * co.d_comm[i2, j, k] * a.f[i2])
            shifted = state.d_used[i2] + state.x[i2, j, k] * (d_new - d_old)
            if shifted > a.delta[i2] + TINY:
                return 0.0

    # Linear caps on the committed fraction t.
    t_max = desired
    beta_gb = a.beta[j] / GB
    kv_coef = beta_gb / eff_nm * a.r[i] * co.t_res[i, j, k]
    shard = a.B[j] if flags.m1 else 0.0
    mem_slack = a.cap[k] - (shard + beta_gb * state.mem_kv[j, k]) / eff_nm
    if kv_coef > 0.0:
        t_max = min(t_max, mem_slack / kv_coef)
    elif mem_slack < -TINY:
        return 0.0

    comp_coef = co.alpha[i, j, k] * a.r[i] * a.lam[i] / 1e3
    comp_slack = (g.eta * g.t_conv * a.pflops[k] * (y_cur + extra)
                  - state.comp_used[j, k])
    if comp_coef > 0.0:
        t_max = min(t_max, comp_slack / comp_coef)
    elif comp_slack < -TINY:
        return 0.0

    sto_coef = a.theta_gb[i] * a.r[i] * a.lam[i]
    sto_slack = g.storage_cap - state.sto_used[i] - (a.B[j] if z_flip else 0.0)
    if sto_coef > 0.0:
        t_max = min(t_max, sto_slack / sto_coef)
    elif sto_slack < -TINY:
        return 0.0

    bud_coef = g.horizon * g.storage_price * sto_coef
    bud_slack = g.budget - state.budget_used - dc1 - dc2
    if bud_coef > 0.0:
        t_max = min(t_max, bud_slack / bud_coef)

    if strict and t_max < desired - 1e-9:
        return 0.0
    t = min(desired, t_max)
    if t <= TINY:
        return 0.0

    # Apply.
    if cand.deploy:
        state.cfg_n[j, k] = cfg.n
        state.cfg_m[j, k] = cfg.m
        state.y[j, k] = nm
    state.x[i, j, k] += t
    state.z[i, j, k] = 1.0
    state.u[i] -= t
    if state.u[i] < 0.0:
        state.u[i] = 0.0
    state.e_used[i] += ebar * t
    state.d_used[i] += d_cfg * t
    if changes_config and y_cur > 0:
        old_n, old_m = old.n, old.m
        for i2 in np.nonzero(state.x[:, j, k] > 0.0)[0]:
            if i2 == i:
                continue
            d_o = (co.d_comp[i2, j, k] * a.r[i2] / old_n
                   + old_m * co.d_comm[i2, j, k] * a.f[i2])
            d_n = (co.d_comp[i2, j, k] * a.r[i2] / cfg.n
                   + cfg.m * co.d_comm[i2, j, k] * a.f[i2])
            state.d_used[i2] += state.x[i2, j, k] * (d_n - d_o)
    state.mem_kv[j, k] += a.r[i] * co.t_res[i, j, k] * t
    state.comp_used[j, k] += comp_coef * t
    state.sto_used[i] += (a.B[j] if z_flip else 0.0) + sto_coef * t
    state.budget_used += dc1 + dc2 + bud_coef * t
    return t


def phase2_allocate(inst: Instance, state: AllocState,
                    params: GhParams) -> Solution:
    flags = params.mechanisms
    ordering = params.ordering if params.ordering is not None \
        else default_ordering(inst)
    for i in ordering:
        i = int(i)
        if state.u[i] <= TINY:
            continue
        cands = _build_candidates(i, state, inst, flags)
        for cand in rank(cands, use_m2=flags.m2):
            if state.u[i] <= TINY:
                break
            _commit(cand, state, inst, params.strict_verify, flags)
    return state.to_solution()


def gh_solve(inst: Instance, params: Optional[GhParams] = None,
             tables: Optional[SolverTables] = None,
             ) -> tuple[Solution, CostBreakdown, float]:
    params = params or GhParams()
    t0 = time.perf_counter()
    state = fresh_state(inst, tables)
    phase1_cover(inst, state, params.mechanisms, params.phase1_frac)
    sol = phase2_allocate(inst, state, params)
    breakdown = objective(sol, inst)
    return sol, breakdown, time.perf_counter() - t0
