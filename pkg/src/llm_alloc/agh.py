"""Adaptive greedy heuristic: multi-start GH construction over deterministic
and random query orderings, relocate local search, GPU consolidation, and
keep-best selection with early stopping."""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .cost import Config, CostBreakdown, Solution, objective
from .gh import GhParams, assumed_configs, phase1_cover, phase2_allocate
from .instance import GB, Instance
from .mechanisms import (TINY, AllocState, MechanismFlags, SolverTables,
                         build_tables, fresh_state, state_from_solution)
from .rng import substream

IMPROVE_TOL = 1e-9


@dataclass(frozen=True)
class AghParams:
    r_random: Optional[int] = None   # override adaptive random start count
    l_max: int = 3                   # relocate passes
    seed: int = 0
    early_stop: int = 5              # consecutive non-improving orderings
    threads: int = 1
    mechanisms: MechanismFlags = field(default_factory=MechanismFlags)
    phase1_frac: Optional[float] = None
    strict_verify: bool = False


@dataclass(frozen=True)
class TraceRow:
    index: int
    label: str
    objective: float
    accepted: bool
    best: float


def adaptive_r(n: int) -> int:
    if n > 5000:
        return 3
    if n > 2000:
        return 5
    if n > 500:
        return 10
    return 20


def orderings(inst: Instance, params: AghParams) -> list[tuple[str, np.ndarray]]:
    """8 deterministic orderings (asc/desc over arrival rate, unmet penalty,
    storage footprint and error tightness) plus R seeded random permutations."""
    a = inst.arrays
    idx = np.arange(inst.I)
    storage = a.theta_gb * a.r * a.lam
    out: list[tuple[str, np.ndarray]] = []
    for name, key in (("lam", a.lam), ("phi", a.phi),
                      ("storage", storage), ("eps", a.eps)):
        out.append((f"{name}_desc", np.lexsort((idx, -key))))
        out.append((f"{name}_asc", np.lexsort((idx, key))))
    r = params.r_random if params.r_random is not None \
        else adaptive_r(inst.I * inst.J * inst.K)
    rng = substream(params.seed, "orderings")
    for t in range(r):
        out.append((f"rand_{t}", rng.permutation(inst.I)))
    return out


# ---------------------------------------------------------------------------
# Move evaluation shared by relocate and consolidate
# ---------------------------------------------------------------------------

def _move_feasible_delta(state: AllocState, inst: Instance, i: int,
                         src: tuple[int, int], xv: float, tgt: tuple[int, int],
                         cfg: Config, extra: int, ignore_delay: bool,
                         check_shard: bool = True):
    """Feasibility and objective delta of moving the full fraction xv of
    query i from src to tgt at the given target config. Returns the delta or
    None when the move is infeasible. check_shard=False mirrors the M1
    ablation: the mover is blind to whether the weights fit."""
    a = inst.arrays
    g = inst.globals
    co = inst.coeffs
    j_s, k_s = src
    j_t, k_t = tgt

    old_src = state.config(j_s, k_s)
    d_src = (co.d_comp[i, j_s, k_s] * a.r[i] / old_src.n
             + old_src.m * co.d_comm[i, j_s, k_s] * a.f[i])
    d_tgt = (co.d_comp[i, j_t, k_t] * a.r[i] / cfg.n
             + cfg.m * co.d_comm[i, j_t, k_t] * a.f[i])

    e_new = state.e_used[i] + (co.e_bar[i, j_t, k_t] - co.e_bar[i, j_s, k_s]) * xv
    if e_new > a.eps[i] + TINY:
        return None
    d_new = state.d_used[i] + (d_tgt - d_src) * xv
    if not ignore_delay and d_new > a.delta[i] + TINY:
        return None

    nm = cfg.product
    beta_gb = a.beta[j_t] / GB
    kv = state.mem_kv[j_t, k_t] + a.r[i] * co.t_res[i, j_t, k_t] * xv
    shard = a.B[j_t] if check_shard else 0.0
    if (shard + beta_gb * kv) / nm > a.cap[k_t] + TINY:
        return None

    comp_add = co.alpha[i, j_t, k_t] * a.r[i] * a.lam[i] / 1e3 * xv
    y_new = int(state.y[j_t, k_t]) + extra
    if state.comp_used[j_t, k_t] + comp_add > \
            g.eta * g.t_conv * a.pflops[k_t] * y_new + TINY:
        return None

    z_flip_tgt = state.z[i, j_t, k_t] == 0.0
    sto_delta = (a.B[j_t] if z_flip_tgt else 0.0) - a.B[j_s]
    if state.sto_used[i] + sto_delta > g.storage_cap + TINY:
        return None

    others = float(state.x[:, j_s, k_s].sum()) - xv
    src_empties = others <= TINY
    dc1 = g.horizon * (a.price[k_t] * extra
                       - (a.price[k_s] * state.y[j_s, k_s] if src_empties else 0.0))
    dc2 = g.horizon * g.storage_price * sto_delta
    if state.budget_used + dc1 + dc2 > g.budget + TINY:
        return None

    delta = dc1 + dc2 + a.rho[i] * xv * (d_tgt - d_src)

    # A target upgrade shifts delays of queries already routed there.
    if extra > 0 and state.y[j_t, k_t] > 0:
        old_t = state.config(j_t, k_t)
        for i2 in np.nonzero(state.x[:, j_t, k_t] > 0.0)[0]:
            i2 = int(i2)
            x2 = state.x[i2, j_t, k_t]
            d_o = (co.d_comp[i2, j_t, k_t] * a.r[i2] / old_t.n
                   + old_t.m * co.d_comm[i2, j_t, k_t] * a.f[i2])
            d_n = (co.d_comp[i2, j_t, k_t] * a.r[i2] / cfg.n
                   + cfg.m * co.d_comm[i2, j_t, k_t] * a.f[i2])
            shift = x2 * (d_n - d_o)
            base = state.d_used[i2] + (0.0 if i2 != i else (d_tgt - d_src) * xv)
            if base + shift > a.delta[i2] + TINY:
                return None
            delta += a.rho[i2] * shift
    return delta


def _apply_move(state: AllocState, inst: Instance, i: int,
                src: tuple[int, int], xv: float, tgt: tuple[int, int],
                cfg: Config, extra: int) -> None:
    a = inst.arrays
    g = inst.globals
    co = inst.coeffs
    j_s, k_s = src
    j_t, k_t = tgt

    old_src = state.config(j_s, k_s)
    d_src = (co.d_comp[i, j_s, k_s] * a.r[i] / old_src.n
             + old_src.m * co.d_comm[i, j_s, k_s] * a.f[i])

    # Remove from source.
    state.x[i, j_s, k_s] = 0.0
    state.z[i, j_s, k_s] = 0.0
    state.e_used[i] -= co.e_bar[i, j_s, k_s] * xv
    state.d_used[i] -= d_src * xv
    state.mem_kv[j_s, k_s] -= a.r[i] * co.t_res[i, j_s, k_s] * xv
    state.comp_used[j_s, k_s] -= co.alpha[i, j_s, k_s] * a.r[i] * a.lam[i] / 1e3 * xv
    sto_x = a.theta_gb[i] * a.r[i] * a.lam[i]
    state.sto_used[i] -= a.B[j_s] + sto_x * xv
    state.budget_used -= g.horizon * g.storage_price * (a.B[j_s] + sto_x * xv)
    if float(state.x[:, j_s, k_s].sum()) <= TINY:
        state.budget_used -= g.horizon * a.price[k_s] * state.y[j_s, k_s]
        state.x[:, j_s, k_s] = 0.0
        state.cfg_n[j_s, k_s] = -1
        state.cfg_m[j_s, k_s] = -1
        state.y[j_s, k_s] = 0

    # Upgrade target if needed, shifting delays of queries already there.
    if state.y[j_t, k_t] > 0 and extra > 0:
        old_t = state.config(j_t, k_t)
        for i2 in np.nonzero(state.x[:, j_t, k_t] > 0.0)[0]:
            i2 = int(i2)
            x2 = state.x[i2, j_t, k_t]
            d_o = (co.d_comp[i2, j_t, k_t] * a.r[i2] / old_t.n
                   + old_t.m * co.d_comm[i2, j_t, k_t] * a.f[i2])
            d_n = (co.d_comp[i2, j_t, k_t] * a.r[i2] / cfg.n
                   + cfg.m * co.d_comm[i2, j_t, k_t] * a.f[i2])
            state.d_used[i2] += x2 * (d_n - d_o)
    if state.cfg_n[j_t, k_t] != cfg.n or state.cfg_m[j_t, k_t] != cfg.m \
            or state.y[j_t, k_t] != cfg.product:
        state.budget_used += g.horizon * a.price[k_t] * (cfg.product - state.y[j_t, k_t])
        state.cfg_n[j_t, k_t] = cfg.n
        state.cfg_m[j_t, k_t] = cfg.m
        state.y[j_t, k_t] = cfg.product

    # Add at target.
    d_tgt = (co.d_comp[i, j_t, k_t] * a.r[i] / cfg.n
             + cfg.m * co.d_comm[i, j_t, k_t] * a.f[i])
    z_flip = state.z[i, j_t, k_t] == 0.0
    state.x[i, j_t, k_t] += xv
    state.z[i, j_t, k_t] = 1.0
    state.e_used[i] += co.e_bar[i, j_t, k_t] * xv
    state.d_used[i] += d_tgt * xv
    state.mem_kv[j_t, k_t] += a.r[i] * co.t_res[i, j_t, k_t] * xv
    state.comp_used[j_t, k_t] += co.alpha[i, j_t, k_t] * a.r[i] * a.lam[i] / 1e3 * xv
    state.sto_used[i] += (a.B[j_t] if z_flip else 0.0) + sto_x * xv
    state.budget_used += g.horizon * g.storage_price * (
        (a.B[j_t] if z_flip else 0.0) + sto_x * xv)


# ---------------------------------------------------------------------------
# Relocate
# ---------------------------------------------------------------------------

def _relocate_state(state: AllocState, inst: Instance, l_max: int,
                    flags: MechanismFlags) -> int:
    """First-improvement relocation passes; returns the move count."""
    a = inst.arrays
    co = inst.coeffs
    J, K = inst.J, inst.K
    moves = 0
    for _ in range(max(l_max, 0)):
        moved_in_pass = False
        assignments = np.argwhere(state.x > TINY)
        for i, j_s, k_s in assignments:
            i, j_s, k_s = int(i), int(j_s), int(k_s)
            xv = float(state.x[i, j_s, k_s])
            if xv <= TINY:
                continue
            valid, n_cfg, m_cfg, extra, deploy, ignore_delay = \
                assumed_configs(i, state, inst, flags)
            p_src = j_s * K + k_s
            valid[p_src] = False
            old_src = state.config(j_s, k_s)
            d_src = (co.d_comp[i, j_s, k_s] * a.r[i] / old_src.n
                     + old_src.m * co.d_comm[i, j_s, k_s] * a.f[i])
            # Cheap vectorized screen on the delay/error dimensions before
            # running the full per-target feasibility check.
            dd = co.d_comp[i].ravel() * a.r[i] / np.where(n_cfg > 0, n_cfg, 1.0) \
                + m_cfg * co.d_comm[i].ravel() * a.f[i]
            e_shift = state.e_used[i] + (co.e_bar[i].ravel()
                                         - co.e_bar[i, j_s, k_s]) * xv
            d_shift = state.d_used[i] + (dd - d_src) * xv
            screen = valid & (e_shift <= a.eps[i] + TINY) \
                & ((d_shift <= a.delta[i] + TINY) | ignore_delay)
            for p in np.nonzero(screen)[0]:
                j_t, k_t = divmod(int(p), K)
                cfg = Config(int(n_cfg[p]), int(m_cfg[p]))
                delta = _move_feasible_delta(
                    state, inst, i, (j_s, k_s), xv, (j_t, k_t), cfg,
                    int(extra[p]), bool(ignore_delay[p]),
                    check_shard=flags.m1)
                if delta is not None and delta < -IMPROVE_TOL:
                    _apply_move(state, inst, i, (j_s, k_s), xv, (j_t, k_t),
                                cfg, int(extra[p]))
                    moves += 1
                    moved_in_pass = True
                    break
        if not moved_in_pass:
            break
    return moves


def relocate(sol: Solution, inst: Instance, l_max: int = 3,
             flags: MechanismFlags = MechanismFlags(),
             tables: Optional[SolverTables] = None) -> Solution:
    state = state_from_solution(sol, inst, tables)
    _relocate_state(state, inst, l_max, flags)
    out = state.to_solution()
    out.meta = dict(sol.meta)
    return out


# ---------------------------------------------------------------------------
# Consolidate
# ---------------------------------------------------------------------------

def _consolidate_state(state: AllocState, inst: Instance,
                       flags: MechanismFlags) -> int:
    a = inst.arrays
    g = inst.globals
    co = inst.coeffs
    deactivated = 0

    active = [(j, k) for j in range(inst.J) for k in range(inst.K)
              if state.cfg_n[j, k] > 0]
    loads = []
    for (j, k) in active:
        cap = g.eta * g.t_conv * a.pflops[k] * state.y[j, k]
        loads.append((state.comp_used[j, k] / cap if cap > 0 else 0.0, j, k))
    loads.sort()

    for _, j_s, k_s in loads:
        if state.cfg_n[j_s, k_s] <= 0:
            continue
        cur_total = objective(state.to_solution(), inst).total
        trial = state.copy()
        # Deactivation credit first so moves see the freed budget.
        trial.budget_used -= g.horizon * a.price[k_s] * trial.y[j_s, k_s]
        trial.y[j_s, k_s] = 0
        ok = True
        for i in np.nonzero(trial.x[:, j_s, k_s] > TINY)[0]:
            i = int(i)
            xv = float(trial.x[i, j_s, k_s])
            placed = False
            for j_t in range(inst.J):
                for k_t in range(inst.K):
                    if (j_t, k_t) == (j_s, k_s) or trial.cfg_n[j_t, k_t] <= 0:
                        continue
                    cfg = trial.config(j_t, k_t)
                    delta = _move_feasible_delta(
                        trial, inst, i, (j_s, k_s), xv, (j_t, k_t), cfg, 0,
                        False, check_shard=flags.m1)
                    if delta is None:
                        continue
                    _apply_move(trial, inst, i, (j_s, k_s), xv, (j_t, k_t),
                                cfg, 0)
                    placed = True
                    break
                if placed:
                    break
            if not placed:
                ok = False
                break
        if not ok:
            continue
        trial.cfg_n[j_s, k_s] = -1
        trial.cfg_m[j_s, k_s] = -1
        trial.y[j_s, k_s] = 0
        new_total = objective(trial.to_solution(), inst).total
        if new_total < cur_total - IMPROVE_TOL:
            state.x = trial.x
            state.u = trial.u
            state.z = trial.z
            state.cfg_n = trial.cfg_n
            state.cfg_m = trial.cfg_m
            state.y = trial.y
            state.e_used = trial.e_used
            state.d_used = trial.d_used
            state.budget_used = trial.budget_used
            state.mem_kv = trial.mem_kv
            state.comp_used = trial.comp_used
            state.sto_used = trial.sto_used
            deactivated += 1
    return deactivated


def consolidate(sol: Solution, inst: Instance,
                flags: MechanismFlags = MechanismFlags(),
                tables: Optional[SolverTables] = None) -> Solution:
    state = state_from_solution(sol, inst, tables)
    _consolidate_state(state, inst, flags)
    out = state.to_solution()
    out.meta = dict(sol.meta)
    return out


# ---------------------------------------------------------------------------
# AGH driver
# ---------------------------------------------------------------------------

def agh_solve(inst: Instance, params: Optional[AghParams] = None,
              tables: Optional[SolverTables] = None,
              ) -> tuple[Solution, CostBreakdown, float, list[TraceRow]]:
    params = params or AghParams()
    t0 = time.perf_counter()
    if tables is None:
        tables = build_tables(inst)
    flags = params.mechanisms

    base = fresh_state(inst, tables)
    phase1_cover(inst, base, flags, params.phase1_frac)
    ords = orderings(inst, params)

    def run_one(item):
        idx, (label, perm) = item
        st = base.copy()
        gh_params = GhParams(ordering=perm, mechanisms=flags,
                             phase1_frac=params.phase1_frac,
                             strict_verify=params.strict_verify)
        phase2_allocate(inst, st, gh_params)
        _relocate_state(st, inst, params.l_max, flags)
        _consolidate_state(st, inst, flags)
        sol = st.to_solution()
        return idx, label, sol, objective(sol, inst)

    trace: list[TraceRow] = []
    best_sol = None
    best_br = None
    best_total = np.inf
    stale = 0
    items = list(enumerate(ords))
    threads = max(int(params.threads), 1)
    pos = 0
    with ThreadPoolExecutor(max_workers=threads) as pool:
        while pos < len(items) and stale < params.early_stop:
            chunk = items[pos:pos + threads]
            pos += len(chunk)
            if threads == 1:
                results = [run_one(it) for it in chunk]
            else:
                results = list(pool.map(run_one, chunk))
            for idx, label, sol, br in results:
                if stale >= params.early_stop:
                    break
                accepted = br.total < best_total - IMPROVE_TOL
                if accepted:
                    best_sol, best_br, best_total = sol, br, br.total
                    stale = 0
                else:
                    stale += 1
                trace.append(TraceRow(index=idx, label=label,
                                      objective=br.total, accepted=accepted,
                                      best=best_total))
    best_sol.meta["algo"] = "agh"
    return best_sol, best_br, time.perf_counter() - t0, trace
