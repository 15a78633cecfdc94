"""The three constraint-aware mechanisms shared by both heuristics.

M1 picks the cheapest (TP, PP) configuration that fits memory and the delay
SLO; M2 prices candidates per unit of effective coverage; M3 upgrades the
parallelism of an already-active pair when its current delay is too slow.
Each mechanism can be disabled individually for the ablation study.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .cost import Config, Solution, delay
from .instance import GB, Instance

TINY = 1e-12


@dataclass(frozen=True)
class MechanismFlags:
    m1: bool = True
    m2: bool = True
    m3: bool = True


@dataclass(frozen=True)
class SolverTables:
    """Per-instance constants precomputed once and shared by all starts."""
    cfg_n: np.ndarray      # (K, C) TP degree per config slot (padded)
    cfg_m: np.ndarray      # (K, C) PP depth
    cfg_prod: np.ndarray   # (K, C) n*m
    cfg_count: np.ndarray  # (K,) valid slots per tier
    delay_tbl: np.ndarray  # (I, J, K, C) per-config delay, +inf where padded
    shard_ok: np.ndarray   # (J, K, C) weight shard fits GPU memory
    m1_slot: np.ndarray    # (I, J, K) first feasible slot per M1, -1 if none

    def config_at(self, k: int, slot: int) -> Config:
        return Config(int(self.cfg_n[k, slot]), int(self.cfg_m[k, slot]))


def build_tables(inst: Instance) -> SolverTables:
    a = inst.arrays
    I, J, K = inst.I, inst.J, inst.K
    pp = inst.globals.pp_set
    per_tier = []
    for k in range(K):
        cfgs = sorted(((n * m, m, n) for n in inst.tiers[k].tp_set for m in pp))
        per_tier.append([(n, m) for (_, m, n) in cfgs])
    C = max(len(c) for c in per_tier)

    cfg_n = np.ones((K, C), dtype=np.int64)
    cfg_m = np.ones((K, C), dtype=np.int64)
    count = np.zeros(K, dtype=np.int64)
    for k, cfgs in enumerate(per_tier):
        count[k] = len(cfgs)
        for c, (n, m) in enumerate(cfgs):
            cfg_n[k, c] = n
            cfg_m[k, c] = m
    cfg_prod = cfg_n * cfg_m
    slot_valid = np.arange(C)[None, :] < count[:, None]  # (K, C)

    co = inst.coeffs
    # delay_tbl[i,j,k,c] = d_comp*r/n + m*d_comm*f
    dt = (co.d_comp[:, :, :, None] * a.r[:, None, None, None]
          / cfg_n[None, None, :, :]
          + cfg_m[None, None, :, :] * co.d_comm[:, :, :, None]
          * a.f[:, None, None, None])
    dt = np.where(slot_valid[None, None, :, :], dt, np.inf)

    shard_ok = (a.B[:, None, None] / cfg_prod[None, :, :]
                <= a.cap[None, :, None] + TINY) & slot_valid[None, :, :]

    feasible = shard_ok[None, :, :, :] & (dt <= a.delta[:, None, None, None] + TINY)
    any_ok = feasible.any(axis=3)
    first = feasible.argmax(axis=3)
    m1_slot = np.where(any_ok, first, -1).astype(np.int64)

    return SolverTables(cfg_n=cfg_n, cfg_m=cfg_m, cfg_prod=cfg_prod,
                        cfg_count=count, delay_tbl=dt, shard_ok=shard_ok,
                        m1_slot=m1_slot)


@dataclass
class AllocState:
    """Working allocation state owned by a single constructor."""
    inst: Instance
    tables: SolverTables
    x: np.ndarray          # (I,J,K)
    u: np.ndarray          # (I,) remaining unserved fraction
    z: np.ndarray          # (I,J,K) 0/1
    cfg_n: np.ndarray      # (J,K) deployed TP, -1 inactive
    cfg_m: np.ndarray      # (J,K)
    y: np.ndarray          # (J,K)
    e_used: np.ndarray     # (I,)
    d_used: np.ndarray     # (I,)
    budget_used: float
    mem_kv: np.ndarray     # (J,K) sum_i r_i * t_res[i,j,k] * x[i,j,k]
    comp_used: np.ndarray  # (J,K) sum_i alpha * (r*lam/1e3) * x
    sto_used: np.ndarray   # (I,) B_j*z + theta*r*lam*x summed over pairs

    @property
    def remaining(self) -> np.ndarray:
        return self.u

    def is_active(self, j: int, k: int) -> bool:
        return self.cfg_n[j, k] > 0

    def config(self, j: int, k: int) -> Config:
        return Config(int(self.cfg_n[j, k]), int(self.cfg_m[j, k]))

    def copy(self) -> "AllocState":
        return AllocState(
            inst=self.inst, tables=self.tables, x=self.x.copy(),
            u=self.u.copy(), z=self.z.copy(), cfg_n=self.cfg_n.copy(),
            cfg_m=self.cfg_m.copy(), y=self.y.copy(),
            e_used=self.e_used.copy(), d_used=self.d_used.copy(),
            budget_used=self.budget_used, mem_kv=self.mem_kv.copy(),
            comp_used=self.comp_used.copy(), sto_used=self.sto_used.copy())

    def to_solution(self) -> Solution:
        configs = {}
        J, K = self.cfg_n.shape
        for j in range(J):
            for k in range(K):
                if self.cfg_n[j, k] > 0:
                    configs[(j, k)] = Config(int(self.cfg_n[j, k]),
                                             int(self.cfg_m[j, k]))
        return Solution(x=self.x.copy(), u=self.u.copy(), configs=configs,
                        z=self.z.copy())


def fresh_state(inst: Instance, tables: Optional[SolverTables] = None) -> AllocState:
    if tables is None:
        tables = build_tables(inst)
    I, J, K = inst.I, inst.J, inst.K
    return AllocState(
        inst=inst, tables=tables,
        x=np.zeros((I, J, K)), u=np.ones(I), z=np.zeros((I, J, K)),
        cfg_n=np.full((J, K), -1, dtype=np.int64),
        cfg_m=np.full((J, K), -1, dtype=np.int64),
        y=np.zeros((J, K), dtype=np.int64),
        e_used=np.zeros(I), d_used=np.zeros(I), budget_used=0.0,
        mem_kv=np.zeros((J, K)), comp_used=np.zeros((J, K)),
        sto_used=np.zeros(I))


def state_from_solution(sol: Solution, inst: Instance,
                        tables: Optional[SolverTables] = None) -> AllocState:
    """Rebuild the incremental bookkeeping from a finished solution."""
    st = fresh_state(inst, tables)
    a = inst.arrays
    co = inst.coeffs
    st.x = sol.x.copy()
    st.u = sol.u.copy()
    st.z = sol.z.copy()
    for (j, k), cfg in sol.configs.items():
        st.cfg_n[j, k] = cfg.n
        st.cfg_m[j, k] = cfg.m
        st.y[j, k] = cfg.product
    for i in range(inst.I):
        d_i = 0.0
        for (j, k), cfg in sol.configs.items():
            if sol.x[i, j, k] > 0:
                d_i += sol.x[i, j, k] * delay(i, j, k, cfg.n, cfg.m, inst)
        st.d_used[i] = d_i
        st.e_used[i] = float(np.sum(co.e_bar[i] * sol.x[i]))
    st.mem_kv = np.einsum("i,ijk,ijk->jk", a.r, co.t_res, sol.x)
    st.comp_used = np.einsum("ijk,i,ijk->jk", co.alpha, a.r * a.lam / 1e3, sol.x)
    st.sto_used = (a.B[None, :, None] * sol.z
                   + (a.theta_gb * a.r * a.lam)[:, None, None] * sol.x).sum(axis=(1, 2))
    st.budget_used = _budget_of(st)
    return st


def _budget_of(st: AllocState) -> float:
    a = st.inst.arrays
    g = st.inst.globals
    c1 = g.horizon * float(np.sum(a.price[None, :] * st.y))
    c2 = g.horizon * g.storage_price * float(np.sum(a.B[None, :, None] * st.z))
    c3 = g.horizon * g.storage_price * float(
        np.sum((a.theta_gb * a.r * a.lam)[:, None, None] * st.x))
    return c1 + c2 + c3


# ---------------------------------------------------------------------------
# M1: constraint-aware configuration selection
# ---------------------------------------------------------------------------

def m1_select(i: int, j: int, k: int, inst: Instance,
              tables: Optional[SolverTables] = None,
              enabled: bool = True) -> Optional[Config]:
    """Cheapest (n, m) with the weight shard fitting memory and the
    per-query delay within the SLO; ties on n*m prefer smaller m, then n.
    Disabled (ablation) returns (1, 1) unconditionally."""
    if not enabled:
        return Config(1, 1)
    if tables is None:
        tables = build_tables(inst)
    slot = tables.m1_slot[i, j, k]
    if slot < 0:
        return None
    return tables.config_at(k, int(slot))


# ---------------------------------------------------------------------------
# M2: marginal cost and effective coverage
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Candidate:
    i: int
    j: int
    k: int
    config: Config
    coverage: float
    marginal_cost: float
    tau_flag: int
    mu: float
    deploy: bool = field(default=False, compare=False)
    ignore_delay: bool = field(default=False, compare=False)


def m2_score(i: int, j: int, k: int, cfg: Config, state: AllocState,
             inst: Instance, deploy: bool = False,
             ignore_delay: bool = False) -> Optional[Candidate]:
    a = inst.arrays
    g = inst.globals
    d = delay(i, j, k, cfg.n, cfg.m, inst)
    extra = max(cfg.product - int(state.y[j, k]), 0)
    cost = (g.horizon * (a.price[k] * extra
                         + g.storage_price * (a.B[j] + a.theta_gb[i] * a.r[i] * a.lam[i]))
            + a.rho[i] * d)
    cov = float(state.u[i])
    ebar = inst.coeffs.e_bar[i, j, k]
    if ebar > 0.0:
        cov = min(cov, (a.eps[i] - state.e_used[i]) / ebar)
    if not ignore_delay and d > 0.0:
        cov = min(cov, (a.delta[i] - state.d_used[i]) / d)
    if cov <= TINY:
        return None
    tau = 1 if cov < state.u[i] - TINY else 0
    return Candidate(i=i, j=j, k=k, config=cfg, coverage=cov,
                     marginal_cost=float(cost), tau_flag=tau,
                     mu=float(cost) / cov, deploy=deploy,
                     ignore_delay=ignore_delay)


# ---------------------------------------------------------------------------
# M3: parallelism upgrade for active pairs
# ---------------------------------------------------------------------------

def m3_upgrade(i: int, j: int, k: int, state: AllocState,
               inst: Instance) -> Optional[Config]:
    """Smallest-product config above the pair's current GPU count whose delay
    meets the SLO, whose shard (plus current KV load) fits memory, and whose
    extra GPUs fit the remaining budget."""
    t = state.tables
    a = inst.arrays
    g = inst.globals
    y_cur = int(state.y[j, k])
    beta_gb = a.beta[j] / GB
    for c in range(int(t.cfg_count[k])):
        prod = int(t.cfg_prod[k, c])
        if prod <= y_cur:
            continue
        if t.delay_tbl[i, j, k, c] > a.delta[i] + TINY:
            continue
        if (a.B[j] + beta_gb * state.mem_kv[j, k]) / prod > a.cap[k] + TINY:
            continue
        extra_cost = g.horizon * a.price[k] * (prod - y_cur)
        if state.budget_used + extra_cost > g.budget + TINY:
            continue
        return Config(int(t.cfg_n[k, c]), int(t.cfg_m[k, c]))
    return None


# ---------------------------------------------------------------------------
# Ranking
# ---------------------------------------------------------------------------

def rank(candidates: list[Candidate], use_m2: bool = True) -> list[Candidate]:
    """Ascending by (tau, mu), ablated to raw marginal cost; deterministic
    tie-break on (j, k, i)."""
    if use_m2:
        key = lambda c: (c.tau_flag, c.mu, c.j, c.k, c.i)
    else:
        key = lambda c: (c.marginal_cost, c.j, c.k, c.i)
    return sorted(candidates, key=key)
