"""Exact solver for tiny instances plus MILP construction and MPS export.

The bilinear routing-times-config products are linearized with McCormick
envelopes. Tiny instances are solved to optimality by enumerating per-pair
configuration choices and branching on placement binaries with LP bounds;
anything larger is exported as MPS for an external solver.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .cost import Config, CostBreakdown, Solution, objective
from .instance import GB, Instance
from .lp import INFEASIBLE, OPTIMAL, LpProblem, lp_solve
from .mechanisms import build_tables

GAP = 1e-6

STATUS_OPTIMAL = "optimal"
STATUS_INFEASIBLE = "infeasible"
STATUS_TOO_LARGE = "too_large"


@dataclass(frozen=True)
class SizeLimits:
    max_pairs: int = 6
    max_configs: int = 4
    max_cells: int = 32


# ---------------------------------------------------------------------------
# Full MILP construction
# ---------------------------------------------------------------------------

@dataclass
class MilpVar:
    name: str
    mps: str
    kind: str          # 'C' continuous, 'B' binary
    lo: float
    hi: float
    obj: float


@dataclass
class MilpRow:
    name: str
    mps: str
    sense: str         # 'L', 'E', 'G'
    coeffs: dict[int, float]
    rhs: float


@dataclass
class MilpModel:
    variables: list[MilpVar] = field(default_factory=list)
    rows: list[MilpRow] = field(default_factory=list)
    index: dict[str, int] = field(default_factory=dict)

    def add_var(self, name: str, mps: str, kind: str, lo: float, hi: float,
                obj: float) -> int:
        self.index[name] = len(self.variables)
        self.variables.append(MilpVar(name, mps, kind, lo, hi, obj))
        return self.index[name]

    def add_row(self, name: str, mps: str, sense: str,
                coeffs: dict[int, float], rhs: float) -> None:
        self.rows.append(MilpRow(name, mps, sense, coeffs, rhs))


def build_milp(inst: Instance) -> MilpModel:
    a = inst.arrays
    g = inst.globals
    co = inst.coeffs
    t = build_tables(inst)
    I, J, K = inst.I, inst.J, inst.K
    md = MilpModel()
    counters: dict[str, int] = {}

    def alias(fam: str) -> str:
        c = counters.get(fam, 0)
        counters[fam] = c + 1
        return f"{fam}{c:0{8 - len(fam)}d}"

    theta_rl = a.theta_gb * a.r * a.lam

    x_id = {}
    for i in range(I):
        for j in range(J):
            for k in range(K):
                x_id[i, j, k] = md.add_var(
                    f"x[{i},{j},{k}]", alias("X"), "C", 0.0, 1.0,
                    g.horizon * g.storage_price * theta_rl[i])
    u_id = {}
    for i in range(I):
        u_id[i] = md.add_var(f"u[{i}]", alias("U"), "C", 0.0,
                             float(a.zeta[i]), float(a.phi[i]))
    z_id = {}
    for i in range(I):
        for j in range(J):
            for k in range(K):
                z_id[i, j, k] = md.add_var(
                    f"z[{i},{j},{k}]", alias("Z"), "B", 0.0, 1.0,
                    g.horizon * g.storage_price * a.B[j])
    w_id = {}
    for j in range(J):
        for k in range(K):
            for c in range(int(t.cfg_count[k])):
                n, m = int(t.cfg_n[k, c]), int(t.cfg_m[k, c])
                w_id[j, k, c] = md.add_var(
                    f"w[{j},{k},n{n},m{m}]", alias("W"), "B", 0.0, 1.0,
                    g.horizon * a.price[k] * n * m)
    v_id = {}
    for i in range(I):
        for j in range(J):
            for k in range(K):
                for c in range(int(t.cfg_count[k])):
                    n, m = int(t.cfg_n[k, c]), int(t.cfg_m[k, c])
                    v_id[i, j, k, c] = md.add_var(
                        f"v[{i},{j},{k},n{n},m{m}]", alias("V"), "C", 0.0, 1.0,
                        float(a.rho[i] * t.delay_tbl[i, j, k, c]))

    # demand balance (equality)
    for i in range(I):
        coeffs = {x_id[i, j, k]: 1.0 for j in range(J) for k in range(K)}
        coeffs[u_id[i]] = 1.0
        md.add_row(f"demand:{i}", alias("DEM"), "E", coeffs, 1.0)

    # budget
    coeffs = {}
    for (j, k, c), vid in w_id.items():
        coeffs[vid] = g.horizon * a.price[k] * float(t.cfg_prod[k, c])
    for (i, j, k), vid in z_id.items():
        coeffs[vid] = g.horizon * g.storage_price * a.B[j]
    for (i, j, k), vid in x_id.items():
        coeffs[vid] = coeffs.get(vid, 0.0) + g.horizon * g.storage_price * theta_rl[i]
    md.add_row("budget", alias("BUD"), "L", coeffs, g.budget)

    for j in range(J):
        for k in range(K):
            cs = range(int(t.cfg_count[k]))
            # at most one configuration per pair
            md.add_row(f"one_config:{j},{k}", alias("CFG"), "L",
                       {w_id[j, k, c]: 1.0 for c in cs}, 1.0)
            # memory: shard + KV residency, RHS gated by the deployment flag
            coeffs = {}
            for c in cs:
                prod = float(t.cfg_prod[k, c])
                coeffs[w_id[j, k, c]] = a.B[j] / prod - a.cap[k]
                for i in range(I):
                    coeffs[v_id[i, j, k, c]] = (a.beta[j] / GB) / prod \
                        * a.r[i] * co.t_res[i, j, k]
            md.add_row(f"memory:{j},{k}", alias("MEM"), "L", coeffs, 0.0)
            # compute throughput
            coeffs = {x_id[i, j, k]: co.alpha[i, j, k] * a.r[i] * a.lam[i] / 1e3
                      for i in range(I)}
            for c in cs:
                coeffs[w_id[j, k, c]] = -g.eta * g.t_conv * a.pflops[k] \
                    * float(t.cfg_prod[k, c])
            md.add_row(f"compute:{j},{k}", alias("CMP"), "L", coeffs, 0.0)

    # storage per query type
    for i in range(I):
        coeffs = {}
        for j in range(J):
            for k in range(K):
                coeffs[z_id[i, j, k]] = a.B[j]
                coeffs[x_id[i, j, k]] = theta_rl[i]
        md.add_row(f"storage:{i}", alias("STO"), "L", coeffs, g.storage_cap)

    # delay and error SLOs
    for i in range(I):
        coeffs = {v_id[i, j, k, c]: float(t.delay_tbl[i, j, k, c])
                  for j in range(J) for k in range(K)
                  for c in range(int(t.cfg_count[k]))}
        md.add_row(f"delay:{i}", alias("DEL"), "L", coeffs, float(a.delta[i]))
        coeffs = {x_id[i, j, k]: float(co.e_bar[i, j, k])
                  for j in range(J) for k in range(K)}
        md.add_row(f"error:{i}", alias("ERR"), "L", coeffs, float(a.eps[i]))

    # linkage x <= z <= sum_c w
    for i in range(I):
        for j in range(J):
            for k in range(K):
                md.add_row(f"x_le_z:{i},{j},{k}", alias("XZ"), "L",
                           {x_id[i, j, k]: 1.0, z_id[i, j, k]: -1.0}, 0.0)
                coeffs = {z_id[i, j, k]: 1.0}
                for c in range(int(t.cfg_count[k])):
                    coeffs[w_id[j, k, c]] = -1.0
                md.add_row(f"z_le_q:{i},{j},{k}", alias("ZQ"), "L", coeffs, 0.0)

    # McCormick envelope rows for v = x * w
    for (i, j, k, c), vid in v_id.items():
        md.add_row(f"mccormick_vx:{i},{j},{k},{c}", alias("MA"), "L",
                   {vid: 1.0, x_id[i, j, k]: -1.0}, 0.0)
        md.add_row(f"mccormick_vw:{i},{j},{k},{c}", alias("MB"), "L",
                   {vid: 1.0, w_id[j, k, c]: -1.0}, 0.0)
        md.add_row(f"mccormick_lb:{i},{j},{k},{c}", alias("MC"), "G",
                   {vid: 1.0, x_id[i, j, k]: -1.0, w_id[j, k, c]: -1.0}, -1.0)
    return md


def export_mps(model: MilpModel, path) -> None:
    """Fixed-layout MPS with binaries inside INTORG/INTEND markers; a comment
    legend maps the 8-character aliases back to structured names."""
    lines = ["* llm-alloc MILP export", "* alias legend:"]
    for v in model.variables:
        lines.append(f"* {v.mps} = {v.name}")
    for r in model.rows:
        lines.append(f"* {r.mps} = {r.name}")
    lines.append("NAME          LLMALLOC")
    lines.append("ROWS")
    lines.append(" N  COST")
    for r in model.rows:
        lines.append(f" {r.sense}  {r.mps}")

    by_col: list[list[tuple[str, float]]] = [[] for _ in model.variables]
    for r in model.rows:
        for ci, coef in sorted(r.coeffs.items()):
            by_col[ci].append((r.mps, coef))

    def colline(col: str, row: str, val: float) -> str:
        return f"    {col:<8}  {row:<8}  {format(val, '.12g')}"

    lines.append("COLUMNS")
    order = sorted(range(len(model.variables)),
                   key=lambda idx: (model.variables[idx].kind == "B", idx))
    in_int = False
    marker = 0
    for idx in order:
        v = model.variables[idx]
        if v.kind == "B" and not in_int:
            lines.append(f"    MARKER{marker:02d}  'MARKER'  'INTORG'")
            marker += 1
            in_int = True
        if v.obj != 0.0:
            lines.append(colline(v.mps, "COST", v.obj))
        for row_mps, coef in by_col[idx]:
            lines.append(colline(v.mps, row_mps, coef))
        if v.obj == 0.0 and not by_col[idx]:
            lines.append(colline(v.mps, "COST", 0.0))
    if in_int:
        lines.append(f"    MARKER{marker:02d}  'MARKER'  'INTEND'")

    lines.append("RHS")
    for r in model.rows:
        if r.rhs != 0.0:
            lines.append(colline("RHS", r.mps, r.rhs))
    lines.append("BOUNDS")
    for v in model.variables:
        if v.lo != 0.0:
            lines.append(f" LO BND       {v.mps:<8}  {format(v.lo, '.12g')}")
        if np.isfinite(v.hi):
            lines.append(f" UP BND       {v.mps:<8}  {format(v.hi, '.12g')}")
    lines.append("ENDATA")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Exact solver: configuration enumeration + branch and bound on z
# ---------------------------------------------------------------------------

def _relaxation(inst: Instance, pairs: list[tuple[int, int]],
                cfgs: list[Config], z_bounds: np.ndarray):
    """LP relaxation for a fixed configuration assignment. Variables are
    x[i, p] for active pairs, u[i], z[i, p] with the given bounds."""
    a = inst.arrays
    g = inst.globals
    co = inst.coeffs
    I = inst.I
    P = len(pairs)
    nx = I * P
    nv = nx + I + nx  # x, u, z

    def xid(i, p):
        return i * P + p

    def uid(i):
        return nx + i

    def zid(i, p):
        return nx + I + i * P + p

    c = np.zeros(nv)
    theta_rl = a.theta_gb * a.r * a.lam
    delays = np.zeros((I, P))
    for p, ((j, k), cfg) in enumerate(zip(pairs, cfgs)):
        d = (co.d_comp[:, j, k] * a.r / cfg.n
             + cfg.m * co.d_comm[:, j, k] * a.f)
        delays[:, p] = d
        for i in range(I):
            c[xid(i, p)] = (g.horizon * g.storage_price * theta_rl[i]
                            + a.rho[i] * d[i])
            c[zid(i, p)] = g.horizon * g.storage_price * a.B[j]
    for i in range(I):
        c[uid(i)] = a.phi[i]

    a_eq = np.zeros((I, nv))
    b_eq = np.ones(I)
    for i in range(I):
        for p in range(P):
            a_eq[i, xid(i, p)] = 1.0
        a_eq[i, uid(i)] = 1.0

    rows = []
    rhs = []
    c1 = g.horizon * sum(a.price[k] * cfg.product
                         for (j, k), cfg in zip(pairs, cfgs))
    # budget
    row = np.zeros(nv)
    for p, ((j, k), cfg) in enumerate(zip(pairs, cfgs)):
        for i in range(I):
            row[xid(i, p)] = g.horizon * g.storage_price * theta_rl[i]
            row[zid(i, p)] = g.horizon * g.storage_price * a.B[j]
    rows.append(row)
    rhs.append(g.budget - c1)
    # memory and compute per pair
    for p, ((j, k), cfg) in enumerate(zip(pairs, cfgs)):
        nm = cfg.product
        row = np.zeros(nv)
        for i in range(I):
            row[xid(i, p)] = (a.beta[j] / GB) / nm * a.r[i] * co.t_res[i, j, k]
        rows.append(row)
        rhs.append(a.cap[k] - a.B[j] / nm)
        row = np.zeros(nv)
        for i in range(I):
            row[xid(i, p)] = co.alpha[i, j, k] * a.r[i] * a.lam[i] / 1e3
        rows.append(row)
        rhs.append(g.eta * g.t_conv * a.pflops[k] * nm)
    # storage, delay, error per query
    for i in range(I):
        row = np.zeros(nv)
        for p, ((j, k), cfg) in enumerate(zip(pairs, cfgs)):
            row[zid(i, p)] = a.B[j]
            row[xid(i, p)] = theta_rl[i]
        rows.append(row)
        rhs.append(g.storage_cap)
        row = np.zeros(nv)
        for p in range(P):
            row[xid(i, p)] = delays[i, p]
        rows.append(row)
        rhs.append(float(a.delta[i]))
        row = np.zeros(nv)
        for p, ((j, k), cfg) in enumerate(zip(pairs, cfgs)):
            row[xid(i, p)] = co.e_bar[i, j, k]
        rows.append(row)
        rhs.append(float(a.eps[i]))
    # x <= z
    for i in range(I):
        for p in range(P):
            row = np.zeros(nv)
            row[xid(i, p)] = 1.0
            row[zid(i, p)] = -1.0
            rows.append(row)
            rhs.append(0.0)

    bounds = []
    for i in range(I):
        for p in range(P):
            bounds.append((0.0, 1.0))
    for i in range(I):
        bounds.append((0.0, float(a.zeta[i])))
    for i in range(I):
        for p in range(P):
            bounds.append((float(z_bounds[i, p, 0]), float(z_bounds[i, p, 1])))

    prob = LpProblem(c=c, a_ub=np.array(rows), b_ub=np.array(rhs),
                     a_eq=a_eq, b_eq=b_eq, bounds=bounds)
    return prob, c1, delays


def solve_exact(inst: Instance, limits: Optional[SizeLimits] = None
                ) -> tuple[Optional[Solution], Optional[CostBreakdown], str]:
    limits = limits or SizeLimits()
    t = build_tables(inst)
    n_pairs = inst.J * inst.K
    if (n_pairs > limits.max_pairs
            or int(t.cfg_count.max()) > limits.max_configs
            or inst.I * inst.J * inst.K > limits.max_cells):
        return None, None, STATUS_TOO_LARGE

    a = inst.arrays
    all_pairs = [(j, k) for j in range(inst.J) for k in range(inst.K)]
    options = []
    for (j, k) in all_pairs:
        opts = [None]
        for c in range(int(t.cfg_count[k])):
            # weight shard must fit; otherwise the assignment can never
            # satisfy the memory constraint
            if t.shard_ok[j, k, c]:
                opts.append(Config(int(t.cfg_n[k, c]), int(t.cfg_m[k, c])))
        options.append(opts)

    best_total = np.inf
    best: Optional[tuple] = None

    for choice in itertools.product(*options):
        pairs = [pk for pk, cfg in zip(all_pairs, choice) if cfg is not None]
        cfgs = [cfg for cfg in choice if cfg is not None]
        c1 = inst.globals.horizon * sum(
            a.price[k] * cfg.product for (j, k), cfg in zip(pairs, cfgs))
        # all cost terms are nonnegative, so c1 alone bounds the total
        if c1 > inst.globals.budget + 1e-9 or c1 >= best_total - GAP:
            continue
        P = len(pairs)
        z0 = np.zeros((inst.I, P, 2))
        z0[:, :, 1] = 1.0
        stack = [z0]
        while stack:
            zb = stack.pop()
            prob, c1_, delays = _relaxation(inst, pairs, cfgs, zb)
            res = lp_solve(prob)
            if res.status == INFEASIBLE:
                continue
            total = res.value + c1_
            if total >= best_total - GAP:
                continue
            nx = inst.I * P
            zvals = res.x[nx + inst.I:].reshape(inst.I, P) if P else \
                np.zeros((inst.I, 0))
            fr = np.minimum(zvals, 1.0 - zvals)
            free = zb[:, :, 0] < zb[:, :, 1]
            fr = np.where(free, fr, 0.0)
            if P == 0 or fr.max() <= 1e-6:
                best_total = total
                best = (pairs, cfgs,
                        res.x[:nx].reshape(inst.I, P).copy(),
                        res.x[nx:nx + inst.I].copy(),
                        np.round(zvals).copy())
                continue
            bi, bp = np.unravel_index(int(np.argmax(fr)), fr.shape)
            hi = zb.copy()
            hi[bi, bp] = (1.0, 1.0)
            lo = zb.copy()
            lo[bi, bp] = (0.0, 0.0)
            stack.append(lo)
            stack.append(hi)

    if best is None:
        return None, None, STATUS_INFEASIBLE
    pairs, cfgs, xv, uv, zv = best
    x = np.zeros((inst.I, inst.J, inst.K))
    z = np.zeros((inst.I, inst.J, inst.K))
    configs = {}
    for p, ((j, k), cfg) in enumerate(zip(pairs, cfgs)):
        x[:, j, k] = xv[:, p]
        z[:, j, k] = zv[:, p]
        configs[(j, k)] = cfg
    # z only pays off where routing happens; clean up zero-x placements the
    # LP left at 1 (they cost storage but relax nothing)
    z = np.where((x <= 1e-12) & (z > 0), 0.0, z)
    x[x < 1e-12] = 0.0
    sol = Solution(x=x, u=np.clip(uv, 0.0, None), configs=configs, z=z,
                   meta={"algo": "exact"})
    br = objective(sol, inst)
    return sol, br, STATUS_OPTIMAL
