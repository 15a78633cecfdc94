"""Solution representation, objective evaluation and the feasibility referee.

This module is the slow, trusted ground truth: every solver's output is
checked against it. The referee inspects all ten constraint families and
reports violations with slacks instead of raising.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import EvaluationError
from .instance import GB, Instance

REL_TOL = 1e-7      # per-constraint relative tolerance
DEMAND_TOL = 1e-9   # absolute tolerance on demand balance

SOLUTION_SCHEMA = "llm-alloc-solution/1"


@dataclass(frozen=True)
class Config:
    n: int  # TP degree
    m: int  # PP depth

    @property
    def product(self) -> int:
        return self.n * self.m


@dataclass
class Solution:
    x: np.ndarray                       # (I,J,K) routing fractions
    u: np.ndarray                       # (I,) unserved fractions
    configs: dict[tuple[int, int], Config]  # active (j,k) -> Config
    z: np.ndarray                       # (I,J,K) placement flags (0/1)
    meta: dict = field(default_factory=dict)

    @property
    def y(self) -> np.ndarray:
        J, K = self.x.shape[1], self.x.shape[2]
        y = np.zeros((J, K), dtype=np.int64)
        for (j, k), cfg in self.configs.items():
            y[j, k] = cfg.product
        return y

    def copy(self) -> "Solution":
        return Solution(x=self.x.copy(), u=self.u.copy(),
                        configs=dict(self.configs), z=self.z.copy(),
                        meta=dict(self.meta))

    def to_dict(self) -> dict:
        I, J, K = self.x.shape
        return {
            "schema": SOLUTION_SCHEMA,
            "shape": [I, J, K],
            "x": self.x.ravel().tolist(),  # row-major (i, j, k)
            "u": self.u.tolist(),
            "configs": sorted([j, k, c.n, c.m] for (j, k), c in self.configs.items()),
            "z": self.z.astype(int).ravel().tolist(),
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Solution":
        if d.get("schema") != SOLUTION_SCHEMA:
            raise EvaluationError(f"solution schema must be {SOLUTION_SCHEMA!r}")
        I, J, K = d["shape"]
        x = np.asarray(d["x"], dtype=float).reshape(I, J, K)
        u = np.asarray(d["u"], dtype=float)
        z = np.asarray(d["z"], dtype=float).reshape(I, J, K)
        configs = {(j, k): Config(n, m) for j, k, n, m in d["configs"]}
        return cls(x=x, u=u, configs=configs, z=z, meta=d.get("meta", {}))

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)
            fh.write("\n")

    @classmethod
    def read(cls, path) -> "Solution":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def empty_solution(inst: Instance) -> Solution:
    I, J, K = inst.I, inst.J, inst.K
    return Solution(x=np.zeros((I, J, K)), u=np.ones(I), configs={},
                    z=np.zeros((I, J, K)))


@dataclass(frozen=True)
class CostBreakdown:
    c1: float  # GPU rental
    c2: float  # model storage
    c3: float  # data storage
    c4: float  # delay penalty
    c5: float  # unmet penalty

    @property
    def total(self) -> float:
        return self.c1 + self.c2 + self.c3 + self.c4 + self.c5

    def to_csv_row(self, instance_id: str, algo: str) -> str:
        vals = ",".join(format(v, ".12g") for v in
                        (self.c1, self.c2, self.c3, self.c4, self.c5, self.total))
        return f"{instance_id},{algo},{vals}"


def delay(i: int, j: int, k: int, n: int, m: int, inst: Instance) -> float:
    """Per-query processing delay of type i on pair (j,k) at TP=n, PP=m."""
    co = inst.coeffs
    r_i = inst.queries[i].r
    f_i = inst.queries[i].f
    return co.d_comp[i, j, k] * r_i / n + m * co.d_comm[i, j, k] * f_i


def objective(sol: Solution, inst: Instance) -> CostBreakdown:
    a = inst.arrays
    g = inst.globals
    if sol.x.shape != (inst.I, inst.J, inst.K):
        raise EvaluationError(
            f"solution shape {sol.x.shape} does not match instance "
            f"({inst.I}, {inst.J}, {inst.K})")

    y = sol.y
    c1 = g.horizon * float(np.sum(a.price[None, :] * y))
    c2 = g.horizon * g.storage_price * float(np.sum(a.B[None, :, None] * sol.z))
    c3 = g.horizon * g.storage_price * float(
        np.sum((a.theta_gb * a.r * a.lam)[:, None, None] * sol.x))

    c4 = 0.0
    for i in range(inst.I):
        d_i = 0.0
        for (j, k), cfg in sol.configs.items():
            xv = sol.x[i, j, k]
            if xv > 0.0:
                d_i += xv * delay(i, j, k, cfg.n, cfg.m, inst)
        # routing on a pair with no config is malformed
        leftover = sol.x[i].copy()
        for (j, k) in sol.configs:
            leftover[j, k] = 0.0
        if np.any(leftover > 0.0):
            j, k = np.argwhere(leftover > 0.0)[0]
            raise EvaluationError(
                f"x[{i}][{j}][{k}] > 0 but pair ({j},{k}) has no configuration")
        c4 += a.rho[i] * d_i
    c5 = float(a.phi @ sol.u)
    return CostBreakdown(c1=c1, c2=c2, c3=c3, c4=c4, c5=c5)


# ---------------------------------------------------------------------------
# Feasibility referee
# ---------------------------------------------------------------------------

FAMILIES = ("demand", "budget", "config", "gpu_count", "memory", "compute",
            "storage", "delay", "error", "linkage")


@dataclass(frozen=True)
class Violation:
    family: str
    index: tuple
    lhs: float
    rhs: float
    detail: str = ""

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs


@dataclass
class FeasibilityReport:
    violations: list[Violation]

    @property
    def ok(self) -> bool:
        return not self.violations

    def families(self) -> set[str]:
        return {v.family for v in self.violations}

    def __str__(self) -> str:
        if self.ok:
            return "feasible"
        lines = [f"{len(self.violations)} violation(s):"]
        for v in self.violations[:20]:
            lines.append(f"  {v.family}{list(v.index)}: lhs={v.lhs:.6g} "
                         f"rhs={v.rhs:.6g} slack={v.slack:.3g} {v.detail}")
        return "\n".join(lines)


def _tol(rhs: float, rel_tol: float) -> float:
    return max(DEMAND_TOL, rel_tol * max(1.0, abs(rhs)))


def check_feasibility(sol: Solution, inst: Instance,
                      rel_tol: float = REL_TOL,
                      aggregate_storage: bool = False) -> FeasibilityReport:
    """Check every constraint family; returns a report, never raises on
    infeasibility. `aggregate_storage` switches the storage cap from the
    per-query-type reading to a single aggregate row."""
    a = inst.arrays
    g = inst.globals
    co = inst.coeffs
    I, J, K = inst.I, inst.J, inst.K
    viol: list[Violation] = []

    pairs = sol.configs
    y = sol.y
    q = np.zeros((J, K))
    for (j, k) in pairs:
        q[j, k] = 1.0

    # config validity (5d) and gpu-count identity (5e)
    for (j, k), cfg in sorted(pairs.items()):
        if cfg.n not in inst.tiers[k].tp_set:
            viol.append(Violation("config", (j, k), cfg.n, 0,
                                  f"TP {cfg.n} not in tier {k} tp_set"))
        if cfg.m not in g.pp_set:
            viol.append(Violation("config", (j, k), cfg.m, 0,
                                  f"PP {cfg.m} not in pp_set"))
        if y[j, k] != cfg.n * cfg.m:
            viol.append(Violation("gpu_count", (j, k), y[j, k], cfg.n * cfg.m,
                                  "y != n*m"))

    # demand balance (5b) and variable bounds
    for i in range(I):
        bal = float(sol.x[i].sum() + sol.u[i])
        if abs(bal - 1.0) > DEMAND_TOL:
            viol.append(Violation("demand", (i,), bal, 1.0, "sum(x)+u != 1"))
        if sol.u[i] < -DEMAND_TOL or sol.u[i] > a.zeta[i] + _tol(a.zeta[i], rel_tol):
            viol.append(Violation("demand", (i,), sol.u[i], a.zeta[i],
                                  "u outside [0, zeta]"))
    if np.any(sol.x < -DEMAND_TOL) or np.any(sol.x > 1.0 + rel_tol):
        idx = tuple(np.argwhere((sol.x < -DEMAND_TOL) | (sol.x > 1.0 + rel_tol))[0])
        viol.append(Violation("linkage", idx, float(sol.x[idx]), 1.0,
                              "x outside [0,1]"))

    # linkage (5k): x <= z <= q
    over_z = sol.x - sol.z
    if np.any(over_z > rel_tol):
        idx = tuple(np.argwhere(over_z > rel_tol)[0])
        viol.append(Violation("linkage", idx, float(sol.x[idx]),
                              float(sol.z[idx]), "x > z"))
    over_q = sol.z - q[None, :, :]
    if np.any(over_q > rel_tol):
        idx = tuple(np.argwhere(over_q > rel_tol)[0])
        viol.append(Violation("linkage", idx, float(sol.z[idx]),
                              float(q[idx[1], idx[2]]), "z > q"))

    # budget (5c): c1 + c2 + c3 <= delta
    try:
        br = objective(sol, inst)
    except EvaluationError:
        br = None
    if br is not None:
        spend = br.c1 + br.c2 + br.c3
        if spend > g.budget + _tol(g.budget, rel_tol):
            viol.append(Violation("budget", (), spend, g.budget, "c1+c2+c3 > delta"))

    # memory (5f) and compute (5g), per active pair
    for (j, k), cfg in sorted(pairs.items()):
        nm = cfg.product
        kv = float(np.sum(a.r * co.t_res[:, j, k] * sol.x[:, j, k]))
        lhs = a.B[j] / nm + (a.beta[j] / GB) / nm * kv
        rhs = a.cap[k]
        if lhs > rhs + _tol(rhs, rel_tol):
            viol.append(Violation("memory", (j, k), lhs, rhs,
                                  f"shard+KV exceeds {rhs} GB"))
        comp = float(np.sum(co.alpha[:, j, k] * (a.r * a.lam / 1e3) * sol.x[:, j, k]))
        cap = g.eta * g.t_conv * a.pflops[k] * y[j, k]
        if comp > cap + _tol(cap, rel_tol):
            viol.append(Violation("compute", (j, k), comp, cap,
                                  "throughput exceeds available FLOPs"))
    # routing on inactive pairs
    inactive_x = sol.x * (1.0 - q[None, :, :])
    if np.any(inactive_x > rel_tol):
        idx = tuple(np.argwhere(inactive_x > rel_tol)[0])
        viol.append(Violation("linkage", idx, float(sol.x[idx]), 0.0,
                              "routing on inactive pair"))

    # storage (5h)
    sto_terms = (a.B[None, :, None] * sol.z
                 + (a.theta_gb * a.r * a.lam)[:, None, None] * sol.x)
    if aggregate_storage:
        lhs = float(sto_terms.sum())
        if lhs > g.storage_cap + _tol(g.storage_cap, rel_tol):
            viol.append(Violation("storage", (), lhs, g.storage_cap, "aggregate"))
    else:
        per_i = sto_terms.sum(axis=(1, 2))
        for i in range(I):
            if per_i[i] > g.storage_cap + _tol(g.storage_cap, rel_tol):
                viol.append(Violation("storage", (i,), float(per_i[i]),
                                      g.storage_cap, ""))

    # delay (5i) and error (5j)
    for i in range(I):
        d_i = 0.0
        for (j, k), cfg in pairs.items():
            if sol.x[i, j, k] > 0.0:
                d_i += sol.x[i, j, k] * delay(i, j, k, cfg.n, cfg.m, inst)
        if d_i > a.delta[i] + _tol(a.delta[i], rel_tol):
            viol.append(Violation("delay", (i,), d_i, float(a.delta[i]),
                                  "processing delay exceeds SLO"))
        e_i = float(np.sum(co.e_bar[i] * sol.x[i]))
        if e_i > a.eps[i] + _tol(a.eps[i], rel_tol):
            viol.append(Violation("error", (i,), e_i, float(a.eps[i]),
                                  "error exceeds SLO"))

    return FeasibilityReport(violations=viol)
