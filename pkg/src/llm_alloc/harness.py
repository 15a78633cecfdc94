"""Out-of-sample evaluation: Monte-Carlo scenarios over a fixed placement,
stress inflation, the mechanism ablation driver, and the rolling-horizon
re-optimization simulator."""

from __future__ import annotations

import dataclasses
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .agh import AghParams, agh_solve
from .cost import CostBreakdown, Solution, check_feasibility, objective
from .gh import GhParams, gh_solve
from .instance import Instance
from .lp import INFEASIBLE, LpProblem, lp_solve
from .mechanisms import MechanismFlags
from .rng import substream

VIOLATION_THRESHOLD = 0.01


def _parallel_map(fn: Callable, items: Sequence, threads: int) -> list:
    if threads <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# Scenario generation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Scenario:
    d_mult: np.ndarray    # (I,J,K) delay multipliers
    e_mult: np.ndarray    # (I,J,K) error multipliers
    lam_mult: np.ndarray  # (I,) arrival multipliers
    seed: int


def gen_scenarios(inst: Instance, s: int, seed: int,
                  d_range: tuple[float, float] = (0.75, 1.25),
                  e_range: tuple[float, float] = (0.75, 1.25),
                  lam_range: tuple[float, float] = (0.80, 1.20),
                  stress: Optional[float] = None,
                  global_mult: bool = False) -> list[Scenario]:
    """Uniform multiplicative perturbations; stress mode pins the delay and
    error multipliers at the inflation factor while arrivals stay random.
    The draw order is fixed so identical seeds share arrival paths across
    inflation settings."""
    if s < 1:
        raise ValueError("scenario count must be >= 1")
    rng = substream(seed, "scenarios")
    shape = () if global_mult else (inst.I, inst.J, inst.K)
    out = []
    for t in range(s):
        d = rng.uniform(*d_range, size=shape)
        e = rng.uniform(*e_range, size=shape)
        lam = rng.uniform(*lam_range, size=inst.I)
        if stress is not None:
            d = np.full(shape, float(stress))
            e = np.full(shape, float(stress))
        full = (inst.I, inst.J, inst.K)
        out.append(Scenario(
            d_mult=np.broadcast_to(np.asarray(d, dtype=float), full).copy(),
            e_mult=np.broadcast_to(np.asarray(e, dtype=float), full).copy(),
            lam_mult=lam, seed=t))
    return out


# ---------------------------------------------------------------------------
# Stage-2 operational LP
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScenarioOutcome:
    c3: float
    c4: float
    c5: float
    u: np.ndarray
    infeasible: bool

    @property
    def operational(self) -> float:
        return self.c3 + self.c4 + self.c5


@dataclass
class EvalReport:
    c1: float
    c2: float
    outcomes: list[ScenarioOutcome]

    @property
    def ca(self) -> float:
        ops = np.array([o.operational for o in self.outcomes])
        return self.c1 + self.c2 + float(ops.mean())

    @property
    def p_viol(self) -> float:
        flags = np.array([o.u > VIOLATION_THRESHOLD for o in self.outcomes])
        return float(flags.mean())


def _stage2_lp(sol: Solution, inst: Instance, sc: Scenario) -> ScenarioOutcome:
    a = inst.arrays
    g = inst.globals
    co = inst.coeffs
    I = inst.I

    # x variables exist only where the placement allows routing (x <= z*).
    cells = [(i, j, k) for (j, k), cfg in sorted(sol.configs.items())
             for i in range(I) if sol.z[i, j, k] > 0.5]
    P = len(cells)
    nv = P + I

    dtil = np.zeros(P)
    for p, (i, j, k) in enumerate(cells):
        cfg = sol.configs[(j, k)]
        d = (co.d_comp[i, j, k] * a.r[i] / cfg.n
             + cfg.m * co.d_comm[i, j, k] * a.f[i])
        dtil[p] = d * sc.d_mult[i, j, k]
    lam_t = a.lam * sc.lam_mult

    c = np.zeros(nv)
    for p, (i, j, k) in enumerate(cells):
        c[p] = a.rho[i] * dtil[p]
    c[P:] = a.phi

    a_eq = np.zeros((I, nv))
    for p, (i, j, k) in enumerate(cells):
        a_eq[i, p] = 1.0
    a_eq[:, P:] = np.eye(I)
    b_eq = np.ones(I)

    rows, rhs = [], []
    for (j, k), cfg in sorted(sol.configs.items()):
        row = np.zeros(nv)
        hit = False
        for p, (i, jj, kk) in enumerate(cells):
            if (jj, kk) == (j, k):
                row[p] = co.alpha[i, j, k] / 1e3 * a.r[i] * lam_t[i]
                hit = True
        if hit:
            rows.append(row)
            rhs.append(g.eta * g.t_conv * a.pflops[k] * cfg.product)
    for i in range(I):
        row = np.zeros(nv)
        for p, (ii, j, k) in enumerate(cells):
            if ii == i:
                row[p] = dtil[p]
        rows.append(row)
        rhs.append(float(a.delta[i]))
        row = np.zeros(nv)
        for p, (ii, j, k) in enumerate(cells):
            if ii == i:
                row[p] = co.e_bar[i, j, k] * sc.e_mult[i, j, k]
        rows.append(row)
        rhs.append(float(a.eps[i]))

    def attempt(u_hi: np.ndarray):
        bounds = [(0.0, 1.0)] * P + [(0.0, float(h)) for h in u_hi]
        prob = LpProblem(c=c, a_ub=np.array(rows) if rows else None,
                         b_ub=np.array(rhs) if rows else None,
                         a_eq=a_eq, b_eq=b_eq, bounds=bounds)
        return lp_solve(prob)

    res = attempt(a.zeta)
    if res.status == INFEASIBLE:
        res = attempt(np.ones(I))
    if res.status == INFEASIBLE:
        # Record full violation for every type; the placement cannot serve
        # this scenario at all.
        return ScenarioOutcome(c3=0.0, c4=0.0, c5=float(a.phi.sum()),
                               u=np.ones(I), infeasible=True)

    xv = res.x[:P]
    uv = res.x[P:]
    c4 = float(c[:P] @ xv)
    c5 = float(a.phi @ uv)
    c3 = 0.0
    for p, (i, j, k) in enumerate(cells):
        c3 += g.horizon * g.storage_price * a.theta_gb[i] * a.r[i] \
            * lam_t[i] * xv[p]
    return ScenarioOutcome(c3=c3, c4=c4, c5=c5, u=uv.copy(), infeasible=False)


def stage2_evaluate(sol: Solution, inst: Instance,
                    scenarios: Sequence[Scenario],
                    threads: int = 1) -> EvalReport:
    """Fix the placement (y*, z*, configs*) and re-optimize routing/unmet
    per scenario as a pure LP."""
    if sol.x.shape != (inst.I, inst.J, inst.K):
        raise ValueError("placement does not match instance dimensions")
    a = inst.arrays
    g = inst.globals
    c1 = g.horizon * float(np.sum(a.price[None, :] * sol.y))
    c2 = g.horizon * g.storage_price * float(np.sum(a.B[None, :, None] * sol.z))
    outcomes = _parallel_map(lambda sc: _stage2_lp(sol, inst, sc),
                             list(scenarios), threads)
    return EvalReport(c1=c1, c2=c2, outcomes=outcomes)


# ---------------------------------------------------------------------------
# Ablation driver
# ---------------------------------------------------------------------------

ABLATION_VARIANTS = (
    ("all_on", MechanismFlags(True, True, True)),
    ("no_m1", MechanismFlags(False, True, True)),
    ("no_m2", MechanismFlags(True, False, True)),
    ("no_m3", MechanismFlags(True, True, False)),
)


@dataclass(frozen=True)
class AblationRow:
    variant: str
    feasible: bool
    families: tuple[str, ...]
    total: float


def run_ablation(inst: Instance, seed: int = 0) -> list[AblationRow]:
    rows = []
    for name, flags in ABLATION_VARIANTS:
        sol, br, _, _ = agh_solve(inst, AghParams(seed=seed, mechanisms=flags))
        report = check_feasibility(sol, inst)
        rows.append(AblationRow(variant=name, feasible=report.ok,
                                families=tuple(sorted(report.families())),
                                total=br.total))
    return rows


# ---------------------------------------------------------------------------
# Rolling horizon
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RollingParams:
    windows: int = 288
    sigma: float = 0.03
    trials: int = 30
    replan_every: int = 1     # windows between re-solves; windows+1 = static
    keep_best: bool = True


@dataclass(frozen=True)
class RollingTrial:
    trial: int
    window_costs: np.ndarray
    cum_costs: np.ndarray
    adoptions: int

    @property
    def total(self) -> float:
        return float(self.window_costs.sum())


@dataclass(frozen=True)
class RollingSummary:
    algo: str
    sigma: float
    trials: list[RollingTrial]

    @property
    def mean_total(self) -> float:
        return float(np.mean([t.total for t in self.trials]))

    @property
    def std_total(self) -> float:
        return float(np.std([t.total for t in self.trials]))


def _with_lambda(inst: Instance, lam: np.ndarray) -> Instance:
    from .instance import calibrate
    queries = tuple(dataclasses.replace(q, lam=float(lam[i]))
                    for i, q in enumerate(inst.queries))
    return calibrate(dataclasses.replace(
        inst, queries=queries, coeffs=None, _arrays=None))


def _nominal_scenario(inst: Instance, lam_mult: np.ndarray) -> Scenario:
    shape = (inst.I, inst.J, inst.K)
    return Scenario(d_mult=np.ones(shape), e_mult=np.ones(shape),
                    lam_mult=lam_mult, seed=0)


def _placement_cost_under(sol: Solution, inst: Instance,
                          lam_mult: np.ndarray) -> float:
    rep = stage2_evaluate(sol, inst, [_nominal_scenario(inst, lam_mult)])
    return rep.ca


def run_rolling(inst: Instance, params: RollingParams, algo: str = "agh",
                seed: int = 0,
                agh_params: Optional[AghParams] = None) -> RollingSummary:
    """Simulate demand as a geometric random walk over 5-minute windows,
    re-solving at each re-plan point and adopting the new placement only if
    it beats the incumbent under current demand (keep-best)."""
    a = inst.arrays
    base_lam = a.lam.copy()

    def solve_at(lam: np.ndarray, trial: int, window: int) -> Solution:
        inst_w = _with_lambda(inst, lam)
        if algo == "gh":
            sol, _, _ = gh_solve(inst_w)
        elif algo == "agh":
            sub = int(substream(seed, "rolling-solver", trial, window)
                      .integers(2 ** 62))
            ap = agh_params or AghParams()
            sol, _, _, _ = agh_solve(inst_w, dataclasses.replace(ap, seed=sub))
        else:
            raise ValueError(f"unknown rolling algo {algo!r}")
        return sol

    trials = []
    for t in range(params.trials):
        rng = substream(seed, "rolling-path", t)
        shocks = rng.normal(0.0, params.sigma, size=(params.windows, inst.I))
        lam = base_lam.copy()
        incumbent = solve_at(lam, t, 0)
        incumbent_cost = _placement_cost_under(incumbent, inst, lam / base_lam)
        adoptions = 0
        wcosts = np.zeros(params.windows)
        for w in range(params.windows):
            if w > 0:
                lam = lam * np.exp(shocks[w - 1])
                if params.replan_every >= 1 and w % params.replan_every == 0:
                    cand = solve_at(lam, t, w)
                    cand_cost = _placement_cost_under(cand, inst, lam / base_lam)
                    inc_cost = _placement_cost_under(incumbent, inst,
                                                     lam / base_lam)
                    if (not params.keep_best) or cand_cost < inc_cost - 1e-9:
                        incumbent = cand
                        adoptions += 1
                        incumbent_cost = cand_cost
                    else:
                        incumbent_cost = inc_cost
                else:
                    incumbent_cost = _placement_cost_under(incumbent, inst,
                                                           lam / base_lam)
            wcosts[w] = incumbent_cost / params.windows
        trials.append(RollingTrial(trial=t, window_costs=wcosts,
                                   cum_costs=np.cumsum(wcosts),
                                   adoptions=adoptions))
    return RollingSummary(algo=algo, sigma=params.sigma, trials=trials)


# ---------------------------------------------------------------------------
# Metrics CSV
# ---------------------------------------------------------------------------

METRICS_HEADER = "instance_id,algo,seed,c1,c2,c3,c4,c5,total,ca,p_viol,runtime_s"


@dataclass(frozen=True)
class MetricsRow:
    instance_id: str
    algo: str
    seed: int
    breakdown: CostBreakdown
    ca: float
    p_viol: float
    runtime_s: float

    def to_csv(self) -> str:
        b = self.breakdown
        nums = ",".join(format(v, ".12g") for v in
                        (b.c1, b.c2, b.c3, b.c4, b.c5, b.total,
                         self.ca, self.p_viol))
        return (f"{self.instance_id},{self.algo},{self.seed},{nums},"
                f"{format(self.runtime_s, '.6g')}")


def metrics_to_csv(rows: Sequence[MetricsRow], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(METRICS_HEADER + "\n")
        for row in rows:
            fh.write(row.to_csv() + "\n")
