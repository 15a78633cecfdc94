"""Shared test oracles: brute-force LP vertex enumeration, exhaustive
placement enumeration, and the tiny-instance builder used by oracle tests."""

from __future__ import annotations

import dataclasses
import itertools

import numpy as np

from llm_alloc.cost import Config, Solution, objective
from llm_alloc.instance import Instance, calibrate, generate_instance
from llm_alloc.lp import INFEASIBLE, OPTIMAL, LpProblem, lp_solve
from llm_alloc.mechanisms import build_tables

FEAS = 1e-9


def tiny_instance(seed: int, sizes=(2, 2, 2), tp=(1, 2), pp=(1,)) -> Instance:
    """Generated instance restricted to the oracle-scale config sets."""
    inst = generate_instance(sizes, seed=seed)
    tiers = tuple(dataclasses.replace(t, tp_set=tuple(tp)) for t in inst.tiers)
    glob = dataclasses.replace(inst.globals, pp_set=tuple(pp))
    return calibrate(dataclasses.replace(
        inst, tiers=tiers, globals=glob, coeffs=None, _arrays=None))


def vertex_enum_lp(prob: LpProblem):
    """Enumerate basic feasible points of a small LP: every square system of
    active constraints (equalities always active, plus inequality/bound
    rows), keep feasible solutions, return the best. Independent of the
    simplex implementation."""
    n = prob.c.shape[0]
    rows = [(prob.a_eq[i], prob.b_eq[i]) for i in range(prob.a_eq.shape[0])]
    n_eq = len(rows)
    cand_rows = []
    for i in range(prob.a_ub.shape[0]):
        cand_rows.append((prob.a_ub[i], prob.b_ub[i]))
    for i, (lo, hi) in enumerate(prob.bounds):
        e = np.zeros(n)
        e[i] = 1.0
        cand_rows.append((e, lo))
        if np.isfinite(hi):
            cand_rows.append((e, hi))

    def feasible(x):
        if np.any(prob.a_ub @ x > prob.b_ub + 1e-7):
            return False
        if prob.a_eq.shape[0] and np.any(np.abs(prob.a_eq @ x - prob.b_eq) > 1e-7):
            return False
        for i, (lo, hi) in enumerate(prob.bounds):
            if x[i] < lo - 1e-7 or x[i] > hi + 1e-7:
                return False
        return True

    best_val, best_x = None, None
    need = n - n_eq
    eq_rows = [r[0] for r in rows]
    eq_rhs = [r[1] for r in rows]
    for combo in itertools.combinations(range(len(cand_rows)), need):
        A = np.array(eq_rows + [cand_rows[i][0] for i in combo])
        b = np.array(eq_rhs + [cand_rows[i][1] for i in combo])
        try:
            x = np.linalg.solve(A, b)
        except np.linalg.LinAlgError:
            continue
        if not np.all(np.isfinite(x)) or np.abs(A @ x - b).max() > 1e-8:
            continue
        if feasible(x):
            val = float(prob.c @ x)
            if best_val is None or val < best_val - 1e-12:
                best_val, best_x = val, x
    return best_val, best_x


def exhaustive_exact(inst: Instance):
    """Fully independent oracle: enumerate every per-pair configuration
    choice AND every 0/1 assignment of the placement flags, solving a pure
    LP in (x, u) for each. Only usable at 2x2x2 scale."""
    t = build_tables(inst)
    a = inst.arrays
    g = inst.globals
    co = inst.coeffs
    I = inst.I
    all_pairs = [(j, k) for j in range(inst.J) for k in range(inst.K)]
    options = []
    for (j, k) in all_pairs:
        opts = [None]
        for c in range(int(t.cfg_count[k])):
            if t.shard_ok[j, k, c]:
                opts.append(Config(int(t.cfg_n[k, c]), int(t.cfg_m[k, c])))
        options.append(opts)

    theta_rl = a.theta_gb * a.r * a.lam
    best = None
    for choice in itertools.product(*options):
        pairs = [pk for pk, cfg in zip(all_pairs, choice) if cfg is not None]
        cfgs = [cfg for cfg in choice if cfg is not None]
        P = len(pairs)
        c1 = g.horizon * sum(a.price[k] * cfg.product
                             for (j, k), cfg in zip(pairs, cfgs))
        if c1 > g.budget + 1e-9:
            continue
        for zflat in itertools.product((0.0, 1.0), repeat=I * P):
            z = np.array(zflat).reshape(I, P)
            nv = I * P + I
            c = np.zeros(nv)
            delays = np.zeros((I, P))
            for p, ((j, k), cfg) in enumerate(zip(pairs, cfgs)):
                d = (co.d_comp[:, j, k] * a.r / cfg.n
                     + cfg.m * co.d_comm[:, j, k] * a.f)
                delays[:, p] = d
                for i in range(I):
                    c[i * P + p] = (g.horizon * g.storage_price * theta_rl[i]
                                    + a.rho[i] * d[i])
            c[I * P:] = a.phi
            c2 = g.horizon * g.storage_price * sum(
                a.B[j] * z[i, p]
                for p, ((j, k), _) in enumerate(zip(pairs, cfgs))
                for i in range(I))
            a_eq = np.zeros((I, nv))
            for i in range(I):
                a_eq[i, i * P:(i + 1) * P] = 1.0
                a_eq[i, I * P + i] = 1.0
            rows, rhs = [], []
            row = np.zeros(nv)
            for p, ((j, k), _) in enumerate(zip(pairs, cfgs)):
                for i in range(I):
                    row[i * P + p] = g.horizon * g.storage_price * theta_rl[i]
            rows.append(row)
            rhs.append(g.budget - c1 - c2)
            for p, ((j, k), cfg) in enumerate(zip(pairs, cfgs)):
                nm = cfg.product
                row = np.zeros(nv)
                for i in range(I):
                    row[i * P + p] = (a.beta[j] / 1e9) / nm * a.r[i] \
                        * co.t_res[i, j, k]
                rows.append(row)
                rhs.append(a.cap[k] - a.B[j] / nm)
                row = np.zeros(nv)
                for i in range(I):
                    row[i * P + p] = co.alpha[i, j, k] * a.r[i] * a.lam[i] / 1e3
                rows.append(row)
                rhs.append(g.eta * g.t_conv * a.pflops[k] * nm)
            for i in range(I):
                row = np.zeros(nv)
                for p in range(P):
                    row[i * P + p] = delays[i, p]
                rows.append(row)
                rhs.append(float(a.delta[i]))
                row = np.zeros(nv)
                for p, ((j, k), _) in enumerate(zip(pairs, cfgs)):
                    row[i * P + p] = co.e_bar[i, j, k]
                rows.append(row)
                rhs.append(float(a.eps[i]))
                sto = sum(a.B[j] * z[i, p]
                          for p, ((j, k), _) in enumerate(zip(pairs, cfgs)))
                row = np.zeros(nv)
                for p in range(P):
                    row[i * P + p] = theta_rl[i]
                rows.append(row)
                rhs.append(g.storage_cap - sto)
            bounds = []
            for i in range(I):
                for p in range(P):
                    bounds.append((0.0, float(z[i, p])))
            for i in range(I):
                bounds.append((0.0, float(a.zeta[i])))
            prob = LpProblem(c=c, a_ub=np.array(rows), b_ub=np.array(rhs),
                             a_eq=a_eq, b_eq=np.ones(I), bounds=bounds)
            res = lp_solve(prob)
            if res.status != OPTIMAL:
                continue
            total = res.value + c1 + c2
            if best is None or total < best[0] - 1e-12:
                best = (total, pairs, cfgs, res.x[:I * P].reshape(I, P).copy(),
                        res.x[I * P:].copy(), z.copy())
    return best
