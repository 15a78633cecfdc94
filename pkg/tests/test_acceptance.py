"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s` to see the lines.
"""

import time

import numpy as np
import pytest

from llm_alloc.agh import AghParams, agh_solve
from llm_alloc.cost import check_feasibility
from llm_alloc.gh import gh_solve
from llm_alloc.harness import (RollingParams, gen_scenarios, run_ablation,
                               run_rolling, stage2_evaluate)
from llm_alloc.instance import generate_instance, read_instance
from llm_alloc.lp import LpProblem
from llm_alloc.cli import main as cli_main

from conftest import FIXTURES
from helpers import tiny_instance, vertex_enum_lp


def _report(name: str, ok: bool, detail: str = "") -> None:
    print(f"[ACCEPTANCE] {name}: {'PASS' if ok else 'FAIL'} {detail}")


def test_oracle_optimality_gap():
    from llm_alloc.exact import solve_exact
    t0 = time.time()
    gaps = []
    sane = True
    for seed in range(50):
        inst = tiny_instance(seed)
        sol_e, br_e, status = solve_exact(inst)
        assert status == "optimal", f"seed {seed}: {status}"
        _, br_a, _, _ = agh_solve(inst, AghParams(seed=seed))
        sane &= br_a.total >= br_e.total - 1e-6
        gaps.append((br_a.total - br_e.total) / br_e.total
                    if br_e.total > 0 else 0.0)
    elapsed = time.time() - t0
    gaps = np.array(gaps)
    within = int((gaps <= 0.25).sum())
    ok = sane and within >= 45 and elapsed < 60
    _report("oracle-gap", ok,
            f"median={np.median(gaps) * 100:.2f}% within25%={within}/50 "
            f"sanity={sane} elapsed={elapsed:.1f}s")
    assert sane, "AGH beat the exact optimum somewhere"
    assert within >= 45, f"only {within}/50 within 25% gap"
    assert elapsed < 60


def test_dominance_suite():
    t0 = time.time()
    violations = 0
    dominated = True
    for sizes in ((4, 4, 5), (6, 6, 10), (10, 10, 10)):
        for seed in range(100):
            inst = generate_instance(sizes, seed=seed)
            sol_g, br_g, _ = gh_solve(inst)
            sol_a, br_a, _, _ = agh_solve(inst, AghParams(seed=seed))
            dominated &= br_a.total <= br_g.total + 1e-9
            violations += len(check_feasibility(sol_g, inst).violations)
            violations += len(check_feasibility(sol_a, inst).violations)
    elapsed = time.time() - t0
    ok = dominated and violations == 0 and elapsed < 300
    _report("dominance", ok,
            f"300 runs, violations={violations} dominated={dominated} "
            f"elapsed={elapsed:.1f}s")
    assert dominated and violations == 0
    assert elapsed < 300


def test_runtime_scaling():
    inst = generate_instance((20, 20, 20), seed=3)
    _, _, rt_gh = gh_solve(inst)
    _, _, rt_agh, _ = agh_solve(inst, AghParams(seed=3))
    ok = rt_gh < 1.0 and rt_agh < 10.0
    _report("runtime-scaling", ok,
            f"GH={rt_gh:.2f}s (<1s) AGH={rt_agh:.2f}s (<10s) at (20,20,20)")
    assert rt_gh < 1.0
    assert rt_agh < 10.0


def test_ablation_reproduction():
    inst = read_instance(FIXTURES / "ablation.json")
    rows = {r.variant: r for r in run_ablation(inst, seed=0)}
    conds = {
        "all_on feasible": rows["all_on"].feasible,
        "no_m1 memory/delay violation": (not rows["no_m1"].feasible
                                         and bool({"memory", "delay"}
                                                  & set(rows["no_m1"].families))),
        "no_m3 delay violation": (not rows["no_m3"].feasible
                                  and "delay" in rows["no_m3"].families),
        "no_m2 feasible and costlier": (rows["no_m2"].feasible
                                        and rows["no_m2"].total
                                        > rows["all_on"].total + 1e-6),
    }
    ok = all(conds.values())
    _report("ablation", ok, "; ".join(f"{k}={v}" for k, v in conds.items()))
    assert ok, conds


def test_stage2_correctness():
    checked = 0
    seed = 0
    p_viol_ok = True
    while checked < 20 and seed < 200:
        inst = tiny_instance(seed)
        sol, _, _ = gh_solve(inst)
        cells = [(i, j, k) for (j, k) in sorted(sol.configs)
                 for i in range(inst.I) if sol.z[i, j, k] > 0.5]
        seed += 1
        if not cells or len(cells) > 4:  # keep the vertex oracle tractable
            continue
        scenarios = gen_scenarios(inst, 5, seed=1000 + seed)
        rep = stage2_evaluate(sol, inst, scenarios)
        a = inst.arrays
        co = inst.coeffs
        g = inst.globals
        for sc, out in zip(scenarios, rep.outcomes):
            P = len(cells)
            dtil = []
            for (i, j, k) in cells:
                cfg = sol.configs[(j, k)]
                d = (co.d_comp[i, j, k] * a.r[i] / cfg.n
                     + cfg.m * co.d_comm[i, j, k] * a.f[i])
                dtil.append(d * sc.d_mult[i, j, k])
            c = np.array([a.rho[i] * dtil[p]
                          for p, (i, _, _) in enumerate(cells)]
                         + list(a.phi))
            a_eq = np.zeros((inst.I, P + inst.I))
            for p, (i, _, _) in enumerate(cells):
                a_eq[i, p] = 1.0
            a_eq[:, P:] = np.eye(inst.I)
            rows, rhs = [], []
            lam_t = a.lam * sc.lam_mult
            for (j, k), cfg in sorted(sol.configs.items()):
                row = np.zeros(P + inst.I)
                hit = False
                for p, (i, jj, kk) in enumerate(cells):
                    if (jj, kk) == (j, k):
                        row[p] = co.alpha[i, j, k] / 1e3 * a.r[i] * lam_t[i]
                        hit = True
                if hit:
                    rows.append(row)
                    rhs.append(g.eta * g.t_conv * a.pflops[k] * cfg.product)
            for i in range(inst.I):
                row = np.zeros(P + inst.I)
                for p, (ii, _, _) in enumerate(cells):
                    if ii == i:
                        row[p] = dtil[p]
                rows.append(row)
                rhs.append(float(a.delta[i]))
                row = np.zeros(P + inst.I)
                for p, (ii, j, k) in enumerate(cells):
                    if ii == i:
                        row[p] = co.e_bar[i, j, k] * sc.e_mult[i, j, k]
                rows.append(row)
                rhs.append(float(a.eps[i]))
            prob = LpProblem(c=c, a_ub=np.array(rows), b_ub=np.array(rhs),
                             a_eq=a_eq, b_eq=np.ones(inst.I),
                             bounds=[(0.0, 1.0)] * P
                             + [(0.0, float(z)) for z in a.zeta])
            oracle_val, _ = vertex_enum_lp(prob)
            assert oracle_val is not None
            assert out.c4 + out.c5 == pytest.approx(oracle_val, abs=1e-6), \
                f"placement seed {seed - 1}"
        raw = np.array([o.u for o in rep.outcomes])
        p_viol_ok &= rep.p_viol == float((raw > 0.01).mean())
        checked += 1
    ok = checked == 20 and p_viol_ok
    _report("stage2-correctness", ok,
            f"{checked}/20 placements x 5 scenarios vs vertex oracle, "
            f"p_viol recount={p_viol_ok}")
    assert ok


def test_stress_monotonicity_and_direction():
    inst = generate_instance((6, 6, 10), seed=7)
    sol, _, _, _ = agh_solve(inst, AghParams(seed=7))
    cas = {}
    for stress in (None, 1.2, 1.5):
        scs = gen_scenarios(inst, 100, seed=11, stress=stress)
        cas[stress] = stage2_evaluate(sol, inst, scs).ca
    mono = cas[None] <= cas[1.2] <= cas[1.5]

    oracle = read_instance(FIXTURES / "stress_oracle.json")
    from llm_alloc.exact import solve_exact
    sol_e, _, status = solve_exact(oracle)
    assert status == "optimal"
    sol_a, _, _, _ = agh_solve(oracle, AghParams(seed=0))
    deltas = {}
    for name, s in (("exact", sol_e), ("agh", sol_a)):
        nom = stage2_evaluate(s, oracle, gen_scenarios(oracle, 60, seed=99))
        inf = stage2_evaluate(s, oracle,
                              gen_scenarios(oracle, 60, seed=99, stress=1.5))
        deltas[name] = inf.ca - nom.ca
    direction = deltas["exact"] > deltas["agh"]
    ok = mono and direction
    _report("stress", ok,
            f"ca nominal={cas[None]:.1f} 1.2x={cas[1.2]:.1f} "
            f"1.5x={cas[1.5]:.1f} mono={mono}; exact dCa={deltas['exact']:.1f}"
            f" > agh dCa={deltas['agh']:.1f}: {direction}")
    assert mono
    assert direction


def test_rolling_horizon_direction():
    inst = generate_instance((4, 4, 5), seed=7)
    ap = AghParams(r_random=2)
    ok_all = True
    details = []
    for sigma in (0.04, 0.05):
        static = run_rolling(inst, RollingParams(
            windows=48, sigma=sigma, trials=10, replan_every=49),
            "agh", seed=5, agh_params=ap)
        rolling = run_rolling(inst, RollingParams(
            windows=48, sigma=sigma, trials=10, replan_every=1),
            "agh", seed=5, agh_params=ap)
        cond = rolling.mean_total <= 1.05 * static.mean_total
        ok_all &= cond
        details.append(f"sigma={sigma}: roll={rolling.mean_total:.1f} "
                       f"static={static.mean_total:.1f} ok={cond}")
    z_static = run_rolling(inst, RollingParams(
        windows=8, sigma=0.0, trials=3, replan_every=9), "agh", seed=5,
        agh_params=ap)
    z_roll = run_rolling(inst, RollingParams(
        windows=8, sigma=0.0, trials=3, replan_every=1), "agh", seed=5,
        agh_params=ap)
    zero_ok = z_roll.mean_total <= z_static.mean_total + 1e-9
    ok_all &= zero_ok
    details.append(f"sigma=0 exact dominance={zero_ok}")
    _report("rolling", ok_all, "; ".join(details))
    assert ok_all


def _mask_runtime(text: str) -> str:
    out = []
    for line in text.splitlines():
        parts = line.split(",")
        if len(parts) == 12 and parts[0] != "instance_id":
            parts[-1] = "X"
        out.append(",".join(parts))
    return "\n".join(out)


def test_determinism_all_commands(tmp_path):
    inst_p = tmp_path / "inst.json"
    fixture = str(FIXTURES / "ablation.json")
    checks = []

    def run_twice(label, args, outname, mask=False, thread_variant=False):
        outs = []
        variants = (["--threads", "1"], ["--threads", "4"]) \
            if thread_variant else ([], [])
        for tag, extra in enumerate(variants):
            out = tmp_path / f"{outname}.{tag}"
            rc = cli_main(args + extra + ["--out", str(out)])
            assert rc == 0, label
            text = out.read_text()
            outs.append(_mask_runtime(text) if mask else text)
        checks.append((label, outs[0] == outs[1]))

    run_twice("gen", ["gen", "--sizes", "4x4x5", "--seed", "3"], "inst.json")
    cli_main(["gen", "--sizes", "4x4x5", "--seed", "3", "--out", str(inst_p)])
    run_twice("solve-gh", ["solve", "--algo", "gh", "--instance", str(inst_p),
                           "--seed", "3"], "g.json")
    run_twice("solve-agh", ["solve", "--algo", "agh", "--instance",
                            str(inst_p), "--seed", "3"], "a.json",
              thread_variant=True)
    sol_p = tmp_path / "a.json.0"
    run_twice("evaluate", ["evaluate", "--placement", str(sol_p),
                           "--instance", str(inst_p), "--scenarios", "10",
                           "--seed", "3"], "ev.csv", mask=True,
              thread_variant=True)
    run_twice("stress", ["stress", "--placement", str(sol_p), "--instance",
                         str(inst_p), "--scenarios", "10", "--seed", "3",
                         "--inflate", "1.2"], "st.csv", mask=True)
    run_twice("ablate", ["ablate", "--instance", fixture, "--seed", "0"],
              "ab.csv")
    run_twice("rolling", ["rolling", "--instance", str(inst_p), "--sigma",
                          "0.03", "--trials", "1", "--windows", "4",
                          "--replan-every", "2", "--algo", "gh",
                          "--seed", "3"], "ro.csv")
    run_twice("export-mps", ["export-mps", "--instance",
                             str(FIXTURES / "stress_oracle.json")], "m.mps")
    ok = all(v for _, v in checks)
    _report("determinism", ok,
            "; ".join(f"{k}={v}" for k, v in checks))
    assert ok, checks
