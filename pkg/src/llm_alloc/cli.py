"""Command line entry point wiring all modules together.

Every command takes a --seed and fans it out through labeled substreams so
outputs are reproducible; each output file gets a sibling run manifest.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
import time
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .agh import AghParams, agh_solve
from .cost import Solution, check_feasibility, objective
from .exact import STATUS_OPTIMAL, STATUS_TOO_LARGE, build_milp, export_mps, \
    solve_exact
from .gh import GhParams, gh_solve
from .harness import (MetricsRow, RollingParams, gen_scenarios,
                      metrics_to_csv, run_ablation, run_rolling,
                      stage2_evaluate)
from .instance import generate_instance, read_instance, write_instance
from .mechanisms import MechanismFlags


def _file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out_path, args: argparse.Namespace, started: str,
                    instance_path=None) -> None:
    manifest = {
        "schema": "llm-alloc-manifest/1",
        "version": __version__,
        "command": args.command,
        "flags": {k: v for k, v in sorted(vars(args).items())
                  if k != "command"},
        "seed": getattr(args, "seed", None),
        "instance_sha256": _file_sha256(instance_path) if instance_path else None,
        "output": str(out_path),
        "output_sha256": _file_sha256(out_path),
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
    }
    with open(f"{out_path}.manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, default=str)
        fh.write("\n")


def _parse_sizes(text: str) -> tuple[int, int, int]:
    parts = text.lower().split("x")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"sizes must look like 6x6x10, got {text!r}")
    return tuple(int(p) for p in parts)  # type: ignore[return-value]


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("LLM_ALLOC_THREADS", "")
    return max(1, int(env)) if env.isdigit() else 1


def _mech_flags(args) -> MechanismFlags:
    return MechanismFlags(m1=not args.no_m1, m2=not args.no_m2,
                          m3=not args.no_m3)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="llm-alloc",
                                description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, instance=True, seed=True, out=True):
        if instance:
            sp.add_argument("--instance", required=True)
        if seed:
            sp.add_argument("--seed", type=int, default=0)
        if out:
            sp.add_argument("--out", required=True)
        sp.add_argument("--threads", type=int, default=None)

    sp = sub.add_parser("gen", help="generate a random instance")
    sp.add_argument("--sizes", type=_parse_sizes, required=True,
                    help="IxJxK, e.g. 6x6x10")
    common(sp, instance=False)

    sp = sub.add_parser("solve", help="solve an instance")
    sp.add_argument("--algo", choices=("gh", "agh", "exact"), required=True)
    common(sp)
    sp.add_argument("--trace", default=None, help="AGH per-ordering trace CSV")
    sp.add_argument("--strict-verify", action="store_true")
    sp.add_argument("--no-m1", action="store_true")
    sp.add_argument("--no-m2", action="store_true")
    sp.add_argument("--no-m3", action="store_true")
    sp.add_argument("--r-random", type=int, default=None)
    sp.add_argument("--l-max", type=int, default=3)

    sp = sub.add_parser("evaluate", help="stage-2 Monte-Carlo evaluation")
    sp.add_argument("--placement", required=True)
    common(sp)
    sp.add_argument("--scenarios", type=int, default=500)
    sp.add_argument("--global-mult", action="store_true")

    sp = sub.add_parser("stress", help="evaluation under delay/error inflation")
    sp.add_argument("--placement", required=True)
    common(sp)
    sp.add_argument("--scenarios", type=int, default=500)
    sp.add_argument("--inflate", type=float, required=True)
    sp.add_argument("--global-mult", action="store_true")

    sp = sub.add_parser("ablate", help="mechanism ablation study")
    common(sp)

    sp = sub.add_parser("rolling", help="rolling-horizon re-optimization")
    common(sp)
    sp.add_argument("--algo", choices=("gh", "agh"), default="agh")
    sp.add_argument("--sigma", type=float, default=0.03)
    sp.add_argument("--trials", type=int, default=30)
    sp.add_argument("--windows", type=int, default=288)
    sp.add_argument("--replan-every", type=int, default=1)
    sp.add_argument("--static", action="store_true",
                    help="never re-plan (equivalent to replan-every=windows+1)")
    sp.add_argument("--r-random", type=int, default=None)

    sp = sub.add_parser("export-mps", help="write the full MILP as MPS")
    common(sp)

    sp = sub.add_parser("bench", help="runtime scaling grid")
    sp.add_argument("--sizes", required=True,
                    help="comma-separated IxJxK list")
    common(sp, instance=False)
    sp.add_argument("--algos", default="gh,agh")
    return p


def _cmd_gen(args) -> int:
    inst = generate_instance(args.sizes, args.seed)
    started = datetime.now(timezone.utc).isoformat()
    write_instance(inst, args.out)
    _write_manifest(args.out, args, started)
    print(f"wrote instance {inst.instance_id()} "
          f"({inst.I}x{inst.J}x{inst.K}) to {args.out}")
    return 0


def _cmd_solve(args) -> int:
    inst = read_instance(args.instance)
    flags = _mech_flags(args)
    trace = None
    if args.algo == "gh":
        sol, br, runtime = gh_solve(inst, GhParams(
            mechanisms=flags, strict_verify=args.strict_verify))
    elif args.algo == "agh":
        sol, br, runtime, trace = agh_solve(inst, AghParams(
            seed=args.seed, r_random=args.r_random, l_max=args.l_max,
            threads=_threads(args), mechanisms=flags,
            strict_verify=args.strict_verify))
    else:
        t0 = time.perf_counter()
        sol, br, status = solve_exact(inst)
        runtime = time.perf_counter() - t0
        if status != STATUS_OPTIMAL:
            print(f"exact solver: {status}", file=sys.stderr)
            if status == STATUS_TOO_LARGE:
                print("use `llm-alloc export-mps` for an external solver",
                      file=sys.stderr)
            return 1
    sol.meta.update({"algo": args.algo, "seed": args.seed,
                     "instance_id": inst.instance_id()})
    started = datetime.now(timezone.utc).isoformat()
    sol.write(args.out)
    _write_manifest(args.out, args, started, args.instance)
    if trace is not None and args.trace:
        with open(args.trace, "w", encoding="utf-8") as fh:
            fh.write("index,label,objective,accepted,best\n")
            for row in trace:
                fh.write(f"{row.index},{row.label},"
                         f"{format(row.objective, '.12g')},"
                         f"{int(row.accepted)},{format(row.best, '.12g')}\n")
        _write_manifest(args.trace, args, started, args.instance)
    report = check_feasibility(sol, inst)
    print(br.to_csv_row(inst.instance_id(), args.algo))
    print(f"feasible={report.ok} runtime_s={runtime:.3f}")
    return 0


def _eval_common(args, stress=None) -> int:
    inst = read_instance(args.instance)
    sol = Solution.read(args.placement)
    scenarios = gen_scenarios(inst, args.scenarios, args.seed, stress=stress,
                              global_mult=args.global_mult)
    t0 = time.perf_counter()
    report = stage2_evaluate(sol, inst, scenarios, threads=_threads(args))
    runtime = time.perf_counter() - t0
    br = objective(sol, inst)
    row = MetricsRow(instance_id=inst.instance_id(),
                     algo=str(sol.meta.get("algo", "unknown")),
                     seed=args.seed, breakdown=br, ca=report.ca,
                     p_viol=report.p_viol, runtime_s=runtime)
    started = datetime.now(timezone.utc).isoformat()
    metrics_to_csv([row], args.out)
    _write_manifest(args.out, args, started, args.instance)
    print(f"ca={report.ca:.4f} p_viol={report.p_viol:.4f}")
    return 0


def _cmd_ablate(args) -> int:
    inst = read_instance(args.instance)
    rows = run_ablation(inst, args.seed)
    started = datetime.now(timezone.utc).isoformat()
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("variant,feasible,violation_families,total\n")
        for r in rows:
            fams = ";".join(r.families)
            fh.write(f"{r.variant},{int(r.feasible)},{fams},"
                     f"{format(r.total, '.12g')}\n")
    _write_manifest(args.out, args, started, args.instance)
    for r in rows:
        print(f"{r.variant}: feasible={r.feasible} "
              f"families={list(r.families)} total={r.total:.2f}")
    return 0


def _cmd_rolling(args) -> int:
    inst = read_instance(args.instance)
    replan = args.windows + 1 if args.static else args.replan_every
    params = RollingParams(windows=args.windows, sigma=args.sigma,
                           trials=args.trials, replan_every=replan)
    agh_params = AghParams(r_random=args.r_random, threads=_threads(args))
    summary = run_rolling(inst, params, algo=args.algo, seed=args.seed,
                          agh_params=agh_params)
    started = datetime.now(timezone.utc).isoformat()
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("algo,sigma,trial,window,window_cost,cum_cost\n")
        for tr in summary.trials:
            for w in range(params.windows):
                fh.write(f"{args.algo},{args.sigma},{tr.trial},{w},"
                         f"{format(tr.window_costs[w], '.12g')},"
                         f"{format(tr.cum_costs[w], '.12g')}\n")
    _write_manifest(args.out, args, started, args.instance)
    print(f"{args.algo} sigma={args.sigma}: "
          f"mean={summary.mean_total:.2f} std={summary.std_total:.2f}")
    return 0


def _cmd_export_mps(args) -> int:
    inst = read_instance(args.instance)
    model = build_milp(inst)
    started = datetime.now(timezone.utc).isoformat()
    export_mps(model, args.out)
    _write_manifest(args.out, args, started, args.instance)
    print(f"wrote {len(model.variables)} columns, {len(model.rows)} rows")
    return 0


def _cmd_bench(args) -> int:
    sizes = [_parse_sizes(s) for s in args.sizes.split(",")]
    algos = [a.strip() for a in args.algos.split(",")]
    started = datetime.now(timezone.utc).isoformat()
    lines = ["size,algo,runtime_s,total,feasible"]
    for sz in sizes:
        inst = generate_instance(sz, args.seed)
        for algo in algos:
            if algo == "gh":
                sol, br, runtime = gh_solve(inst)
            elif algo == "agh":
                sol, br, runtime, _ = agh_solve(
                    inst, AghParams(seed=args.seed, threads=_threads(args)))
            else:
                t0 = time.perf_counter()
                sol, br, status = solve_exact(inst)
                runtime = time.perf_counter() - t0
                if status != STATUS_OPTIMAL:
                    lines.append(f"{sz[0]}x{sz[1]}x{sz[2]},{algo},,,{status}")
                    continue
            ok = check_feasibility(sol, inst).ok
            lines.append(f"{sz[0]}x{sz[1]}x{sz[2]},{algo},"
                         f"{runtime:.4f},{format(br.total, '.12g')},{int(ok)}")
            print(lines[-1])
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    _write_manifest(args.out, args, started)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "gen":
            return _cmd_gen(args)
        if args.command == "solve":
            return _cmd_solve(args)
        if args.command == "evaluate":
            return _eval_common(args)
        if args.command == "stress":
            return _eval_common(args, stress=args.inflate)
        if args.command == "ablate":
            return _cmd_ablate(args)
        if args.command == "rolling":
            return _cmd_rolling(args)
        if args.command == "export-mps":
            return _cmd_export_mps(args)
        if args.command == "bench":
            return _cmd_bench(args)
        parser.error(f"unknown command {args.command!r}")
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
