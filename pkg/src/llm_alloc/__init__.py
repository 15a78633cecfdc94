"""Cost-minimal placement of LLM inference workloads on heterogeneous GPU
tiers: greedy and adaptive-greedy solvers, an exact oracle for tiny
instances, and an out-of-sample evaluation harness."""

__version__ = "0.1.0"

from .agh import AghParams, agh_solve, consolidate, orderings, relocate
from .cost import (Config, CostBreakdown, Solution, check_feasibility, delay,
                   objective)
from .exact import build_milp, export_mps, solve_exact
from .gh import GhParams, gh_solve, phase1_cover, phase2_allocate
from .harness import (EvalReport, MetricsRow, RollingParams, Scenario,
                      gen_scenarios, metrics_to_csv, run_ablation,
                      run_rolling, stage2_evaluate)
from .instance import (Globals, GpuTier, Instance, ModelSpec, QueryType,
                       calibrate, generate_instance, read_instance,
                       write_instance)
from .lp import LpProblem, lp_solve
from .mechanisms import (AllocState, Candidate, MechanismFlags, m1_select,
                         m2_score, m3_upgrade, rank)
