"""Cost-minimizing power-demand modulation for data centers."""

from .model import (CostBreakdown, FeasibilityReport, InfeasiblePlanError, ModulationModel, Plan,
                    PlanShapeError, PowerTrace, Tariff, WorkloadStats, baseline_total,
                    check_feasible, evaluate_cost, workload_stats)
from .offline import (DropThreshold, OffConfig, oracle_bruteforce, solve_drop_only, solve_off)
from .online import MpcConfig, OnDropState, ondrop_competitive_check, ondrop_step, onmpc_run
from .sdp import (DiscreteModel, PolicyTable, rollout_policy, solve_sdp_drop, solve_sdp_full,
                  solve_sdp_lin)

__version__ = "0.1.0"
