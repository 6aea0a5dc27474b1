"""Command-line interface.

Exit codes: 0 success, 1 validation or usage error, 2 solver failure.
``--config`` points at a JSON object whose keys provide defaults for the
subcommand's options (command-line flags still win).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import io as pio
from .bench import KNOBS, run_scenario, write_results, write_rows_csv
from .model import (InfeasiblePlanError, ModulationModel, PlanShapeError, PowerTrace, Tariff,
                    evaluate_cost, workload_stats)
from .offline import SolverError, solve_drop_only, solve_off
from .online import MpcConfig, onmpc_run, run_ondrop, stream_ondrop
from .sdp import (DiscreteModel, rollout_policy, solve_sdp_drop, solve_sdp_full, solve_sdp_lin,
                  time_of_day_model)
from .workloads import GeneratorSpec, PRESETS, generate, preset

EXIT_OK, EXIT_INVALID, EXIT_SOLVER = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _add_tariff(p, beta_default=17.75):
    p.add_argument("--alpha", type=float, default=0.046, help="flat energy price ($/kWh)")
    p.add_argument("--prices", help="per-slot price CSV (slot,price_per_kwh); overrides --alpha")
    p.add_argument("--beta", type=float, default=beta_default, help="peak price ($/kW per cycle)")


def _add_model(p):
    p.add_argument("--kdrop", type=float, default=0.72)
    p.add_argument("--kdelay", type=float, default=0.02)
    p.add_argument("--exponent", type=int, default=2, choices=(1, 2))
    p.add_argument("--tau", type=int, default=6)


def _add_trace(p, required=True):
    p.add_argument("--trace", required=required, help="trace CSV (slot,power_kw)")
    p.add_argument("--slot-hours", type=float, default=1.0 / 6.0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="powermod", description="Power-demand modulation under peak and time-varying tariffs")
    parser.add_argument("--config", help="JSON file with option defaults")
    parser.add_argument("--out", help="write machine-readable output here instead of stdout")
    parser.add_argument("-v", "--verbose", action="store_true")
    # the same options are accepted after the subcommand name
    common = _Parser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help=argparse.SUPPRESS)
    common.add_argument("--out", default=argparse.SUPPRESS, help=argparse.SUPPRESS)
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS,
                        help=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name, help):
        return sub.add_parser(name, help=help, parents=[common])

    g = command("generate", "generate a synthetic workload trace")
    g.add_argument("--preset", choices=PRESETS)
    g.add_argument("--spec", help="generator spec JSON (instead of --preset)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--days", type=int, default=30)
    g.add_argument("--no-surge", action="store_true")

    s = command("stats", "peak-to-average ratio and peak width of a trace")
    _add_trace(s)

    e = command("evaluate", "bill a plan CSV")
    _add_trace(e)
    e.add_argument("--plan", required=True)
    _add_tariff(e)
    _add_model(e)

    o = command("solve-off", "optimal offline plan")
    _add_trace(o)
    _add_tariff(o)
    _add_model(o)
    o.add_argument("--knobs", choices=("drop", "delay", "both"), default="both")
    o.add_argument("--plan-out", help="write the plan CSV here")

    d = command("drop-threshold", "closed-form drop-only threshold")
    _add_trace(d)
    d.add_argument("--alpha", type=float, default=0.046)
    d.add_argument("--beta", type=float, default=17.75)
    d.add_argument("--kdrop", type=float, default=0.72)
    d.add_argument("--normalization", choices=("slot", "raw"), default="slot")

    q = command("sdp", "solve a stochastic program and roll it out on a trace")
    q.add_argument("variant", choices=("drop", "lin", "full"))
    _add_trace(q)
    q.add_argument("--training", help="training trace for the time-of-day model (default: --trace)")
    q.add_argument("--levels", type=int, default=21)
    q.add_argument("--sigma", type=float, help="noise sigma (default: empirical)")
    q.add_argument("--no-drop", action="store_true")
    q.add_argument("--state-budget", type=int, default=10 ** 6)
    q.add_argument("--table-out", help="save the policy table (.npz)")
    _add_tariff(q)
    _add_model(q)

    n = command("online", "online controllers")
    n.add_argument("algorithm", choices=("ondrop", "mpc"))
    _add_trace(n, required=False)
    n.add_argument("--stream", action="store_true", help="ondrop: read slot,power_kw lines on stdin")
    n.add_argument("--training", help="mpc: predictor training trace (default: --trace)")
    n.add_argument("--H", type=int, default=144)
    n.add_argument("--h", type=int, default=36)
    n.add_argument("--predictor", choices=("time_of_day", "mean"), default="time_of_day")
    n.add_argument("--peak-weighting", choices=("remaining", "full"), default="remaining")
    n.add_argument("--knobs", choices=("drop", "delay", "both"), default="both")
    _add_tariff(n)
    _add_model(n)

    b = command("bench", "run an experiment grid")
    b.add_argument("--workers", type=int)
    return parser




def _trace(args) -> PowerTrace:
    return pio.read_trace_csv(args.trace, args.slot_hours)


def _tariff(args, T: int) -> Tariff:
    if getattr(args, "prices", None):
        return Tariff(pio.read_price_csv(args.prices)[:T], args.beta)
    return Tariff.flat(args.alpha, args.beta)


def _model(args) -> ModulationModel:
    return ModulationModel(args.kdrop, args.kdelay, args.exponent, args.tau)


def _emit(args, text: str) -> None:
    if args.out:
        Path(args.out).write_text(text if text.endswith("\n") else text + "\n")
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _cmd_generate(args):
    if args.spec:
        spec = GeneratorSpec.from_dict(json.loads(Path(args.spec).read_text()))
    elif args.preset:
        spec = preset(args.preset, seed=args.seed, days=args.days)
        if args.no_surge:
            spec = spec.without_surge()
    else:
        raise UsageError("generate needs --preset or --spec")
    trace = generate(spec)
    if args.out:
        pio.write_trace_csv(args.out, trace)
    else:
        pio.write_trace_csv(sys.stdout, trace)


def _cmd_stats(args):
    st = workload_stats(_trace(args))
    _emit(args, json.dumps({"par": st.par, "p70": st.p70, "mean_kw": st.mean_kw,
                            "max_kw": st.max_kw, "all_zero": st.all_zero}, indent=2, sort_keys=True))


def _cmd_evaluate(args):
    trace = _trace(args)
    model = _model(args)
    plan = pio.read_plan_csv(args.plan, trace.T, model.tau)
    cost = evaluate_cost(plan, trace, _tariff(args, trace.T), model)
    _emit(args, pio.cost_to_json(cost))


def _cmd_solve_off(args):
    trace = _trace(args)
    plan, cost = solve_off(trace, _tariff(args, trace.T), _model(args), KNOBS[args.knobs])
    if args.plan_out:
        pio.write_plan_csv(args.plan_out, plan)
    _emit(args, pio.cost_to_json(cost, y_max=plan.y_max))


def _cmd_drop_threshold(args):
    trace = _trace(args)
    th, plan, cost = solve_drop_only(trace, args.alpha, args.beta, args.kdrop, args.normalization)
    theta = th.theta if np.isfinite(th.theta) else None
    _emit(args, json.dumps({"n": th.n, "theta": theta, "savings_pct": cost.savings_pct,
                            "total": cost.total, "baseline_total": cost.baseline_total},
                           indent=2, sort_keys=True))


def _cmd_sdp(args):
    trace = _trace(args)
    training = pio.read_trace_csv(args.training, args.slot_hours) if args.training else trace
    tariff = _tariff(args, trace.T)
    model = _model(args)
    demand = time_of_day_model(training, trace.T, args.levels, sigma=args.sigma)
    price = DiscreteModel.from_tariff(tariff, trace.T)
    if args.variant == "drop":
        table = solve_sdp_drop(demand, price, tariff.peak_price, model.k_drop, trace.slot_hours)
    elif args.variant == "lin":
        table = solve_sdp_lin(demand, price, tariff.peak_price, model, trace.slot_hours,
                              not args.no_drop, args.state_budget)
    else:
        table = solve_sdp_full(demand, price, tariff.peak_price, model, trace.slot_hours,
                               not args.no_drop, args.state_budget)
    if args.table_out:
        table.save(args.table_out)
    plan, cost = rollout_policy(table, trace, tariff, model)
    _emit(args, pio.cost_to_json(cost, expected_cost=table.initial_value()))


def _cmd_online(args):
    if args.algorithm == "ondrop" and args.stream:
        out = open(args.out, "w") if args.out else sys.stdout
        try:
            for line in stream_ondrop(sys.stdin, args.alpha, args.beta, args.kdrop):
                out.write(line + "\n")
                out.flush()
        finally:
            if args.out:
                out.close()
        return
    if not args.trace:
        raise UsageError("online needs --trace (or --stream for ondrop)")
    trace = _trace(args)
    if args.algorithm == "ondrop":
        run = run_ondrop(trace, args.alpha, args.beta, args.kdrop)
        theta = run.thetas[-1] if np.isfinite(run.thetas[-1]) else None
        _emit(args, pio.cost_to_json(run.cost, n=run.n, final_theta=theta))
        return
    training = pio.read_trace_csv(args.training, args.slot_hours) if args.training else trace
    cfg = MpcConfig(args.H, args.h, args.predictor, args.peak_weighting)
    plan, cost = onmpc_run(trace, _tariff(args, trace.T), _model(args), cfg, training,
                           KNOBS[args.knobs])
    _emit(args, pio.cost_to_json(cost, y_max=plan.y_max))


def _cmd_bench(args, config: dict):
    scenario = dict(config.get("bench", config))
    for key in ("config", "out", "verbose", "command", "workers"):
        scenario.pop(key, None)
    if args.workers is not None:
        scenario["workers"] = args.workers
    rows, walls = run_scenario(scenario)
    if args.out:
        write_results(rows, walls, args.out, scenario)
    else:
        write_rows_csv(rows, sys.stdout)
    if any(r["status"] == "failed" for r in rows):
        return EXIT_SOLVER
    return EXIT_OK


COMMANDS = {"generate": _cmd_generate, "stats": _cmd_stats, "evaluate": _cmd_evaluate,
            "solve-off": _cmd_solve_off, "drop-threshold": _cmd_drop_threshold,
            "sdp": _cmd_sdp, "online": _cmd_online}


def _load_config(argv) -> dict:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return {}
    config = json.loads(Path(known.config).read_text())
    if not isinstance(config, dict):
        raise UsageError("--config must hold a JSON object")
    return config


def _apply_config(parser, config: dict) -> None:
    """Config keys become subcommand defaults; options they supply stop being required."""
    keys = {k.replace("-", "_"): v for k, v in config.items()}
    for sub in parser._subparsers._group_actions[0].choices.values():
        known = {a.dest for a in sub._actions}
        sub.set_defaults(**{k: v for k, v in keys.items() if k in known})
        for action in sub._actions:
            if action.dest in keys:
                action.required = False


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        config = _load_config(argv)
        _apply_config(parser, config)
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        with warnings.catch_warnings():
            if not args.verbose:
                warnings.simplefilter("ignore", RuntimeWarning)
            if args.command == "bench":
                return _cmd_bench(args, config)
            COMMANDS[args.command](args)
        return EXIT_OK
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ValueError, OSError, InfeasiblePlanError, PlanShapeError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
