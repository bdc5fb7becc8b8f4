"""Command-line frontend

    python cli.py gen-trace --model deterministic --interval 10 --duration 60 --pods 1
    python cli.py simulate --config run.yaml --policy fixed --k 60
    python cli.py train --config run.yaml --episodes 300
    python cli.py compare --config run.yaml --policies fixed,latency_min,carbon_min,pso,oracle
    python cli.py sweep --config run.yaml --lambda-grid 0.1,0.3,0.5,0.7,0.9
    python cli.py oracle-gap --config run.yaml --model runs/model.json
    python cli.py serve

Exit codes: 0 success, 1 usage error, 2 data error, 3 training divergence.
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from config import get_settings, init_sentry, setup_logging
from util.exception import SimulationError, UsageError

from routes.agent.controller import save_model
from routes.agent.model import TrainingLogRow
from routes.experiments import controller
from routes.experiments.model import Partition, RunConfig
from routes.metrics.controller import (
    decision_intensity_profile,
    write_outcomes,
    write_report,
    write_rows,
)
from routes.policies.model import PolicyName
from routes.trace.controller import generate_trace, write_cold_logs, write_trace
from routes.trace.model import ArrivalModel, SyntheticSpec

logger = logging.getLogger(__name__)


class ArgumentParser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


def float_list(value: str) -> list[float]:
    items = [item.strip() for item in value.split(",") if item.strip()]
    try:
        return [float(item) for item in items]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated numbers, got '{value}'")


def name_list(value: str) -> list[str]:
    return [item.strip() for item in value.split(",") if item.strip()]


def pct(value: Optional[float], signed: bool = False) -> str:
    if value is None:
        return "n/a"
    return f"{value:+.2f}%" if signed else f"+{value:.2f}%"


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="keepalive-sim", description="Serverless keep-alive simulator")
    parser.add_argument("--log-level", default=None, help="overrides LOG_LEVEL / output.verbosity")

    common = ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration (YAML)")
    common.add_argument("--output-dir", help="directory for all outputs")
    common.add_argument("--seed", type=int, help="root seed")

    data = ArgumentParser(add_help=False)
    data.add_argument("--trace", help="trace CSV")
    data.add_argument("--cold-log", help="cold-start log CSV")
    data.add_argument("--timeline", help="carbon intensity CSV")
    data.add_argument("--constant-ci", type=float, help="constant intensity when no timeline is given")
    data.add_argument("--profile", help="energy profile preset")
    data.add_argument("--lambda-carbon", type=float)
    data.add_argument("--evaluate-on", choices=[p.value for p in Partition])
    data.add_argument("--long-tail-quantile", type=float)
    data.add_argument("--policy", choices=[p.value for p in PolicyName])
    data.add_argument("--k", type=float, help="keep-alive seconds for the fixed policy")
    data.add_argument("--model", help="trained model file for the rl policy")

    commands = parser.add_subparsers(dest="command", parser_class=ArgumentParser)
    commands.required = True

    gen = commands.add_parser("gen-trace", parents=[common], help="write a synthetic trace")
    gen.add_argument("--model", dest="arrival_model", choices=[m.value for m in ArrivalModel], default="poisson")
    gen.add_argument("--duration", type=int, required=True, help="seconds")
    gen.add_argument("--functions", type=int, default=1)
    gen.add_argument("--pods", type=int, default=1, help="pods per function")
    gen.add_argument("--rate", type=float, help="poisson rate (Hz)")
    gen.add_argument("--burst-rate", type=float)
    gen.add_argument("--lull-rate", type=float)
    gen.add_argument("--period", type=float, help="bimodal period (s)")
    gen.add_argument("--interval", type=float, help="deterministic interval (s)")
    gen.add_argument("--cold-range", type=float, nargs=2, metavar=("LO", "HI"))
    gen.add_argument("--out", help="trace CSV path, default <output-dir>/trace.csv")
    gen.add_argument("--cold-log-out", help="cold-start log path, default <output-dir>/cold_logs.csv")

    sim = commands.add_parser("simulate", parents=[common, data], help="run one policy")
    sim.add_argument("--no-outcomes", action="store_true", help="skip the per-invocation CSV")

    tr = commands.add_parser("train", parents=[common, data], help="train the DQN agent")
    tr.add_argument("--episodes", type=int)
    tr.add_argument("--lambda-grid", type=float_list)
    tr.add_argument("--lr", type=float)
    tr.add_argument("--model-out", help="model path, default <output-dir>/model.json")

    cmp = commands.add_parser("compare", parents=[common, data], help="compare policies")
    cmp.add_argument("--policies", type=name_list, required=True, help="comma separated policy names")
    cmp.add_argument("--threads", type=int)

    sw = commands.add_parser("sweep", parents=[common, data], help="sensitivity sweep")
    sw.add_argument("--lambda-grid", type=float_list, required=True)
    sw.add_argument("--parameter", choices=["lambda_carbon", "lambda_idle"], default="lambda_carbon")
    sw.add_argument("--episodes", type=int)

    gap = commands.add_parser("oracle-gap", parents=[common, data], help="learned policy against the oracle")
    gap.add_argument("--episodes", type=int)

    srv = commands.add_parser("serve", help="start the HTTP API")
    srv.add_argument("--host")
    srv.add_argument("--port", type=int)

    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = controller.load_run_config(args.config)

    overrides = {
        "sim.seed": args.seed,
        "output.directory": args.output_dir,
        "trace.path": getattr(args, "trace", None),
        "trace.cold_log": getattr(args, "cold_log", None),
        "trace.evaluate_on": getattr(args, "evaluate_on", None),
        "trace.long_tail_quantile": getattr(args, "long_tail_quantile", None),
        "carbon.timeline": getattr(args, "timeline", None),
        "carbon.constant_ci": getattr(args, "constant_ci", None),
        "carbon.profile": getattr(args, "profile", None),
        "sim.lambda_carbon": getattr(args, "lambda_carbon", None),
        "policy.name": getattr(args, "policy", None),
        "policy.k": getattr(args, "k", None),
        "policy.model": getattr(args, "model", None),
        "train.episodes": getattr(args, "episodes", None),
        "train.lambda_grid": getattr(args, "lambda_grid", None) if args.command == "train" else None,
        "train.lr": getattr(args, "lr", None),
    }
    cfg = controller.apply_overrides(cfg, overrides)
    if overrides["trace.path"]:
        # A trace file on the command line replaces any synthetic section
        cfg.trace.synthetic = None
    if args.log_level is None and cfg.output.verbosity:
        setup_logging(cfg.output.verbosity)
    return cfg


def cmd_gen_trace(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    directory = controller.output_directory(cfg)

    values = {
        "arrival_model": args.arrival_model,
        "duration_s": args.duration,
        "n_functions": args.functions,
        "n_pods_per_function": args.pods,
        "rate_hz": args.rate,
        "burst_rate_hz": args.burst_rate,
        "lull_rate_hz": args.lull_rate,
        "period_s": args.period,
        "interval_s": args.interval,
        "cold_latency_range_ms": tuple(args.cold_range) if args.cold_range else None,
        "seed": args.seed if args.seed is not None else cfg.sim.seed,
    }
    try:
        spec = SyntheticSpec(**{key: value for key, value in values.items() if value is not None})
    except ValueError as e:
        raise UsageError(f"invalid synthetic spec: {e}")

    generated = generate_trace(spec)
    trace_path = Path(args.out) if args.out else directory / "trace.csv"
    cold_path = Path(args.cold_log_out) if args.cold_log_out else directory / "cold_logs.csv"

    write_trace(generated.invocations, trace_path)
    write_cold_logs(generated.cold_logs, cold_path)

    cfg.trace.synthetic = spec
    controller.write_resolved_config(cfg, trace_path.parent)

    print(f"{len(generated.invocations)} invocations -> {trace_path} (fingerprint {generated.fingerprint})")
    return 0


def cmd_simulate(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    directory = controller.output_directory(cfg)

    workload = controller.prepare_workload(cfg)
    report, outcomes = controller.simulate(cfg, workload)

    write_report(report, directory / "report.json")
    if cfg.output.write_outcomes and not args.no_outcomes:
        write_outcomes(outcomes, directory / "outcomes.csv")
    write_rows(report.hourly, directory / "hourly.csv")
    write_rows(
        decision_intensity_profile(outcomes, workload.sim.timeline, workload.sim.offset_ms),
        directory / "decision_profile.csv",
    )
    controller.write_resolved_config(cfg, directory)

    print(
        f"{report.policy}: cold starts {report.cold_start_count}, mean latency {report.mean_e2e_latency_s:.4f} s, "
        f"keep-alive carbon {report.keep_alive_carbon_g:.6g} g, total carbon {report.total_carbon_g:.6g} g"
    )
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    directory = controller.output_directory(cfg)
    model_path = Path(args.model_out) if args.model_out else directory / "model.json"

    log: list[TrainingLogRow] = []
    try:
        model = controller.train_agent(cfg, log=log)
    finally:
        # Partial log survives a divergence abort
        if log:
            write_rows(log, directory / "training_log.csv")

    save_model(model, model_path)
    controller.write_resolved_config(cfg, directory)

    print(f"model -> {model_path} (best validation episode {model.best_episode + 1} of {len(log)})")
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    # Unknown names fail before any simulation
    names = controller.parse_policies(args.policies)

    cfg = resolve_config(args)
    directory = controller.output_directory(cfg)

    result = controller.compare_policies(cfg, names, threads=args.threads)

    write_rows(result.table.rows, directory / "comparison.csv")
    write_report(result, directory / "comparison.json")
    controller.write_resolved_config(cfg, directory)

    for row in result.table.rows:
        print(
            f"{row.rank}. {row.policy}: cold {row.cold_start_count} ({pct(row.cold_increase_pct)}), "
            f"keep-alive {row.keep_alive_carbon_g:.6g} g ({pct(row.carbon_increase_pct)}), "
            f"weighted cost {row.weighted_cost:.6g}"
        )
    if result.oracle_dominates is not None:
        print(f"oracle dominance: {'ok' if result.oracle_dominates else 'VIOLATED'}")
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    if not args.lambda_grid:
        raise UsageError("--lambda-grid is empty")

    cfg = resolve_config(args)
    directory = controller.output_directory(cfg)

    rows = controller.sweep(cfg, args.lambda_grid, args.parameter)

    write_rows(rows, directory / f"sweep_{args.parameter}.csv")
    controller.write_resolved_config(cfg, directory)

    for row in rows:
        print(f"{row.parameter}={row.value:g}: cold {row.cold_start_count}, keep-alive {row.keep_alive_carbon_g:.6g} g")
    return 0


def cmd_oracle_gap(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    directory = controller.output_directory(cfg)

    result = controller.oracle_gap_run(cfg)

    write_rows(result.rows, directory / "oracle_gap.csv")
    write_report(result, directory / "oracle_gap.json")
    controller.write_resolved_config(cfg, directory)

    for row in result.rows:
        print(f"{row.metric}: rl {row.rl:.6g}, oracle {row.oracle:.6g}, gap {pct(row.gap_pct, signed=True)}")
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    from main import serve

    serve(args.host, args.port)
    return 0


COMMANDS = {
    "gen-trace": cmd_gen_trace,
    "simulate": cmd_simulate,
    "train": cmd_train,
    "compare": cmd_compare,
    "sweep": cmd_sweep,
    "oracle-gap": cmd_oracle_gap,
    "serve": cmd_serve,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        setup_logging(args.log_level)
        init_sentry()
        return COMMANDS[args.command](args)
    except SimulationError as e:
        print(f"error: {e.detail}", file=sys.stderr)
        return e.exit_code
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
