import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

import yaml
from config import get_settings
from pydantic import ValidationError
from util.exception import DataError, UsageError, format_validation_error
from util.files import atomic_write_text, read_text
from util.seed import derive_seed

from ..agent.controller import AgentPolicy, load_model, train
from ..agent.model import TrainedModel, TrainingLogRow
from ..carbon.controller import (
    MS_PER_HOUR,
    alternating_timeline,
    constant_timeline,
    get_profile,
    load_timeline,
)
from ..carbon.model import CarbonTimeline
from ..engine.controller import run
from ..engine.model import SimConfig, StepOutcome
from ..metrics.controller import compare, oracle_gap
from ..metrics.model import SimReport, SweepRow
from ..metrics.sweep import lambda_idle_sweep, sensitivity_sweep
from ..policies.controller import fixed_policy, make_policy, unit_scales
from ..policies.model import KeepAlivePolicy, PolicyName
from ..trace.controller import (
    annotate_cold,
    build_cold_table,
    fingerprint,
    generate_trace,
    load_cold_logs,
    load_trace,
    long_tail_subset,
    split_by_pod,
)
from ..trace.model import ColdStartEntry, Invocation, TraceSplit
from .model import ComparisonResult, OracleGapResult, Partition, RunConfig

logger = logging.getLogger(__name__)

RESOLVED_CONFIG_FILE = "resolved_config.yaml"


@dataclass
class Workload:
    split: TraceSplit
    evaluation: list[Invocation]
    sim: SimConfig
    fingerprint: str


def load_run_config(path: Optional[str | Path]) -> RunConfig:
    if path is None:
        return RunConfig()

    try:
        document = yaml.safe_load(read_text(path, "config file"))
    except yaml.YAMLError as e:
        raise UsageError(f"config file {path} is not valid YAML: {e}")

    try:
        return RunConfig.parse_obj(document or {})
    except ValidationError as e:
        raise UsageError(f"config file {path}: {format_validation_error(e)}")


def apply_overrides(cfg: RunConfig, overrides: dict[str, Any]) -> RunConfig:
    """Applies dotted `section.key` overrides, skipping None values"""
    document = json.loads(cfg.json())

    for key, value in overrides.items():
        if value is None:
            continue

        section, _, field = key.partition(".")
        if section not in document or not isinstance(document[section], dict):
            raise UsageError(f"unknown config section in override '{key}'")

        logger.info(f"Override {key}: {document[section].get(field)!r} -> {value!r}")
        document[section][field] = value.value if hasattr(value, "value") else value

    try:
        return RunConfig.parse_obj(document)
    except ValidationError as e:
        raise UsageError(format_validation_error(e))


def output_directory(cfg: RunConfig) -> Path:
    return Path(cfg.output.directory or get_settings().output_dir)


def write_resolved_config(cfg: RunConfig, directory: Path) -> Path:
    document = json.loads(cfg.json())
    return atomic_write_text(directory / RESOLVED_CONFIG_FILE, yaml.safe_dump(document, sort_keys=False))


def _timeline(cfg: RunConfig, invocations: Sequence[Invocation]) -> CarbonTimeline:
    carbon = cfg.carbon

    if carbon.timeline:
        return load_timeline(carbon.timeline)

    start = carbon.timeline_offset_ms or 0
    if carbon.alternating:
        last = max((i.ts_ms + i.exec_ms for i in invocations), default=0)
        # Slack for cold starts and the longest keep-alive past the last arrival
        hours = math.ceil((last + 2 * MS_PER_HOUR) / MS_PER_HOUR)
        return alternating_timeline(carbon.alternating, hours, start)

    return constant_timeline(carbon.constant_ci, start)


def sim_config(cfg: RunConfig, timeline: CarbonTimeline) -> SimConfig:
    sim = cfg.sim
    return SimConfig(
        action_set_s=sim.action_set_s,
        network_const_ms=sim.network_const_ms,
        lambda_carbon=sim.lambda_carbon,
        profile=get_profile(cfg.carbon.profile, cfg.carbon.profiles_file),
        timeline=timeline,
        window_w=sim.window_w,
        seed=sim.seed,
        prior_p=sim.prior_p,
        sigma_l=sim.sigma_l,
        sigma_c=sim.sigma_c,
        timeline_offset_ms=cfg.carbon.timeline_offset_ms,
        cold_delays_expiry=sim.cold_delays_expiry,
        split_spans=cfg.carbon.split_spans,
    )


def prepare_workload(cfg: RunConfig, invocations: Optional[list[Invocation]] = None,
                     cold_logs: Optional[list[ColdStartEntry]] = None) -> Workload:
    """Loads or synthesizes the trace, splits it by pod, builds the cold-start
    table from the training partition and selects the evaluated slice."""
    root = cfg.sim.seed
    section = cfg.trace

    if invocations is not None:
        raw = sorted(invocations, key=lambda i: i.ts_ms)
        logs = cold_logs
    elif section.synthetic is not None:
        spec = section.synthetic
        if spec.seed is None:
            # Recorded so the resolved config reproduces the run
            spec = spec.copy(update={"seed": derive_seed(root, "trace")})
            section.synthetic = spec
        generated = generate_trace(spec)
        raw, logs = generated.invocations, generated.cold_logs
    elif section.path:
        raw = load_trace(section.path)
        logs = None
    else:
        raise UsageError("no trace given: set trace.path or trace.synthetic, or pass --trace")

    if section.cold_log:
        logs = load_cold_logs(section.cold_log)

    if not raw:
        raise DataError("the trace has no invocations")

    if section.split_seed is None:
        section.split_seed = derive_seed(root, "split")
    split_seed = section.split_seed
    split = split_by_pod(raw, tuple(section.split_ratios), split_seed)

    already_annotated = logs is None and all(i.cold_ms is not None for i in raw)
    if not already_annotated:
        table = build_cold_table(split.train, logs, section.default_cold_ms, section.cold_statistic.value)
        split = TraceSplit(
            train=annotate_cold(split.train, table),
            validation=annotate_cold(split.validation, table),
            test=annotate_cold(split.test, table),
            split_seed=split_seed,
        )

    partition = section.evaluate_on
    evaluation = split.partition(partition.value)
    if not evaluation:
        logger.warning(f"Partition '{partition.value}' is empty ({len(split.partition('all'))} invocations in total), evaluating on all")
        evaluation = split.partition(Partition.all.value)

    if section.long_tail_quantile is not None:
        evaluation = long_tail_subset(evaluation, section.long_tail_quantile)
        logger.info(f"Long-tail selection at quantile {section.long_tail_quantile}: {len(evaluation)} invocations")
        if not evaluation:
            raise DataError("long-tail selection left no invocations")

    sim = sim_config(cfg, _timeline(cfg, split.partition("all")))

    # Unit scales come from the training partition
    reference = split.train or evaluation
    sigma_l, sigma_c = unit_scales(reference, sim)
    sim = sim.copy(update={"sigma_l": sigma_l, "sigma_c": sigma_c})
    logger.info(f"Unit scales: sigma_l={sigma_l:.6g} sigma_c={sigma_c:.6g}")

    return Workload(split=split, evaluation=evaluation, sim=sim, fingerprint=fingerprint(evaluation))


def parse_policies(names: Iterable[str | PolicyName]) -> list[PolicyName]:
    """Validates every name before any simulation starts"""
    parsed = []
    for name in names:
        try:
            parsed.append(PolicyName(name))
        except ValueError:
            valid = ", ".join(p.value for p in PolicyName)
            raise UsageError(f"unknown policy '{name}', expected one of: {valid}")

    if not parsed:
        raise UsageError("no policies given")

    return parsed


def build_policy(cfg: RunConfig, name: PolicyName, sim: SimConfig, model: Optional[TrainedModel] = None) -> KeepAlivePolicy:
    section = cfg.policy

    match name:
        case PolicyName.rl:
            if model is None:
                if not section.model:
                    raise UsageError("policy 'rl' needs a trained model (--model)")
                model = load_model(section.model, sim.action_set_s)
            return AgentPolicy(model.net, model.stats, model.action_set_s)

        case PolicyName.fixed:
            return fixed_policy(section.k, sim.action_set_s)

    return make_policy(name, section.k, section.swarm, section.iters, cfg.sim.seed)


def simulate(cfg: RunConfig, workload: Optional[Workload] = None) -> tuple[SimReport, list[StepOutcome]]:
    workload = workload or prepare_workload(cfg)
    policy = build_policy(cfg, cfg.policy.name, workload.sim)

    logger.info(f"Simulating '{policy.name}' on {len(workload.evaluation)} invocations")
    return run(workload.evaluation, policy, workload.sim, workload.fingerprint)


def compare_policies(
    cfg: RunConfig, names: Sequence[PolicyName], workload: Optional[Workload] = None, threads: Optional[int] = None
) -> ComparisonResult:
    workload = workload or prepare_workload(cfg)
    policies = [(name, build_policy(cfg, name, workload.sim)) for name in names]
    labels = [name.value for name, _ in policies]
    if len(set(labels)) != len(labels):
        raise UsageError(f"duplicate policies in {labels}")

    def evaluate(policy: KeepAlivePolicy) -> SimReport:
        return run(workload.evaluation, policy, workload.sim, workload.fingerprint)[0]

    workers = max(1, threads or get_settings().threads)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(evaluate, [policy for _, policy in policies]))
    else:
        reports = [evaluate(policy) for _, policy in policies]

    by_name = dict(zip(labels, reports))
    table = compare(by_name)

    oracle_dominates = None
    if PolicyName.oracle.value in by_name:
        oracle_cost = by_name[PolicyName.oracle.value].weighted_cost
        others = [r.weighted_cost for label, r in by_name.items() if label != PolicyName.oracle.value]
        oracle_dominates = all(oracle_cost <= cost * (1 + 1e-9) + 1e-12 for cost in others)
        log = logger.info if oracle_dominates else logger.warning
        log(f"Oracle dominance check: {'holds' if oracle_dominates else 'violated'} (oracle weighted cost {oracle_cost:.6g})")

    return ComparisonResult(table=table, reports=by_name, oracle_dominates=oracle_dominates)


def train_agent(
    cfg: RunConfig, workload: Optional[Workload] = None, log: Optional[list[TrainingLogRow]] = None,
    lambda_grid: Optional[list[float]] = None,
) -> TrainedModel:
    workload = workload or prepare_workload(cfg)
    if cfg.train.seed is None:
        cfg.train.seed = derive_seed(cfg.sim.seed, "agent")

    train_cfg = cfg.train
    if lambda_grid is not None:
        train_cfg = train_cfg.copy(update={"lambda_grid": lambda_grid})

    logger.info(
        f"Training for {train_cfg.episodes} episode(s) on {len(workload.split.train)} invocations, "
        f"lambda grid {train_cfg.lambda_grid}"
    )
    return train(workload.split, train_cfg, workload.sim, log)


def sweep(
    cfg: RunConfig, grid: Sequence[float], parameter: str = "lambda_carbon", workload: Optional[Workload] = None
) -> list[SweepRow]:
    """Sensitivity series for `cfg.policy`

    For the learned policy without a model file, one agent is trained per
    lambda_carbon value; with a model file the preference-conditioned agent
    is evaluated at every value.
    """
    if parameter not in ("lambda_carbon", "lambda_idle"):
        raise UsageError(f"unknown sweep parameter '{parameter}', expected lambda_carbon or lambda_idle")

    workload = workload or prepare_workload(cfg)
    name = cfg.policy.name

    if name is PolicyName.rl and not cfg.policy.model:
        if parameter != "lambda_carbon":
            model = train_agent(cfg, workload)
            return lambda_idle_sweep(lambda lam: build_policy(cfg, name, workload.sim, model), workload.evaluation, workload.sim, grid)

        models = {}

        def policy_for(lam: float) -> KeepAlivePolicy:
            if lam not in models:
                models[lam] = train_agent(cfg, workload, lambda_grid=[lam])
            return build_policy(cfg, name, workload.sim, models[lam])

    else:
        shared = build_policy(cfg, name, workload.sim)

        def policy_for(lam: float) -> KeepAlivePolicy:
            return shared

    if parameter == "lambda_idle":
        return lambda_idle_sweep(policy_for, workload.evaluation, workload.sim, grid)
    return sensitivity_sweep(policy_for, workload.evaluation, workload.sim, grid)


def oracle_gap_run(cfg: RunConfig, workload: Optional[Workload] = None, model: Optional[TrainedModel] = None) -> OracleGapResult:
    """Learned policy against the oracle on the same slice, training first when no model is given"""
    workload = workload or prepare_workload(cfg)

    if model is None and not cfg.policy.model:
        model = train_agent(cfg, workload)

    rl, _ = run(workload.evaluation, build_policy(cfg, PolicyName.rl, workload.sim, model), workload.sim, workload.fingerprint)
    oracle, _ = run(workload.evaluation, build_policy(cfg, PolicyName.oracle, workload.sim), workload.sim, workload.fingerprint)

    return OracleGapResult(rl=rl, oracle=oracle, rows=oracle_gap(rl, oracle))
