"""End-to-end trend checks on synthetic traces

The fast checks run by default; anything that trains an agent on a
non-trivial trace is marked slow.
"""
import time

import numpy as np
import pytest
from routes.agent.controller import AgentPolicy, encode, state_dim
from routes.agent.network import QNetwork
from routes.agent.model import NormStats
from routes.engine.controller import run
from routes.experiments import controller
from routes.experiments.model import RunConfig
from routes.metrics.controller import decision_intensity_profile
from routes.policies.controller import fixed_policy
from routes.policies.model import DecisionContext, PolicyName

ACTIONS = [1.0, 5.0, 10.0, 30.0, 60.0]


def spearman(x, y) -> float:
    rx = np.argsort(np.argsort(x)).astype(float)
    ry = np.argsort(np.argsort(y)).astype(float)
    return float(np.corrcoef(rx, ry)[0, 1])


def experiment(tmp_path, synthetic: dict, sim: dict | None = None, train: dict | None = None, carbon: dict | None = None) -> RunConfig:
    return RunConfig.parse_obj(
        {
            "trace": {"synthetic": synthetic, "split_ratios": [0.6, 0.2, 0.2], "evaluate_on": "test"},
            "sim": {"seed": 1, **(sim or {})},
            "carbon": carbon or {},
            "train": {"batch": 32, "hidden": [32, 32], "target_sync_interval": 200, **(train or {})},
            "output": {"directory": str(tmp_path)},
        }
    )


@pytest.mark.parametrize("cold_delays_expiry", [True, False])
def test_fixed_timeout_monotonicity(make_cfg, random_trace, cold_delays_expiry):
    cfg = make_cfg(cold_delays_expiry=cold_delays_expiry)

    violations = 0
    for seed in range(20):
        trace = random_trace(seed, n_pods=4, max_per_pod=40)
        reports = [run(trace, fixed_policy(k), cfg)[0] for k in ACTIONS]
        for shorter, longer in zip(reports, reports[1:]):
            violations += longer.cold_start_count > shorter.cold_start_count
            violations += longer.keep_alive_carbon_g < shorter.keep_alive_carbon_g

    assert violations == 0


def test_inference_is_fast_and_deterministic(profile):
    rng = np.random.default_rng(0)
    net = QNetwork([state_dim(5), 64, 64, 5], rng)
    stats = NormStats(mem_mean=512, mem_std=200, cpu_mean=1, cpu_std=0.5, ci_mean=300, ci_std=100, log_cold_mean=6, log_cold_std=1)
    policy = AgentPolicy(net, stats, ACTIONS)

    contexts = [
        DecisionContext(
            pod_id="p",
            function_id="f",
            ts_ms=i,
            p_k=np.sort(rng.random(5)),
            cpu_cores=float(rng.uniform(0.5, 2)),
            mem_mb=float(rng.uniform(128, 1024)),
            l_cold_ms=float(rng.uniform(100, 1000)),
            ci_now=float(rng.uniform(50, 800)),
            lambda_carbon=0.5,
            action_set_s=tuple(ACTIONS),
            profile=profile,
        )
        for i in range(64_000)
    ]

    start = time.perf_counter()
    first = [policy.decide(ctx) for ctx in contexts]
    elapsed = time.perf_counter() - start

    assert elapsed / len(contexts) < 1e-3
    assert first == [policy.decide(ctx) for ctx in contexts]
    assert np.array_equal(encode(contexts[0], stats), encode(contexts[0], stats))


def share(outcomes, action) -> float:
    return sum(o.action_s == action for o in outcomes) / len(outcomes)


@pytest.mark.slow
def test_agent_learns_two_arm_environment(tmp_path):
    cfg = experiment(
        tmp_path,
        {"arrival_model": "deterministic", "interval_s": 10, "duration_s": 600, "n_functions": 2, "n_pods_per_function": 5},
        sim={"action_set_s": [1, 30]},
        train={"episodes": 100, "lr": 0.002, "gamma": 0.5, "eps_decay": 0.93, "lambda_grid": [0.0, 1.0]},
    )
    workload = controller.prepare_workload(cfg)

    model = controller.train_agent(cfg, workload)
    policy = AgentPolicy(model.net, model.stats, model.action_set_s)

    _, latency_first = run(workload.evaluation, policy, workload.sim.with_lambda(0.0))
    _, carbon_first = run(workload.evaluation, policy, workload.sim.with_lambda(1.0))

    assert share(latency_first, 30.0) >= 0.95
    assert share(carbon_first, 1.0) >= 0.95


@pytest.mark.slow
def test_agent_close_to_oracle_on_bimodal_trace(tmp_path):
    cfg = experiment(
        tmp_path,
        {"arrival_model": "bimodal", "duration_s": 7200, "n_functions": 4, "n_pods_per_function": 5, "period_s": 600},
        sim={"lambda_carbon": 0.5},
        train={"episodes": 150, "lambda_grid": [0.5]},
    )

    result = controller.oracle_gap_run(cfg)
    rows = {row.metric: row for row in result.rows}

    assert abs(rows["keep_alive_carbon_g"].gap_pct) <= 25
    assert abs(rows["cold_start_count"].gap_pct) <= 25


@pytest.mark.slow
def test_lambda_sensitivity_trend(tmp_path):
    cfg = experiment(
        tmp_path,
        {"arrival_model": "bimodal", "duration_s": 3600, "n_functions": 4, "n_pods_per_function": 5, "period_s": 600},
        train={"episodes": 80},
    )
    cfg.policy.name = PolicyName.rl
    grid = [0.1, 0.3, 0.5, 0.7, 0.9]

    rows = controller.sweep(cfg, grid)

    assert spearman(grid, [row.keep_alive_carbon_g for row in rows]) <= -0.8
    assert spearman(grid, [row.cold_start_count for row in rows]) >= 0.8


@pytest.mark.slow
def test_agent_keeps_pods_longer_in_clean_hours(tmp_path):
    cfg = experiment(
        tmp_path,
        {"arrival_model": "poisson", "rate_hz": 0.05, "duration_s": 14_400, "n_functions": 4, "n_pods_per_function": 5},
        sim={"lambda_carbon": 0.5},
        carbon={"alternating": [50, 800]},
        train={"episodes": 80, "lambda_grid": [0.5]},
    )
    workload = controller.prepare_workload(cfg)

    model = controller.train_agent(cfg, workload)
    _, outcomes = run(workload.evaluation, AgentPolicy(model.net, model.stats, model.action_set_s), workload.sim)
    buckets = decision_intensity_profile(outcomes, workload.sim.timeline, workload.sim.offset_ms)

    def mean_action(ci):
        chosen = [b for b in buckets if b.ci_g_per_kwh == ci]
        return sum(b.mean_action_s * b.decisions for b in chosen) / sum(b.decisions for b in chosen)

    assert len(outcomes) >= 1000
    assert mean_action(50) > mean_action(800)
