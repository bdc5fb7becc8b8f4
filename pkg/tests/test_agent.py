import json

import numpy as np
import pytest
from routes.agent.buffer import ReplayBuffer, Transition
from routes.agent.controller import (
    AgentLearner,
    AgentPolicy,
    encode,
    fit_norm_stats,
    load_model,
    save_model,
    select_action,
    state_dim,
    td_step,
    train,
)
from routes.agent.model import NormStats, RewardMode, TrainConfig, TrainedModel
from routes.agent.network import QNetwork, relu
from routes.engine.controller import run
from routes.engine.model import Resolution
from routes.policies.controller import cost_vectors, weighted_cost
from routes.policies.model import DecisionContext
from routes.trace.controller import generate_trace, split_by_pod
from routes.trace.model import ArrivalModel, SyntheticSpec
from util.exception import DataError, DivergenceError

UNIT_STATS = NormStats(
    mem_mean=0, mem_std=1, cpu_mean=0, cpu_std=1, ci_mean=0, ci_std=1, log_cold_mean=0, log_cold_std=1
)


def ctx(profile, **values) -> DecisionContext:
    defaults = dict(
        pod_id="p1",
        function_id="f1",
        ts_ms=0,
        p_k=np.array([0.1, 0.5, 0.9]),
        cpu_cores=1.0,
        mem_mb=128.0,
        l_cold_ms=400.0,
        ci_now=300.0,
        lambda_carbon=0.5,
        action_set_s=(1.0, 10.0, 60.0),
        profile=profile,
    )
    defaults.update(values)
    return DecisionContext(**defaults)


def straight_line_forward(net: QNetwork, x: np.ndarray) -> np.ndarray:
    out = x
    for i in range(len(net.weights)):
        z = np.zeros(net.weights[i].shape[1])
        for j in range(net.weights[i].shape[1]):
            z[j] = sum(out[k] * net.weights[i][k, j] for k in range(len(out))) + net.biases[i][j]
        out = z if i == len(net.weights) - 1 else np.maximum(z, 0)
    return out


def test_encode(profile):
    stats = NormStats(
        mem_mean=128, mem_std=10, cpu_mean=1, cpu_std=0.5, ci_mean=300, ci_std=50, log_cold_mean=2, log_cold_std=3
    )

    state = encode(ctx(profile), stats)

    assert state.shape == (state_dim(3),)
    assert state[:3].tolist() == [0.1, 0.5, 0.9]
    assert state[3] == 0 and state[4] == 0 and state[6] == 0
    assert state[7] == 0.5
    assert np.array_equal(state, encode(ctx(profile), stats))
    assert encode(ctx(profile, l_cold_ms=0.0), UNIT_STATS)[5] == 0.0


def test_encode_rejects_non_finite(profile):
    with pytest.raises(ValueError, match="non-finite"):
        encode(ctx(profile, ci_now=float("inf")), UNIT_STATS)


def test_fit_norm_stats_uses_training_values(sim_cfg, make_invocation):
    trace = [make_invocation(0, mem_mb=100), make_invocation(1, mem_mb=300)]

    stats = fit_norm_stats(trace, sim_cfg)

    assert stats.mem_mean == 200 and stats.mem_std == 100
    # constant features keep unit scale
    assert stats.cpu_std == 1.0 and stats.ci_std == 1.0

    with pytest.raises(DataError):
        fit_norm_stats([], sim_cfg)


def test_forward_basics():
    zero = QNetwork([4, 3, 2], weights=[np.zeros((4, 3)), np.zeros((3, 2))])
    identity = QNetwork([1, 1], weights=[np.ones((1, 1))])

    assert zero.forward(np.array([1.0, -2.0, 3.0, 4.0])).tolist() == [0.0, 0.0]
    assert identity.forward(np.array([-3.5])).tolist() == [-3.5]
    assert relu(np.array([-1.0, 2.0])).tolist() == [0.0, 2.0]


def test_forward_matches_straight_line_version():
    rng = np.random.default_rng(3)
    net = QNetwork([6, 8, 5, 3], rng)
    net.biases = [rng.normal(size=b.shape) for b in net.biases]
    x = rng.normal(size=6)

    assert np.allclose(net.forward(x), straight_line_forward(net, x), rtol=0, atol=1e-12)


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(17)
    eps = 1e-5

    worst = 0.0
    for _ in range(10):
        sizes = [int(rng.integers(2, 6)), int(rng.integers(2, 6)), int(rng.integers(2, 6)), int(rng.integers(2, 4))]
        net = QNetwork(sizes, rng)
        net.biases = [rng.normal(0, 0.1, size=b.shape) for b in net.biases]
        states = rng.normal(size=(6, sizes[0]))
        actions = rng.integers(sizes[-1], size=6)
        targets = rng.normal(size=6)

        _, grad_w, grad_b = net.gradients(states, actions, targets)

        for params, grads in ((net.weights, grad_w), (net.biases, grad_b)):
            for param, grad in zip(params, grads):
                numeric = np.zeros_like(param)
                for index in np.ndindex(param.shape):
                    original = param[index]
                    param[index] = original + eps
                    up = net.loss(states, actions, targets)
                    param[index] = original - eps
                    down = net.loss(states, actions, targets)
                    param[index] = original
                    numeric[index] = (up - down) / (2 * eps)

                error = np.abs(grad - numeric) / np.maximum(np.abs(grad) + np.abs(numeric), 1e-4)
                worst = max(worst, float(error.max()))

    assert worst < 1e-4


def test_td_step_terminal_loss():
    net = QNetwork([2, 3, 2], weights=[np.zeros((2, 3)), np.zeros((3, 2))])
    state = np.array([0.5, -0.5])
    batch = [Transition(state, 1, -1.0, state, True)]

    assert td_step(net, net.copy(), batch, TrainConfig()) == 1.0

    with pytest.raises(ValueError):
        td_step(net, net.copy(), [], TrainConfig())


def test_td_step_converges_to_target():
    net = QNetwork([3, 2], np.random.default_rng(0))
    state = np.array([1.0, 0.5, -0.5])
    batch = [Transition(state, 0, 2.5, state, True)]
    cfg = TrainConfig(lr=0.01)

    for _ in range(2000):
        td_step(net, net.copy(), batch, cfg)

    assert abs(net.forward(state)[0] - 2.5) < 1e-3


def test_td_step_divergence():
    net = QNetwork([2, 2], weights=[np.full((2, 2), 1e200)])
    state = np.array([1e200, 1e200])

    with pytest.raises(DivergenceError):
        td_step(net, net.copy(), [Transition(state, 0, 0.0, state, False)], TrainConfig())


def test_select_action():
    net = QNetwork([2, 3], weights=[np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 0.0]])])
    flat = QNetwork([2, 3], weights=[np.zeros((2, 3))])
    state = np.array([1.0, 0.0])

    assert select_action(net, state, 0.0, None) == 1
    assert select_action(flat, state, 0.0, None) == 0

    rng = np.random.default_rng(8)
    counts = np.bincount([select_action(net, state, 1.0, rng) for _ in range(10_000)], minlength=3)
    sigma = np.sqrt(10_000 * (1 / 3) * (2 / 3))
    assert np.all(np.abs(counts - 10_000 / 3) < 3 * sigma)


def test_replay_buffer_evicts_oldest():
    buffer = ReplayBuffer(3)
    state = np.zeros(1)
    buffer.push(Transition(state, 0, 0.0, state, False))

    assert len(buffer) == 1
    assert [t.reward for t in buffer.oldest_first()] == [0.0]
    assert [t.reward for t in buffer.sample(5, np.random.default_rng(0))] == [0.0]

    for reward in range(1, 5):
        buffer.push(Transition(state, 0, float(reward), state, False))

    assert len(buffer) == 3
    assert [t.reward for t in buffer.oldest_first()] == [2.0, 3.0, 4.0]
    # ring slots are overwritten in place
    assert [t.reward for t in buffer.memory] == [3.0, 4.0, 2.0]

    sample = buffer.sample(3, np.random.default_rng(0))
    assert sorted(t.reward for t in sample) == [2.0, 3.0, 4.0]


def test_epsilon_schedule():
    cfg = TrainConfig(eps_start=1.0, eps_decay=0.5, eps_min=0.1)

    assert [cfg.epsilon(e) for e in range(5)] == [1.0, 0.5, 0.25, 0.125, 0.1]


@pytest.fixture
def tiny_split():
    spec = SyntheticSpec(duration_s=600, n_functions=2, n_pods_per_function=5, rate_hz=0.05, seed=2)
    return split_by_pod(generate_trace(spec).invocations, (0.6, 0.2, 0.2), seed=1)


def tiny_train_cfg(**values) -> TrainConfig:
    defaults = dict(episodes=2, batch=8, capacity=500, hidden=[8], target_sync_interval=20, seed=5)
    defaults.update(values)
    return TrainConfig(**defaults)


def test_training_smoke_and_determinism(sim_cfg, tiny_split):
    first_log, second_log = [], []

    first = train(tiny_split, tiny_train_cfg(), sim_cfg, first_log)
    second = train(tiny_split, tiny_train_cfg(), sim_cfg, second_log)

    assert len(first_log) == 2
    assert first_log == second_log
    assert first.net.same_parameters(second.net)
    assert first_log[-1].updates > 0
    assert 0 <= first.best_episode < 2


def test_training_needs_train_split(sim_cfg, tiny_split):
    empty = tiny_split.copy(update={"train": []})

    with pytest.raises(DataError):
        train(empty, tiny_train_cfg(), sim_cfg)


def test_model_round_trip(tmp_path, sim_cfg, tiny_split):
    model = train(tiny_split, tiny_train_cfg(episodes=1), sim_cfg)
    path = save_model(model, tmp_path / "model.json")

    loaded = load_model(path, sim_cfg.action_set_s)

    states = np.random.default_rng(1).normal(size=(20, state_dim(5)))
    assert np.array_equal(loaded.net.forward(states), model.net.forward(states))
    assert loaded.stats == model.stats
    assert loaded.action_set_s == model.action_set_s

    # the agent runs greedily through the engine with the loaded weights
    report, _ = run(tiny_split.test, AgentPolicy(loaded.net, loaded.stats, loaded.action_set_s), sim_cfg)
    assert report.policy == "rl"


def test_model_file_errors(tmp_path):
    net = QNetwork([state_dim(5), 4, 5], np.random.default_rng(0))
    model = TrainedModel(net=net, stats=UNIT_STATS, action_set_s=[1, 5, 10, 30, 60], sigma_l=1.0, sigma_c=1.0)
    path = save_model(model, tmp_path / "model.json")

    truncated = tmp_path / "truncated.json"
    truncated.write_text(path.read_text()[:50])
    with pytest.raises(DataError, match="corrupt"):
        load_model(truncated)

    with pytest.raises(DataError, match="5 actions but the configuration has 2"):
        load_model(path, [1, 30])

    document = json.loads(path.read_text())
    document["format_version"] = 99
    old = tmp_path / "old.json"
    old.write_text(json.dumps(document))
    with pytest.raises(DataError, match="format version 99"):
        load_model(old)

    with pytest.raises(DataError, match="not found"):
        load_model(tmp_path / "missing.json")


LEARNER_STATS = NormStats(
    mem_mean=128, mem_std=64, cpu_mean=1, cpu_std=1, ci_mean=300, ci_std=200, log_cold_mean=6, log_cold_std=1
)


def learner(sim_cfg, **values) -> AgentLearner:
    net = QNetwork([state_dim(3), 3], np.random.default_rng(3))
    cfg = TrainConfig(**{"eps_start": 0.0, "batch": 64, "lr": 0.05, **values})
    agent = AgentLearner(net, net.copy(), ReplayBuffer(100), LEARNER_STATS, cfg, np.random.default_rng(4))
    agent.reset(sim_cfg)
    return agent


def resolution(pod="p1", was_cold=False, idle_g=0.0, cold_ms=400.0, terminal=False) -> Resolution:
    return Resolution(pod_id=pod, action_s=1.0, was_cold=was_cold, idle_s=1.0, idle_g=idle_g, cold_ms=cold_ms, terminal=terminal)


def test_target_network_syncs_on_interval(sim_cfg, profile):
    agent = learner(sim_cfg, batch=1, target_sync_interval=3)
    frozen = agent.target.copy()

    for step in range(1, 4):
        agent.decide(ctx(profile, ci_now=100.0 * step))
        agent.feedback(resolution(was_cold=True, idle_g=0.01, terminal=True))

        assert agent.steps == step
        if step < 3:
            assert agent.target.same_parameters(frozen)
            assert not agent.net.same_parameters(frozen)

    assert len(agent.losses) == 3
    assert agent.target.same_parameters(agent.net)
    assert not agent.target.same_parameters(frozen)


def test_learner_credits_decision_when_its_outcome_resolves(sim_cfg, profile):
    agent = learner(sim_cfg)
    first, second = ctx(profile, ci_now=200.0), ctx(profile, ci_now=600.0)

    agent.decide(first)
    agent.feedback(resolution(was_cold=True, idle_g=0.002))
    agent.feedback(resolution(pod="other", idle_g=1.0, terminal=True))

    assert len(agent.buffer) == 0

    agent.decide(second)
    [transition] = agent.buffer.oldest_first()

    assert np.array_equal(transition.state, encode(first, LEARNER_STATS))
    assert np.array_equal(transition.next_state, encode(second, LEARNER_STATS))
    assert transition.action == select_action(agent.net, encode(first, LEARNER_STATS), 0.0, None)
    assert transition.reward == pytest.approx(-(0.5 * 400.0 + 0.5 * 0.002))
    assert not transition.terminal

    agent.feedback(resolution(idle_g=0.01, terminal=True))
    last = agent.buffer.oldest_first()[-1]

    assert len(agent.buffer) == 2
    assert last.terminal
    assert np.array_equal(last.next_state, last.state)
    assert last.reward == pytest.approx(-0.5 * 0.01)
    assert agent.rewards == [transition.reward, last.reward]


def test_learner_expected_reward_mode(sim_cfg, profile):
    agent = learner(sim_cfg, reward_mode=RewardMode.expected)
    decision = ctx(profile)
    action = select_action(agent.net, encode(decision, LEARNER_STATS), 0.0, None)
    c_cold, c_carbon = cost_vectors(decision)

    agent.decide(decision)
    agent.feedback(resolution(was_cold=True, idle_g=5.0, terminal=True))

    [transition] = agent.buffer.oldest_first()
    assert transition.reward == pytest.approx(-weighted_cost(0.5, 1.0, 1.0, c_cold[action], c_carbon[action]))
