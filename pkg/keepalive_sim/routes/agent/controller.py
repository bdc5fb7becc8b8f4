import json
import logging
import math
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from pydantic import ValidationError
from util.exception import DataError, DivergenceError
from util.files import atomic_write_text, read_text

from ..carbon.controller import ci_at
from ..engine.controller import ensure_scales, run
from ..engine.model import Resolution, SimConfig
from ..policies.controller import cost_vectors, weighted_cost
from ..policies.model import DecisionContext, KeepAlivePolicy
from ..trace.controller import fingerprint
from ..trace.model import Invocation, TraceSplit
from .buffer import ReplayBuffer, Transition
from .model import (
    MODEL_FORMAT_VERSION,
    ModelFile,
    NormStats,
    RewardMode,
    TrainConfig,
    TrainedModel,
    TrainingLogRow,
)
from .network import QNetwork

logger = logging.getLogger(__name__)

EXTRA_FEATURES = 5  # mem, cpu, cold latency, intensity, lambda


def state_dim(n_actions: int) -> int:
    return n_actions + EXTRA_FEATURES


def _mean_std(values: np.ndarray) -> tuple[float, float]:
    std = float(np.std(values))
    return float(np.mean(values)), std if std > 0 else 1.0


def fit_norm_stats(invocations: Sequence[Invocation], cfg: SimConfig) -> NormStats:
    """Standardization statistics from the training invocations only"""
    if not invocations:
        raise DataError("normalization statistics need a nonempty training split")

    offset = cfg.offset_ms
    mem = np.array([i.mem_mb for i in invocations])
    cpu = np.array([i.cpu_cores for i in invocations])
    ci = np.array([ci_at(cfg.timeline, offset + i.ts_ms) for i in invocations])
    log_cold = np.log1p([i.cold_ms for i in invocations])

    mem_mean, mem_std = _mean_std(mem)
    cpu_mean, cpu_std = _mean_std(cpu)
    ci_mean, ci_std = _mean_std(ci)
    cold_mean, cold_std = _mean_std(log_cold)

    return NormStats(
        mem_mean=mem_mean,
        mem_std=mem_std,
        cpu_mean=cpu_mean,
        cpu_std=cpu_std,
        ci_mean=ci_mean,
        ci_std=ci_std,
        log_cold_mean=cold_mean,
        log_cold_std=cold_std,
    )


def encode(ctx: DecisionContext, stats: NormStats) -> np.ndarray:
    """[p_k..., mem, cpu, log1p(L_cold), ci, lambda], standardized where noted"""
    state = np.concatenate(
        [
            np.asarray(ctx.p_k, dtype=np.float64),
            [
                (ctx.mem_mb - stats.mem_mean) / stats.mem_std,
                (ctx.cpu_cores - stats.cpu_mean) / stats.cpu_std,
                (math.log1p(ctx.l_cold_ms) - stats.log_cold_mean) / stats.log_cold_std,
                (ctx.ci_now - stats.ci_mean) / stats.ci_std,
                ctx.lambda_carbon,
            ],
        ]
    )

    if not np.all(np.isfinite(state)):
        raise ValueError(f"non-finite state feature for pod '{ctx.pod_id}': {state.tolist()}")

    return state


def select_action(net: QNetwork, state: np.ndarray, eps: float, rng: Optional[np.random.Generator]) -> int:
    # rng is only consulted when exploring is possible
    if eps > 0 and rng.random() < eps:
        return int(rng.integers(net.n_actions))
    return int(np.argmax(net.forward(state)))


def td_step(net: QNetwork, target: QNetwork, batch: Sequence[Transition], cfg: TrainConfig) -> float:
    """One SGD step on the squared TD error, returns the pre-update loss"""
    if not batch:
        raise ValueError("td_step needs a nonempty batch")

    states = np.stack([t.state for t in batch])
    actions = np.array([t.action for t in batch])
    rewards = np.array([t.reward for t in batch])
    next_states = np.stack([t.next_state for t in batch])
    live = np.array([0.0 if t.terminal else 1.0 for t in batch])

    targets = rewards + cfg.gamma * live * target.forward(next_states).max(axis=1)

    loss, grad_w, grad_b = net.gradients(states, actions, targets)

    if not math.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grad_w + grad_b):
        raise DivergenceError(f"training diverged: non-finite TD loss ({loss})")

    net.apply(grad_w, grad_b, cfg.lr)
    return loss


class AgentLearner(KeepAlivePolicy):
    """DQN agent inside the engine loop

    A decision becomes a transition once its outcome resolves: the reward
    arrives through `feedback`, the next state is the pod's next decision
    state (or the trace end, committed as terminal).
    """

    name = "rl"

    def __init__(
        self,
        net: QNetwork,
        target: QNetwork,
        buffer: ReplayBuffer,
        stats: NormStats,
        cfg: TrainConfig,
        rng: np.random.Generator,
    ):
        self.net = net
        self.target = target
        self.buffer = buffer
        self.stats = stats
        self.cfg = cfg
        self.rng = rng
        self.epsilon = cfg.eps_start
        self.steps = 0
        self.losses: list[float] = []
        self.rewards: list[float] = []
        self._pending: dict[str, list] = {}
        self._sim: Optional[SimConfig] = None

    def reset(self, cfg: SimConfig) -> None:
        self._sim = cfg
        self._pending = {}
        self.losses = []
        self.rewards = []

    def _reward(self, cold_ms: float, carbon_g: float) -> float:
        sim = self._sim
        return -weighted_cost(sim.lambda_carbon, sim.sigma_l, sim.sigma_c, cold_ms, carbon_g)

    def _commit(self, transition: Transition) -> None:
        self.buffer.push(transition)
        self.rewards.append(transition.reward)
        self.steps += 1

        if len(self.buffer) >= self.cfg.batch:
            batch = self.buffer.sample(self.cfg.batch, self.rng)
            self.losses.append(td_step(self.net, self.target, batch, self.cfg))

        if self.steps % self.cfg.target_sync_interval == 0:
            self.target.copy_from(self.net)

    def feedback(self, resolution: Resolution) -> None:
        entry = self._pending.get(resolution.pod_id)
        if entry is None:
            return

        state, action, expected = entry[0], entry[1], entry[2]
        if self.cfg.reward_mode is RewardMode.expected:
            reward = expected
        else:
            cold_ms = resolution.cold_ms if resolution.was_cold else 0.0
            reward = self._reward(cold_ms, resolution.idle_g)

        if resolution.terminal:
            del self._pending[resolution.pod_id]
            self._commit(Transition(state, action, reward, state, True))
        else:
            entry[3] = reward

    def decide(self, ctx: DecisionContext) -> float:
        state = encode(ctx, self.stats)

        entry = self._pending.get(ctx.pod_id)
        if entry is not None and entry[3] is not None:
            self._commit(Transition(entry[0], entry[1], entry[3], state, False))

        action = select_action(self.net, state, self.epsilon, self.rng)

        expected = None
        if self.cfg.reward_mode is RewardMode.expected:
            c_cold, c_carbon = cost_vectors(ctx)
            expected = self._reward(float(c_cold[action]), float(c_carbon[action]))

        self._pending[ctx.pod_id] = [state, action, expected, None]
        return ctx.action_set_s[action]


class AgentPolicy(KeepAlivePolicy):
    """Greedy inference with a trained network"""

    name = "rl"

    def __init__(self, net: QNetwork, stats: NormStats, action_set_s: Sequence[float]):
        self.net = net
        self.stats = stats
        self.action_set_s = [float(a) for a in action_set_s]

    def reset(self, cfg: SimConfig) -> None:
        if list(cfg.action_set_s) != self.action_set_s:
            raise DataError(
                f"model was trained for actions {self.action_set_s}, run uses {list(cfg.action_set_s)}"
            )

    def decide(self, ctx: DecisionContext) -> float:
        return ctx.action_set_s[select_action(self.net, encode(ctx, self.stats), 0.0, None)]


def _validation_reward(
    policy: AgentPolicy, invocations: Sequence[Invocation], cfg: SimConfig, grid: Sequence[float], trace_id: str
) -> float:
    # Mean over the lambda grid of the negated weighted cost
    costs = [run(invocations, policy, cfg.with_lambda(lam), trace_id)[0].weighted_cost for lam in grid]
    return -math.fsum(costs) / len(costs)


def train(
    split: TraceSplit,
    cfg: TrainConfig,
    sim_cfg: SimConfig,
    log: Optional[list[TrainingLogRow]] = None,
) -> TrainedModel:
    """Offline DQN training over the training partition

    One episode is one pass of the training trace through the engine. The
    weights scoring best on the validation partition are returned. `log`, when
    given, is filled row by row so a caller still has it after a failure.
    """
    if not split.train:
        raise DataError("training needs a nonempty training split")

    log = log if log is not None else []
    sim_cfg = ensure_scales(split.train, sim_cfg)
    stats = fit_norm_stats(split.train, sim_cfg)

    validation = split.validation
    if not validation:
        logger.warning("Validation split is empty, validating on the training split")
        validation = split.train

    train_id = fingerprint(split.train)
    validation_id = fingerprint(validation)
    actions = list(sim_cfg.action_set_s)
    grid = sorted(set(cfg.lambda_grid))

    rng = np.random.default_rng(cfg.seed if cfg.seed is not None else 0)
    net = QNetwork([state_dim(len(actions)), *cfg.hidden, len(actions)], rng)
    target = net.copy()
    learner = AgentLearner(net, target, ReplayBuffer(cfg.capacity), stats, cfg, rng)

    best_net, best_reward, best_episode = net.copy(), -math.inf, -1

    for episode in range(cfg.episodes):
        learner.epsilon = cfg.epsilon(episode)
        lam = grid[int(rng.integers(len(grid)))]
        steps_before = learner.steps

        report, _ = run(split.train, learner, sim_cfg.with_lambda(lam), train_id)

        validation_reward = _validation_reward(
            AgentPolicy(net, stats, actions), validation, sim_cfg, grid, validation_id
        )
        if validation_reward > best_reward:
            best_net, best_reward, best_episode = net.copy(), validation_reward, episode

        row = TrainingLogRow(
            episode=episode,
            epsilon=learner.epsilon,
            lambda_carbon=lam,
            transitions=learner.steps - steps_before,
            updates=len(learner.losses),
            mean_loss=math.fsum(learner.losses) / len(learner.losses) if learner.losses else 0.0,
            train_reward=math.fsum(learner.rewards),
            validation_reward=validation_reward,
            cold_starts=report.cold_start_count,
            keep_alive_carbon_g=report.keep_alive_carbon_g,
        )
        log.append(row)

        logger.info(
            f"Episode {episode + 1}/{cfg.episodes}: eps={row.epsilon:.3f} lambda={lam:g} "
            f"loss={row.mean_loss:.6g} validation={validation_reward:.6g}"
        )

    return TrainedModel(
        net=best_net,
        stats=stats,
        action_set_s=actions,
        sigma_l=sim_cfg.sigma_l,
        sigma_c=sim_cfg.sigma_c,
        log=log,
        best_episode=best_episode,
    )


def save_model(model: TrainedModel, path: str | Path) -> Path:
    document = ModelFile(
        format_version=MODEL_FORMAT_VERSION,
        layer_sizes=model.net.layer_sizes,
        weights=[w.tolist() for w in model.net.weights],
        biases=[b.tolist() for b in model.net.biases],
        norm=model.stats,
        action_set_s=model.action_set_s,
        sigma_l=model.sigma_l,
        sigma_c=model.sigma_c,
    )
    return atomic_write_text(path, document.json() + "\n")


def load_model(path: str | Path, action_set_s: Optional[Sequence[float]] = None) -> TrainedModel:
    content = read_text(path, "model file")

    try:
        raw = json.loads(content)
    except json.JSONDecodeError as e:
        raise DataError(f"model file {path} is corrupt or truncated: {e}")

    if not isinstance(raw, dict):
        raise DataError(f"model file {path} is corrupt: expected a JSON object")

    version = raw.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise DataError(f"model file {path} has format version {version}, expected {MODEL_FORMAT_VERSION}")

    try:
        document = ModelFile.parse_obj(raw)
        net = QNetwork(document.layer_sizes, weights=document.weights, biases=document.biases)
    except (ValidationError, ValueError) as e:
        raise DataError(f"model file {path} is corrupt: {e}")

    if net.n_actions != len(document.action_set_s) or net.n_inputs != state_dim(net.n_actions):
        raise DataError(f"model file {path} is corrupt: layer sizes do not match its action set")

    if action_set_s is not None and len(action_set_s) != net.n_actions:
        raise DataError(
            f"model file {path} has {net.n_actions} actions but the configuration has {len(action_set_s)}"
        )

    return TrainedModel(
        net=net,
        stats=document.norm,
        action_set_s=document.action_set_s,
        sigma_l=document.sigma_l,
        sigma_c=document.sigma_c,
    )
