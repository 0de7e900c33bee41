"""Level-K policy hierarchies trained by one-step, on-policy, semi-batch SARSA.

Each level-k policy is the best response, learned as a single-agent RL
problem, to an environment that contains the opponents frozen at level k-1.
Level-0 policies are scenario-supplied priors.  Training rolls the iterated
game itself (`netform.rollout`) with the trainee acting epsilon-greedily;
per-episode transition batches are turned into one averaged TD update against
the pre-update network.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Mapping

import numpy as np

from . import neural
from .netform import Decision, IteratedGame, ParentValues, Policy, rollout


@dataclass(frozen=True)
class FeatureEncoder:
    """Maps a decision node's parent values to a fixed-length feature vector."""

    dim: int
    fn: Callable[[ParentValues], np.ndarray]

    def __call__(self, parent_values: ParentValues) -> np.ndarray:
        return self.fn(parent_values)


@dataclass(frozen=True)
class PriorPolicy:
    """A level-0 policy: a fixed decision rule plus the player's encoding.

    The encoder and action count describe the player's interface for the
    levels trained on top of this prior.
    """

    name: str
    action_count: int
    encoder: FeatureEncoder
    fn: Policy

    def __call__(self, parent_values: ParentValues, rng: np.random.Generator) -> int:
        return self.fn(parent_values, rng)

    def greedy_copy(self) -> "PriorPolicy":
        return self


@dataclass
class QPolicy:
    """Epsilon-greedy policy over a discrete action set backed by a Q network."""

    spec: neural.NetworkSpec
    params: neural.NetworkParams
    epsilon: float
    encoder: FeatureEncoder
    action_count: int

    def __post_init__(self):
        if self.action_count != self.spec.output_dim:
            raise ValueError("action_count must equal the network output_dim")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must be in [0, 1], got {self.epsilon}")

    def q_values(self, features: np.ndarray) -> np.ndarray:
        return neural.forward(self.params, features)

    def __call__(self, parent_values: ParentValues, rng: np.random.Generator) -> int:
        return select_action(self, self.encoder(parent_values), rng)

    def greedy_copy(self) -> "QPolicy":
        return QPolicy(self.spec, self.params, 0.0, self.encoder, self.action_count)


@dataclass(frozen=True)
class TrainConfig:
    """SARSA hyperparameters.  `horizon=None` trains on the game's own horizon;
    `seed` is bookkeeping for manifests, not consumed here."""

    episodes: int = 3000
    horizon: int | None = None
    gamma: float = 0.95
    learning_rate: float = 0.1
    epsilon_start: float = 0.5
    epsilon_end: float = 0.01
    epsilon_decay: float = 0.999
    epsilon_eval: float = 0.0
    optimistic_bias: float = 0.0
    init_scale: float = 0.1
    hidden_layers: tuple[int, ...] = (16, 16)
    seed: int | None = None

    def __post_init__(self):
        if self.episodes < 0:
            raise ValueError("episodes must be >= 0")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must be in [0, 1), got {self.gamma}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        for name in ("epsilon_start", "epsilon_end", "epsilon_eval"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {value}")
        if self.epsilon_end > self.epsilon_start:
            raise ValueError("epsilon_end must not exceed epsilon_start")
        if not 0.0 <= self.epsilon_decay <= 1.0:
            raise ValueError("epsilon_decay must be in [0, 1]")


@dataclass(frozen=True)
class Transition:
    s: np.ndarray
    a: int
    r: float
    s_next: np.ndarray
    a_next: int
    terminal: bool


class TrainingDiverged(RuntimeError):
    """Raised when Q-values or parameters stop being finite during training."""


def epsilon_schedule(episode_index: int, config: TrainConfig) -> float:
    """Exponential interpolation from epsilon_start toward epsilon_end."""
    gap = config.epsilon_start - config.epsilon_end
    return config.epsilon_end + gap * config.epsilon_decay ** episode_index


def select_action(policy: QPolicy, features: np.ndarray,
                  rng: np.random.Generator) -> int:
    """Argmax of the Q-values (ties to the lowest index) with probability
    1 - epsilon, otherwise uniform over all actions."""
    if policy.epsilon > 0.0 and rng.random() < policy.epsilon:
        return int(rng.integers(policy.action_count))
    return int(np.argmax(policy.q_values(features)))


def semi_batch_update(params: neural.NetworkParams, transitions: list[Transition],
                      gamma: float, learning_rate: float) -> neural.NetworkParams:
    """One averaged TD update for a whole episode.

    Every target r + gamma * Q(s', a') (r alone on the terminal transition) is
    computed against the pre-update network; the per-transition gradients are
    averaged and applied in a single step.
    """
    if not transitions:
        return params
    total = np.zeros(params.to_vector().shape)
    for tr in transitions:
        if tr.terminal:
            target = tr.r
        else:
            target = tr.r + gamma * float(neural.forward(params, tr.s_next)[tr.a_next])
        if not math.isfinite(target):
            raise TrainingDiverged(f"non-finite TD target {target!r}")
        total += neural.td_gradient(params, tr.s, tr.a, target)
    return neural.apply_update(params, total / len(transitions), learning_rate)


class _RecordingPolicy:
    """Wraps the trainee: plays epsilon-greedy and logs (features, action)."""

    def __init__(self, policy: QPolicy):
        self.policy = policy
        self.records: list[tuple[np.ndarray, int]] = []

    def __call__(self, parent_values: ParentValues, rng: np.random.Generator) -> int:
        features = self.policy.encoder(parent_values)
        action = select_action(self.policy, features, rng)
        self.records.append((features, action))
        return action


def _count_base_decisions(game: IteratedGame, player: str) -> int:
    return sum(1 for node in game.base.nodes
               if isinstance(node.kind, Decision) and node.kind.owner == player)


def episode_transitions(records: list[tuple[np.ndarray, int]],
                        rewards: list[float]) -> list[Transition]:
    """Pair consecutive decision points into SARSA transitions.

    The decision recorded at slice t earns the reward evaluated on slice t+1
    (its consequences land there); the final decision of the episode has no
    in-horizon consequence and only appears as the bootstrap (s', a') of the
    terminal transition, whose target is the bare reward.
    """
    steps = len(rewards)
    if len(records) != steps:
        raise ValueError(f"{len(records)} decision records for {steps} slices")
    transitions = []
    for i in range(steps - 1):
        s, a = records[i]
        s_next, a_next = records[i + 1]
        transitions.append(Transition(s, a, rewards[i + 1], s_next, a_next,
                                      terminal=(i == steps - 2)))
    return transitions


def train_level(game: IteratedGame, trainee: str,
                opponents: Mapping[str, Policy],
                level0s: Mapping[str, PriorPolicy | QPolicy],
                config: TrainConfig, rng: np.random.Generator) -> QPolicy:
    """Train one player's next-level policy against frozen opponents.

    The trainee's action set and feature encoding are taken from its level-0
    prior.  Opponent policy objects are consulted but never modified.
    """
    prior = level0s[trainee]
    spec = neural.NetworkSpec(prior.encoder.dim, config.hidden_layers,
                              prior.action_count)
    params = neural.init(spec, config.init_scale, config.optimistic_bias, rng)
    policy = QPolicy(spec, params, config.epsilon_start, prior.encoder,
                     prior.action_count)
    train_game = game if config.horizon is None else replace(game, horizon=config.horizon)
    base_skip = _count_base_decisions(train_game, trainee)
    for episode in range(config.episodes):
        policy.epsilon = epsilon_schedule(episode, config)
        recorder = _RecordingPolicy(policy)
        policies: dict[str, Policy] = dict(opponents)
        policies[trainee] = recorder
        trajectory = rollout(train_game, policies, rng)
        transitions = episode_transitions(recorder.records[base_skip:],
                                          trajectory.rewards[trainee])
        try:
            policy.params = semi_batch_update(policy.params, transitions,
                                              config.gamma, config.learning_rate)
        except (TrainingDiverged, ValueError) as exc:
            raise TrainingDiverged(
                f"training diverged for '{trainee}' at episode {episode}: {exc}"
            ) from exc
        if not policy.params.all_finite():
            raise TrainingDiverged(
                f"training diverged for '{trainee}' at episode {episode}: "
                "non-finite parameters")
    policy.epsilon = config.epsilon_eval
    return policy


@dataclass
class LevelKHierarchy:
    """Per player, the list of policies indexed by level 0..K."""

    levels: dict[str, list[PriorPolicy | QPolicy]]

    def policy(self, player: str, level: int) -> PriorPolicy | QPolicy:
        return self.levels[player][level]

    @property
    def max_level(self) -> int:
        return min(len(v) for v in self.levels.values()) - 1


def build_hierarchy(game: IteratedGame,
                    level0s: Mapping[str, PriorPolicy | QPolicy],
                    k_max: int,
                    config: TrainConfig | Mapping[str, TrainConfig],
                    rng: np.random.Generator) -> LevelKHierarchy:
    """Train levels 1..k_max for every player of the kernel net.

    Within a level, players train in the kernel net's player order, each
    against the opponent's stored level k-1 policy; a policy is trained once
    and shared by every higher level that imagines it.  Each run gets its own
    generator seeded from `rng`, so runs at the same level are independent.
    """
    players = game.kernel.players
    if isinstance(config, Mapping):
        configs = dict(config)
    else:
        configs = {player: config for player in players}
    levels: dict[str, list[PriorPolicy | QPolicy]] = {
        player: [level0s[player]] for player in players}
    for level in range(1, k_max + 1):
        for player in players:
            opponents = {other: levels[other][level - 1]
                         for other in players if other != player}
            child = np.random.default_rng(int(rng.integers(np.iinfo(np.int64).max)))
            levels[player].append(
                train_level(game, player, opponents, level0s, configs[player], child))
    return LevelKHierarchy(levels)


@dataclass
class EvalReport:
    episodes: int
    horizon: int
    mean_reward_per_step: dict[str, float]
    per_episode: dict[str, list[float]]

    def std(self, player: str) -> float:
        return float(np.std(self.per_episode[player]))


def evaluate(game: IteratedGame, policies: Mapping[str, PriorPolicy | QPolicy],
             episodes: int, rng: np.random.Generator) -> EvalReport:
    """Average reward per step over independent greedy rollouts.

    Policies are coerced to their greedy (epsilon = 0) copies; per-episode
    means are kept for variance reporting.
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    greedy = {player: policy.greedy_copy() for player, policy in policies.items()}
    per_episode: dict[str, list[float]] = {player: [] for player in game.rewards}
    for _ in range(episodes):
        trajectory = rollout(game, greedy, rng)
        for player, rewards in trajectory.rewards.items():
            per_episode[player].append(sum(rewards) / game.horizon)
    means = {player: sum(values) / episodes
             for player, values in per_episode.items()}
    return EvalReport(episodes, game.horizon, means, per_episode)
