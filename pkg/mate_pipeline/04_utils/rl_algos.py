#!/usr/bin/env python3
"""
Off-Policy Learners on Memory Readouts
======================================

DDQN for discrete control and SAC (with the freeze-critic actor update) for
continuous control. Both sample whole episodes from a replay buffer, encode
them with the memory's sequence path and train the memory end to end through
the value loss. Rollouts use the memory's incremental step path.

Features at step t are [observation embedding of o_t, memory readout after
x_1..x_t]; t = 0 uses the empty-history readout.

Author: MATE Pipeline
Version: 1.0
"""

import copy
import logging
import math
import threading
from collections import deque
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from checkpoint_io import load_checkpoint, load_into, save_checkpoint
from cmdp_envs import BoxSpace, CmdpEnv, DiscreteSpace, EpisodeRecord, ScriptedPolicy, load_replay, save_replay
from errors import ConfigurationError, NumericError, UsageError
from memory_arch import Memory, build_transition, build_transitions
from nn_core import (AdamOptimizer, Dense, Module, Tensor, build_mlp, compute_gradients, concat,
                     hypersphere_project, minimum, no_grad)

logger = logging.getLogger(__name__)

LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0
HALF_LOG_TWO_PI = 0.5 * math.log(2.0 * math.pi)


# ----------------------------------------------------------------------
# configuration
# ----------------------------------------------------------------------
@dataclass
class TrainConfig:
    algo: str = "ddqn"
    gamma: float = 0.99
    tau: float = 0.001
    lr: float = 3e-5
    batch_size: int = 64
    buffer_size: int = 10000
    grad_clip: Optional[float] = 0.03
    episodes: int = 2000
    freeze_critic: bool = True
    alpha: float = 0.1
    epsilon_fraction: float = 0.1
    hidden_sizes: Tuple[int, ...] = (256, 256)
    max_batch_transitions: int = 65536
    seed: int = 0

    def __post_init__(self):
        checks = [
            ("train.algo", self.algo in ("ddqn", "sac"), "must be ddqn or sac"),
            ("train.gamma", 0.0 < self.gamma <= 1.0, "must lie in (0, 1]"),
            ("train.tau", 0.0 < self.tau <= 1.0, "must lie in (0, 1]"),
            ("train.lr", self.lr > 0, "must be positive"),
            ("train.batch_size", self.batch_size > 0, "must be positive"),
            ("train.buffer_size", self.buffer_size > 0, "must be positive"),
            ("train.grad_clip", self.grad_clip is None or self.grad_clip > 0, "must be positive or null"),
            ("train.episodes", self.episodes > 0, "must be positive"),
            ("train.alpha", self.alpha > 0, "must be positive"),
            ("train.epsilon_fraction", 0.0 <= self.epsilon_fraction <= 1.0, "must lie in [0, 1]"),
            ("train.max_batch_transitions", self.max_batch_transitions > 0, "must be positive"),
        ]
        for key, ok, message in checks:
            if not ok:
                raise ConfigurationError(f"{key} {message} (got {getattr(self, key.split('.')[1])!r})")
        self.hidden_sizes = tuple(self.hidden_sizes)


# ----------------------------------------------------------------------
# parameter plumbing
# ----------------------------------------------------------------------
def soft_update(target: Sequence[Tensor], online: Sequence[Tensor], tau: float) -> Sequence[Tensor]:
    """target <- (1 - tau) * target + tau * online, elementwise"""
    if not 0.0 <= tau <= 1.0:
        raise UsageError(f"tau must lie in [0, 1], got {tau}")
    if len(target) != len(online):
        raise UsageError(f"soft_update got {len(target)} target and {len(online)} online tensors")
    for t, o in zip(target, online):
        if t.data.shape != o.data.shape:
            raise UsageError(f"soft_update shape mismatch for '{t.name}': {t.data.shape} vs {o.data.shape}")
    for t, o in zip(target, online):
        t.data = ((1.0 - tau) * t.data + tau * o.data).astype(t.data.dtype, copy=False)
    return target


def copy_parameters(target: Sequence[Tensor], online: Sequence[Tensor]) -> Sequence[Tensor]:
    return soft_update(target, online, 1.0)


def epsilon_schedule(episode_idx: int, total_episodes: int, horizon: int, fraction: float = 0.1) -> float:
    """Linear from 1.0 to 1/T over the first `fraction` of training, then constant"""
    if total_episodes <= 0:
        raise UsageError(f"total_episodes must be positive, got {total_episodes}")
    final = 1.0 / horizon
    anneal = fraction * total_episodes
    if anneal <= 0 or episode_idx >= anneal:
        return final
    return 1.0 + (final - 1.0) * episode_idx / anneal


# ----------------------------------------------------------------------
# replay
# ----------------------------------------------------------------------
class ReplayBuffer:
    """Whole episodes, capacity counted in transitions, oldest episode evicted first"""

    def __init__(self, capacity: int):
        if capacity <= 0:
            raise ConfigurationError(f"train.buffer_size must be positive, got {capacity}")
        self.capacity = capacity
        self.episodes: deque = deque()
        self.transitions = 0
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self.episodes)

    def add(self, record: EpisodeRecord) -> None:
        if record.length > self.capacity:
            raise UsageError(f"Episode of {record.length} transitions exceeds buffer capacity {self.capacity}")
        with self._lock:
            self.episodes.append(record)
            self.transitions += record.length
            while self.transitions > self.capacity:
                evicted = self.episodes.popleft()
                self.transitions -= evicted.length

    def sample(self, batch_size: int, rng: np.random.Generator,
               max_transitions: Optional[int] = None) -> List[EpisodeRecord]:
        """Distinct episodes; the batch shrinks to respect max_transitions but keeps at least one"""
        if not self.episodes:
            raise UsageError("Cannot sample from an empty replay buffer")
        with self._lock:
            snapshot = list(self.episodes)
        count = min(batch_size, len(snapshot))
        picks = rng.choice(len(snapshot), size=count, replace=False)
        batch, total = [], 0
        for i in picks:
            record = snapshot[int(i)]
            if batch and max_transitions is not None and total + record.length > max_transitions:
                break
            batch.append(record)
            total += record.length
        return batch

    def save(self, path) -> None:
        with self._lock:
            save_replay(path, list(self.episodes))

    @classmethod
    def load(cls, path, capacity: int) -> "ReplayBuffer":
        buffer = cls(capacity)
        for record in load_replay(path):
            buffer.add(record)
        return buffer


@dataclass
class EpisodeBatch:
    """Episodes padded to the longest one; mask marks real steps"""
    transitions: np.ndarray
    observations: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    mask: np.ndarray
    lengths: np.ndarray

    @property
    def size(self) -> int:
        return len(self.lengths)

    @property
    def max_length(self) -> int:
        return self.rewards.shape[1]


def make_batch(records: Sequence[EpisodeRecord], action_space: Union[DiscreteSpace, BoxSpace],
               dtype=np.float64) -> EpisodeBatch:
    if not records:
        raise UsageError("Episode batch must be nonempty")
    lengths = np.array([r.length for r in records])
    B, L = len(records), int(lengths.max())
    obs_dim = records[0].observations.shape[1]
    action_shape = () if action_space.discrete else (action_space.dim,)
    observations = np.zeros((B, L + 1, obs_dim), dtype=dtype)
    actions = np.zeros((B, L) + action_shape, dtype=np.int64 if action_space.discrete else dtype)
    rewards = np.zeros((B, L), dtype=dtype)
    dones = np.zeros((B, L), dtype=dtype)
    mask = np.zeros((B, L), dtype=dtype)
    transitions = None
    for i, record in enumerate(records):
        n = record.length
        encoded = np.array([action_space.encode(a) for a in record.actions]).reshape(n, -1)
        x = build_transitions(record.observations, encoded, record.rewards)
        if transitions is None:
            transitions = np.zeros((B, L, x.shape[1]), dtype=dtype)
        transitions[i, :n] = x
        observations[i, :n + 1] = record.observations
        actions[i, :n] = record.actions
        rewards[i, :n] = record.rewards
        dones[i, :n] = record.dones
        mask[i, :n] = 1.0
    return EpisodeBatch(transitions, observations, actions, rewards, dones, mask, lengths)


# ----------------------------------------------------------------------
# networks
# ----------------------------------------------------------------------
class ObservationEmbedding(Module):
    def __init__(self, obs_dim: int, dim: int, rng: np.random.Generator, dtype=np.float64):
        self.dense = Dense(obs_dim, dim, "identity", rng, dtype, name="obs/dense")
        raw = rng.normal(0.0, 1.0, size=dim)
        self.psi = Tensor((raw / np.linalg.norm(raw)).astype(dtype), requires_grad=True, name="obs/psi")

    def named_parameters(self, prefix: str = "obs/") -> List[Tuple[str, Tensor]]:
        return self.dense.named_parameters(f"{prefix}dense/") + [(f"{prefix}psi", self.psi)]

    def __call__(self, obs: Tensor) -> Tensor:
        return hypersphere_project(self.dense(obs), self.psi)


class FeatureEncoder(Module):
    """Memory plus observation embedding; produces the features every head consumes"""

    def __init__(self, memory: Memory, obs_dim: int, obs_embed_dim: int, rng: np.random.Generator):
        self.memory = memory
        self.obs_embed = ObservationEmbedding(obs_dim, obs_embed_dim, rng, memory.dtype)
        self.feature_dim = memory.dim + obs_embed_dim
        self.workers = 1

    def named_parameters(self, prefix: str = "") -> List[Tuple[str, Tensor]]:
        return ([(f"{prefix}{n}", p) for n, p in self.memory.named_parameters()]
                + self.obs_embed.named_parameters(f"{prefix}obs/"))

    def sequence_features(self, batch: EpisodeBatch) -> Tensor:
        """(B, L+1, F)"""
        readouts = self.memory.readouts_with_initial(batch.transitions, workers=self.workers)
        embedded = self.obs_embed(Tensor(batch.observations.astype(self.memory.dtype)))
        return concat([embedded, readouts], axis=-1)

    def step_features(self, obs: np.ndarray, readout: np.ndarray) -> Tensor:
        with no_grad():
            embedded = self.obs_embed(Tensor(np.asarray(obs, dtype=self.memory.dtype).reshape(1, -1)))
            return concat([embedded, Tensor(readout.reshape(1, -1).astype(self.memory.dtype))], axis=-1)


class QHeads(Module):
    """Online and target Q networks over features -> |A| values"""

    def __init__(self, feature_dim: int, num_actions: int, hidden: Sequence[int], rng: np.random.Generator,
                 dtype=np.float64):
        self.online = build_mlp(feature_dim, hidden, num_actions, "relu", rng=rng, dtype=dtype, name="q")
        self.target = copy.deepcopy(self.online)
        self.num_actions = num_actions

    def named_parameters(self, prefix: str = "") -> List[Tuple[str, Tensor]]:
        return self.online.named_parameters("q/") + self.target.named_parameters("target/q/")

    def online_parameters(self) -> List[Tensor]:
        return self.online.parameters()

    def target_pairs(self) -> Tuple[List[Tensor], List[Tensor]]:
        return self.target.parameters(), self.online.parameters()


class SacHeads(Module):
    """Squashed-Gaussian actor, twin critics and their targets; alpha is fixed"""

    def __init__(self, feature_dim: int, action_dim: int, hidden: Sequence[int], alpha: float,
                 rng: np.random.Generator, dtype=np.float64):
        if alpha <= 0:
            raise ConfigurationError(f"train.alpha must be positive, got {alpha}")
        self.action_dim = action_dim
        self.alpha = alpha
        self.actor = build_mlp(feature_dim, hidden, 2 * action_dim, "relu", rng=rng, dtype=dtype, name="actor")
        self.critic1 = build_mlp(feature_dim + action_dim, hidden, 1, "relu", rng=rng, dtype=dtype, name="critic1")
        self.critic2 = build_mlp(feature_dim + action_dim, hidden, 1, "relu", rng=rng, dtype=dtype, name="critic2")
        self.target1 = copy.deepcopy(self.critic1)
        self.target2 = copy.deepcopy(self.critic2)

    def named_parameters(self, prefix: str = "") -> List[Tuple[str, Tensor]]:
        return (self.actor.named_parameters("actor/")
                + self.critic1.named_parameters("critic1/")
                + self.critic2.named_parameters("critic2/")
                + self.target1.named_parameters("target/critic1/")
                + self.target2.named_parameters("target/critic2/"))

    def critic_parameters(self) -> List[Tensor]:
        return self.critic1.parameters() + self.critic2.parameters()

    def online_parameters(self) -> List[Tensor]:
        return self.actor.parameters() + self.critic_parameters()

    def target_pairs(self) -> Tuple[List[Tensor], List[Tensor]]:
        return self.target1.parameters() + self.target2.parameters(), self.critic_parameters()

    def distribution(self, features: Tensor) -> Tuple[Tensor, Tensor]:
        out = self.actor(features)
        d = self.action_dim
        return out[..., :d], out[..., d:].clip(LOG_STD_MIN, LOG_STD_MAX)

    @staticmethod
    def squash(mean: Tensor, log_std: Tensor, noise: np.ndarray) -> Tuple[Tensor, Tensor]:
        """a = tanh(mean + std * noise) and its log-density with the tanh correction"""
        action = (mean + log_std.exp() * noise).tanh()
        gaussian = (-0.5 * noise ** 2 - HALF_LOG_TWO_PI) - log_std
        log_prob = gaussian.sum(axis=-1) - (1.0 - action * action + 1e-6).log().sum(axis=-1)
        return action, log_prob

    def q_values(self, critic, features: Tensor, actions: Union[Tensor, np.ndarray]) -> Tensor:
        actions = actions if isinstance(actions, Tensor) else Tensor(actions.astype(features.dtype))
        return critic(concat([features, actions], axis=-1))[..., 0]


class AgentNetworks(Module):
    """Feature encoder, its target copy and the algorithm's heads"""

    def __init__(self, encoder: FeatureEncoder, heads: Union[QHeads, SacHeads]):
        self.encoder = encoder
        self.target_encoder = copy.deepcopy(encoder)
        self.heads = heads

    @property
    def memory(self) -> Memory:
        return self.encoder.memory

    def named_parameters(self, prefix: str = "") -> List[Tuple[str, Tensor]]:
        return (self.encoder.named_parameters()
                + self.heads.named_parameters()
                + self.target_encoder.named_parameters("target/"))

    def soft_update_targets(self, tau: float) -> None:
        targets, online = self.heads.target_pairs()
        soft_update(self.target_encoder.parameters() + targets, self.encoder.parameters() + online, tau)

    def set_workers(self, workers: int) -> None:
        self.encoder.workers = workers
        self.target_encoder.workers = workers

    # ------------------------------------------------------------------
    # acting
    # ------------------------------------------------------------------
    def act(self, obs: np.ndarray, readout: np.ndarray, rng: np.random.Generator, epsilon: float = 0.0,
            greedy: bool = False):
        features = self.encoder.step_features(obs, readout)
        with no_grad():
            if isinstance(self.heads, QHeads):
                if not greedy and rng.random() < epsilon:
                    return int(rng.integers(self.heads.num_actions))
                return int(np.argmax(self.heads.online(features).data[0]))
            mean, log_std = self.heads.distribution(features)
            if greedy:
                return np.tanh(mean.data[0])
            noise = rng.standard_normal(mean.shape)
            action, _ = SacHeads.squash(mean, log_std, noise)
            return action.data[0]


def build_agent(memory: Memory, obs_dim: int, action_space: Union[DiscreteSpace, BoxSpace], config: TrainConfig,
                rng: np.random.Generator, obs_embed_dim: int = 64) -> AgentNetworks:
    encoder = FeatureEncoder(memory, obs_dim, obs_embed_dim, rng)
    if config.algo == "ddqn":
        if not action_space.discrete:
            raise ConfigurationError("train.algo=ddqn needs a discrete action space")
        heads = QHeads(encoder.feature_dim, action_space.n, config.hidden_sizes, rng, memory.dtype)
    else:
        if action_space.discrete:
            raise ConfigurationError("train.algo=sac needs a continuous action space")
        heads = SacHeads(encoder.feature_dim, action_space.dim, config.hidden_sizes, config.alpha, rng, memory.dtype)
    return AgentNetworks(encoder, heads)


@dataclass
class Optimizers:
    main: AdamOptimizer
    actor: Optional[AdamOptimizer] = None


def build_optimizers(nets: AgentNetworks, config: TrainConfig) -> Optimizers:
    """DDQN: one optimizer over encoder + Q. SAC: critic side and actor side"""
    if isinstance(nets.heads, QHeads):
        return Optimizers(AdamOptimizer(nets.encoder.parameters() + nets.heads.online_parameters(),
                                        config.lr, config.grad_clip))
    critic = AdamOptimizer(nets.encoder.parameters() + nets.heads.critic_parameters(), config.lr, config.grad_clip)
    if config.freeze_critic:
        actor_params = nets.heads.actor.parameters()
    else:
        actor_params = nets.heads.actor.parameters() + nets.encoder.parameters() + nets.heads.critic_parameters()
    return Optimizers(critic, AdamOptimizer(actor_params, config.lr, config.grad_clip))


def save_agent(path, nets: AgentNetworks):
    return save_checkpoint(path, {name: p.data for name, p in nets.named_parameters()})


def load_agent(path, nets: AgentNetworks) -> AgentNetworks:
    load_into(nets.named_parameters(), load_checkpoint(path))
    return nets


# ----------------------------------------------------------------------
# losses and updates
# ----------------------------------------------------------------------
def _diverged(what: str, batch: EpisodeBatch, **components) -> NumericError:
    bad = ~np.isfinite(batch.rewards).all(axis=1) | ~np.isfinite(batch.observations).all(axis=(1, 2))
    worst = int(np.argmax(bad)) if bad.any() else 0
    err = NumericError(f"Non-finite {what}")
    err.diagnostic = {
        "what": what,
        "components": {k: float(v) for k, v in components.items()},
        "episode_in_batch": worst,
        "observations": batch.observations[worst].tolist(),
        "actions": batch.actions[worst].tolist(),
        "rewards": batch.rewards[worst].tolist(),
    }
    return err


def ddqn_loss(nets: AgentNetworks, batch: EpisodeBatch, gamma: float) -> Tensor:
    """Masked mean squared TD error with online argmax and target evaluation"""
    heads: QHeads = nets.heads
    L = batch.max_length
    q_all = heads.online(nets.encoder.sequence_features(batch))
    chosen = np.eye(heads.num_actions, dtype=q_all.dtype)[batch.actions]
    q_taken = (q_all[:, :L] * chosen).sum(axis=-1)
    with no_grad():
        best_next = np.argmax(q_all.data[:, 1:], axis=-1)
        q_target = heads.target(nets.target_encoder.sequence_features(batch)).data[:, 1:]
        q_next = np.take_along_axis(q_target, best_next[..., None], axis=-1)[..., 0]
        targets = batch.rewards + gamma * (1.0 - batch.dones) * q_next
    td = (q_taken - targets) * batch.mask
    return (td * td).sum() / float(batch.mask.sum())


def ddqn_update(nets: AgentNetworks, batch: EpisodeBatch, config: TrainConfig, optimizers: Optimizers) -> float:
    loss = ddqn_loss(nets, batch, config.gamma)
    value = loss.item()
    if not math.isfinite(value):
        raise _diverged("DDQN loss", batch, loss=value)
    grads = compute_gradients(loss, optimizers.main.params)
    optimizers.main.step(grads)
    nets.soft_update_targets(config.tau)
    return value


def sac_critic_loss(nets: AgentNetworks, batch: EpisodeBatch, gamma: float, rng: np.random.Generator) -> Tensor:
    heads: SacHeads = nets.heads
    L = batch.max_length
    features = nets.encoder.sequence_features(batch)
    with no_grad():
        next_features = features.data[:, 1:]
        mean, log_std = heads.distribution(Tensor(next_features))
        next_action, next_log_prob = SacHeads.squash(mean, log_std, rng.standard_normal(mean.shape))
        target_features = nets.target_encoder.sequence_features(batch).data[:, 1:]
        q1 = heads.q_values(heads.target1, Tensor(target_features), next_action).data
        q2 = heads.q_values(heads.target2, Tensor(target_features), next_action).data
        soft_value = np.minimum(q1, q2) - heads.alpha * next_log_prob.data
        targets = batch.rewards + gamma * (1.0 - batch.dones) * soft_value
    current = features[:, :L]
    total = None
    for critic in (heads.critic1, heads.critic2):
        td = (heads.q_values(critic, current, batch.actions) - targets) * batch.mask
        term = (td * td).sum() / float(batch.mask.sum())
        total = term if total is None else total + term
    return total


def sac_actor_loss(nets: AgentNetworks, batch: EpisodeBatch, rng: np.random.Generator,
                   freeze_critic: bool = True) -> Tensor:
    """E[alpha log pi(a|m) - min_i Q_i(m, a)]; with freeze_critic the readout is detached"""
    heads: SacHeads = nets.heads
    L = batch.max_length
    if freeze_critic:
        with no_grad():
            features = Tensor(nets.encoder.sequence_features(batch).data[:, :L])
    else:
        features = nets.encoder.sequence_features(batch)[:, :L]
    mean, log_std = heads.distribution(features)
    action, log_prob = SacHeads.squash(mean, log_std, rng.standard_normal(mean.shape))
    q = minimum(heads.q_values(heads.critic1, features, action), heads.q_values(heads.critic2, features, action))
    return ((log_prob * heads.alpha - q) * batch.mask).sum() / float(batch.mask.sum())


def sac_update(nets: AgentNetworks, batch: EpisodeBatch, config: TrainConfig, optimizers: Optimizers,
               rng: np.random.Generator) -> Dict[str, float]:
    critic_loss = sac_critic_loss(nets, batch, config.gamma, rng)
    critic_value = critic_loss.item()
    if not math.isfinite(critic_value):
        raise _diverged("SAC critic loss", batch, critic_loss=critic_value)
    optimizers.main.step(compute_gradients(critic_loss, optimizers.main.params))

    actor_loss = sac_actor_loss(nets, batch, rng, config.freeze_critic)
    actor_value = actor_loss.item()
    if not math.isfinite(actor_value):
        raise _diverged("SAC actor loss", batch, critic_loss=critic_value, actor_loss=actor_value)
    optimizers.actor.step(compute_gradients(actor_loss, optimizers.actor.params))

    nets.soft_update_targets(config.tau)
    return {"critic_loss": critic_value, "actor_loss": actor_value}


# ----------------------------------------------------------------------
# rollout
# ----------------------------------------------------------------------
def collect_episode(env: CmdpEnv, nets: AgentNetworks, rng: np.random.Generator, epsilon: float = 0.0,
                    greedy: bool = False, seed: Optional[int] = None,
                    scripted: Optional[ScriptedPolicy] = None) -> EpisodeRecord:
    """
    Roll one episode, feeding the memory one transition per step.

    The returned record carries the per-step readouts (index 0 is the empty
    history) in its `readouts` attribute.
    """
    memory = nets.memory
    obs = env.reset(seed)
    if scripted is not None:
        scripted.reset()
    state = memory.initial_state()
    with no_grad():
        readout = memory.initial_readout().data
    observations, actions, rewards, dones, readouts = [obs], [], [], [], [readout]
    done = False
    while not done:
        if scripted is not None:
            action = scripted.act(obs)
        else:
            action = nets.act(obs, readout, rng, epsilon=epsilon, greedy=greedy)
        next_obs, reward, done = env.step(action)
        x = build_transition(obs, env.action_space.encode(action), reward, next_obs)
        state, readout = memory.encode_step(state, x)
        observations.append(next_obs)
        actions.append(action)
        rewards.append(reward)
        dones.append(done)
        readouts.append(readout)
        obs = next_obs
    record = EpisodeRecord(np.array(observations), np.array(actions), np.array(rewards), np.array(dones),
                           env.context)
    record.readouts = np.array(readouts)
    return record
