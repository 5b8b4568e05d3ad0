#!/usr/bin/env python3
"""
Contextual MDP Environments
===========================

Desk-scale environments whose hidden context is sampled once per episode:

- tmaze_passive / tmaze_active: corridor with an oracle cell that shows the goal
  cue and a junction where the agent must turn toward the right goal
- gauss_bandit: rewards drawn from N(c, sigma_obs^2) with c ~ N(0, 1)
- point_dir: 2-D point that is rewarded for moving along a hidden direction

Observations never include the context except through the environment's own
rules (the T-Maze cue channel). Episode records, scripted reference policies and
replay persistence live here too.

Author: MATE Pipeline
Version: 1.0
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from checkpoint_io import load_checkpoint, save_checkpoint
from errors import ConfigurationError, DataError, DomainError, UsageError
from memory_arch import encode_action

logger = logging.getLogger(__name__)

ENV_NAMES = ("tmaze_passive", "tmaze_active", "gauss_bandit", "point_dir")

# T-Maze action indices
LEFT, RIGHT, UP, DOWN = 0, 1, 2, 3
ACTION_NAMES = ("left", "right", "up", "down")


# ----------------------------------------------------------------------
# spaces
# ----------------------------------------------------------------------
class DiscreteSpace:
    def __init__(self, n: int):
        self.n = n
        self.discrete = True
        self.encoded_dim = n

    def contains(self, action) -> bool:
        return isinstance(action, (int, np.integer)) and 0 <= int(action) < self.n

    def encode(self, action) -> np.ndarray:
        return encode_action(action, self.n)

    def sample(self, rng: np.random.Generator) -> int:
        return int(rng.integers(self.n))

    def __repr__(self) -> str:
        return f"DiscreteSpace({self.n})"


class BoxSpace:
    def __init__(self, dim: int, low: float = -1.0, high: float = 1.0):
        self.dim = dim
        self.low, self.high = low, high
        self.discrete = False
        self.encoded_dim = dim

    def contains(self, action) -> bool:
        action = np.asarray(action, dtype=np.float64)
        return (action.shape == (self.dim,) and bool(np.all(np.isfinite(action)))
                and bool(np.all((action >= self.low) & (action <= self.high))))

    def encode(self, action) -> np.ndarray:
        return encode_action(action)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(self.low, self.high, size=self.dim)

    def __repr__(self) -> str:
        return f"BoxSpace({self.dim}, [{self.low}, {self.high}])"


# ----------------------------------------------------------------------
# environment base
# ----------------------------------------------------------------------
class CmdpEnv(ABC):
    """Single-owner episode state machine with a hidden per-episode context"""

    name = "base"

    def __init__(self, horizon: int, seed: Optional[int] = None):
        if horizon < 1:
            raise ConfigurationError(f"env.horizon must be positive, got {horizon}")
        self.horizon = horizon
        self.rng = np.random.default_rng(seed)
        self.t = 0
        self.done = True
        self._context = None

    @property
    @abstractmethod
    def observation_dim(self) -> int:
        ...

    @property
    @abstractmethod
    def action_space(self) -> Union[DiscreteSpace, BoxSpace]:
        ...

    @property
    def discrete(self) -> bool:
        return self.action_space.discrete

    @property
    def transition_dim(self) -> int:
        return 2 * self.observation_dim + self.action_space.encoded_dim + 1

    @property
    def context(self) -> np.ndarray:
        """Hidden context of the current episode; diagnostics only"""
        return np.asarray(self._context, dtype=np.float64).reshape(-1)

    def reset(self, seed: Optional[int] = None) -> np.ndarray:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self.t = 0
        self.done = False
        self._context = self._sample_context()
        return self._reset_state()

    def step(self, action) -> Tuple[np.ndarray, float, bool]:
        if self.done:
            raise UsageError(f"{self.name}: step() called on a finished episode; call reset() first")
        if not self.action_space.contains(action):
            raise DomainError(f"{self.name}: action {action!r} not in {self.action_space}")
        obs, reward, terminal = self._transition(action)
        self.t += 1
        self.done = terminal or self.t >= self.horizon
        return obs, float(reward), self.done

    @abstractmethod
    def _sample_context(self):
        ...

    @abstractmethod
    def _reset_state(self) -> np.ndarray:
        ...

    @abstractmethod
    def _transition(self, action) -> Tuple[np.ndarray, float, bool]:
        ...


def env_reset(env: CmdpEnv, seed: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    obs = env.reset(seed)
    return obs, env.context


def env_step(env: CmdpEnv, action) -> Tuple[np.ndarray, float, bool]:
    return env.step(action)


# ----------------------------------------------------------------------
# T-Maze
# ----------------------------------------------------------------------
def tmaze_reward(x_prev: int, x_next: int, reached_goal: bool, corridor_len: int) -> float:
    """R_goal - R_p with R_p = (1 - (x_next - x_prev)) / L"""
    if abs(x_next - x_prev) > 1:
        raise DomainError(f"Corridor moves are unit steps, got {x_prev} -> {x_next}")
    if corridor_len < 2:
        raise DomainError(f"Corridor length must be at least 2, got {corridor_len}")
    return float(reached_goal) - (1.0 - (x_next - x_prev)) / corridor_len


@dataclass
class TMazeSpec:
    """
    Corridor cells x = 0..L on row y = 0; the oracle O sits at x = 0, the
    junction J at x = L, goals G1 / G2 at (L, +1) / (L, -1).
    Passive starts on O (L = T - 1); active starts one cell right of O (L = T - 2).
    """
    variant: str
    horizon: int
    corridor_len: Optional[int] = None

    def __post_init__(self):
        if self.variant not in ("passive", "active"):
            raise ConfigurationError(f"T-Maze variant must be passive or active, got '{self.variant}'")
        offset = 1 if self.variant == "passive" else 2
        if self.corridor_len is None:
            self.corridor_len = self.horizon - offset
        if self.corridor_len < 2:
            raise ConfigurationError(f"env.corridor_len must be >= 2 (got {self.corridor_len} "
                                     f"for horizon {self.horizon})")
        if self.horizon < self.corridor_len + offset:
            raise ConfigurationError(f"env.horizon {self.horizon} too short to reach a goal through a "
                                     f"corridor of length {self.corridor_len}")

    @property
    def oracle_x(self) -> int:
        return 0

    @property
    def start_x(self) -> int:
        return 0 if self.variant == "passive" else 1

    @property
    def junction_x(self) -> int:
        return self.corridor_len


class TMazeEnv(CmdpEnv):
    """Observation (x / L, y, cue); context +1 for the upper goal, -1 for the lower one"""

    def __init__(self, spec: TMazeSpec, seed: Optional[int] = None):
        super().__init__(spec.horizon, seed)
        self.spec = spec
        self.name = f"tmaze_{spec.variant}"
        self._space = DiscreteSpace(4)
        self.x = spec.start_x
        self.y = 0

    @property
    def observation_dim(self) -> int:
        return 3

    @property
    def action_space(self) -> DiscreteSpace:
        return self._space

    @property
    def goal(self) -> int:
        return int(self._context)

    def _sample_context(self) -> int:
        return 1 if self.rng.random() < 0.5 else -1

    def _observe(self, cue: int) -> np.ndarray:
        return np.array([self.x / self.spec.corridor_len, float(self.y), float(cue)])

    def _reset_state(self) -> np.ndarray:
        self.x, self.y = self.spec.start_x, 0
        if self.spec.variant == "passive":
            return self._observe(self.goal)
        return self._observe(-self.goal)

    def _transition(self, action: int) -> Tuple[np.ndarray, float, bool]:
        spec = self.spec
        x_prev = self.x
        reached_goal = False
        terminal = False
        if action == LEFT:
            self.x = max(self.x - 1, 0)
        elif action == RIGHT:
            blocked = spec.variant == "active" and self.t == 0
            if not blocked:
                self.x = min(self.x + 1, spec.junction_x)
        elif self.x == spec.junction_x:
            self.y = 1 if action == UP else -1
            reached_goal = self.y == self.goal
            terminal = True
        reward = tmaze_reward(x_prev, self.x, reached_goal, spec.corridor_len)
        cue = self.goal if (self.x == spec.oracle_x and self.y == 0) else 0
        return self._observe(cue), reward, terminal


# ----------------------------------------------------------------------
# Gaussian-context bandit
# ----------------------------------------------------------------------
class GaussBanditEnv(CmdpEnv):
    """Every step pays r ~ N(c, sigma_obs^2); the next observation is (r, 1)"""

    name = "gauss_bandit"

    def __init__(self, horizon: int = 20, sigma_obs: float = 0.5, seed: Optional[int] = None):
        super().__init__(horizon, seed)
        if sigma_obs <= 0:
            raise ConfigurationError(f"env.sigma_obs must be positive, got {sigma_obs}")
        self.sigma_obs = sigma_obs
        self._space = BoxSpace(1)

    @property
    def observation_dim(self) -> int:
        return 2

    @property
    def action_space(self) -> BoxSpace:
        return self._space

    def _sample_context(self) -> float:
        return float(self.rng.normal(0.0, 1.0))

    def _reset_state(self) -> np.ndarray:
        return np.array([0.0, 1.0])

    def _transition(self, action) -> Tuple[np.ndarray, float, bool]:
        reward = float(self.rng.normal(self._context, self.sigma_obs))
        return np.array([reward, 1.0]), reward, False


# ----------------------------------------------------------------------
# point-direction task
# ----------------------------------------------------------------------
class PointDirEnv(CmdpEnv):
    """Reward cos(v, d*) - 0.01 ||v||^2 for a hidden unit direction d*"""

    name = "point_dir"

    def __init__(self, horizon: int = 100, step_size: float = 0.1, seed: Optional[int] = None):
        super().__init__(horizon, seed)
        self.step_size = step_size
        self._space = BoxSpace(2)
        self.position = np.zeros(2)

    @property
    def observation_dim(self) -> int:
        return 2

    @property
    def action_space(self) -> BoxSpace:
        return self._space

    def _sample_context(self) -> np.ndarray:
        angle = self.rng.uniform(0.0, 2.0 * np.pi)
        return np.array([np.cos(angle), np.sin(angle)])

    def _reset_state(self) -> np.ndarray:
        self.position = np.zeros(2)
        return self.position.copy()

    def _transition(self, action) -> Tuple[np.ndarray, float, bool]:
        v = np.asarray(action, dtype=np.float64)
        speed = float(np.linalg.norm(v))
        alignment = float(v @ self._context) / speed if speed > 0 else 0.0
        reward = alignment - 0.01 * speed ** 2
        self.position = np.clip(self.position + self.step_size * v, -1.0, 1.0)
        return self.position.copy(), reward, False


def make_env(name: str, horizon: Optional[int] = None, seed: Optional[int] = None,
             corridor_len: Optional[int] = None, sigma_obs: float = 0.5) -> CmdpEnv:
    """Environment factory keyed by env.name"""
    if name not in ENV_NAMES:
        raise ConfigurationError(f"env.name must be one of {ENV_NAMES}, got '{name}'")
    if name.startswith("tmaze"):
        if horizon is None:
            raise ConfigurationError(f"env.horizon is required for {name}")
        return TMazeEnv(TMazeSpec(name.split("_")[1], horizon, corridor_len), seed)
    if name == "gauss_bandit":
        return GaussBanditEnv(horizon or 20, sigma_obs, seed)
    return PointDirEnv(horizon or 100, seed=seed)


# ----------------------------------------------------------------------
# episode records
# ----------------------------------------------------------------------
@dataclass
class EpisodeRecord:
    """o_0..o_L, a_0..a_{L-1}, r_0..r_{L-1}; context kept for diagnostics only"""
    observations: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    context: np.ndarray

    def __post_init__(self):
        self.observations = np.asarray(self.observations, dtype=np.float64)
        self.rewards = np.asarray(self.rewards, dtype=np.float64)
        self.dones = np.asarray(self.dones, dtype=bool)
        self.context = np.asarray(self.context, dtype=np.float64).reshape(-1)
        length = len(self.rewards)
        if len(self.observations) != length + 1 or len(self.actions) != length or len(self.dones) != length:
            raise DataError(f"Episode arrays disagree: {len(self.observations)} observations, "
                            f"{len(self.actions)} actions, {length} rewards, {len(self.dones)} done flags")
        if not np.all(np.isfinite(self.rewards)):
            raise DataError("Episode contains non-finite rewards")
        if self.dones[:-1].any():
            raise DataError("Episode has a terminal flag before its last step")

    @property
    def length(self) -> int:
        return len(self.rewards)

    @property
    def total_return(self) -> float:
        return float(self.rewards.sum())

    def to_tensors(self, prefix: str = "") -> Dict[str, np.ndarray]:
        return {
            f"{prefix}observations": self.observations,
            f"{prefix}actions": np.asarray(self.actions),
            f"{prefix}rewards": self.rewards,
            f"{prefix}dones": self.dones.astype(np.uint8),
            f"{prefix}context": self.context,
        }

    @classmethod
    def from_tensors(cls, tensors: Dict[str, np.ndarray], prefix: str = "") -> "EpisodeRecord":
        try:
            return cls(observations=tensors[f"{prefix}observations"], actions=tensors[f"{prefix}actions"],
                       rewards=tensors[f"{prefix}rewards"], dones=tensors[f"{prefix}dones"].astype(bool),
                       context=tensors[f"{prefix}context"])
        except KeyError as exc:
            raise DataError(f"Episode tensors missing {exc}") from exc


def save_replay(path: Union[str, Path], records: Sequence[EpisodeRecord]) -> Path:
    tensors: Dict[str, np.ndarray] = {}
    for i, record in enumerate(records):
        tensors.update(record.to_tensors(f"episode/{i:06d}/"))
    return save_checkpoint(path, tensors)


def load_replay(path: Union[str, Path]) -> List[EpisodeRecord]:
    tensors = load_checkpoint(path)
    prefixes = sorted({name.rsplit("/", 1)[0] + "/" for name in tensors if name.startswith("episode/")})
    return [EpisodeRecord.from_tensors(tensors, prefix) for prefix in prefixes]


# ----------------------------------------------------------------------
# scripted policies
# ----------------------------------------------------------------------
class ScriptedPolicy:
    """Stateful hand-written policy; reset() before every episode"""

    def reset(self) -> None:
        pass

    def act(self, obs: np.ndarray):
        raise NotImplementedError


class OraclePolicy(ScriptedPolicy):
    """Visit the oracle if not started on it, walk to the junction, turn toward the true cue"""

    def reset(self) -> None:
        self.cue = 0

    def act(self, obs: np.ndarray) -> int:
        x_norm, _, cue = obs
        if x_norm == 0.0:
            self.cue = int(cue)
        if self.cue == 0:
            return LEFT
        if x_norm < 1.0:
            return RIGHT
        return UP if self.cue > 0 else DOWN


class FalseCuePolicy(ScriptedPolicy):
    """Same walk as the oracle policy, but turns by the first cue seen and ignores the oracle"""

    def reset(self) -> None:
        self.first_cue = None
        self.visited_oracle = False

    def act(self, obs: np.ndarray) -> int:
        x_norm, _, cue = obs
        if self.first_cue is None:
            self.first_cue = int(cue)
        if x_norm == 0.0:
            self.visited_oracle = True
        if not self.visited_oracle:
            return LEFT
        if x_norm < 1.0:
            return RIGHT
        return UP if self.first_cue > 0 else DOWN


class StayPolicy(ScriptedPolicy):
    """Vertical moves in the corridor are no-ops, so this pays -1/L every step"""

    def act(self, obs: np.ndarray) -> int:
        return UP


class MarkovianPolicy(ScriptedPolicy):
    """Best state-only policy: walk right, then always guess the upper goal"""

    def act(self, obs: np.ndarray) -> int:
        return RIGHT if obs[0] < 1.0 else UP


SCRIPTED_POLICIES = {
    "oracle": OraclePolicy,
    "false_cue": FalseCuePolicy,
    "stay": StayPolicy,
    "markovian": MarkovianPolicy,
}


def run_scripted_episode(env: CmdpEnv, policy: ScriptedPolicy, seed: Optional[int] = None) -> EpisodeRecord:
    obs = env.reset(seed)
    policy.reset()
    observations, actions, rewards, dones = [obs], [], [], []
    done = False
    while not done:
        action = policy.act(obs)
        obs, reward, done = env.step(action)
        observations.append(obs)
        actions.append(action)
        rewards.append(reward)
        dones.append(done)
    return EpisodeRecord(np.array(observations), np.array(actions), np.array(rewards), np.array(dones),
                         env.context)


def analytic_reference_returns(spec: TMazeSpec) -> Dict[str, float]:
    """
    Exact returns of the reference policies for the implemented reward.

    optimal and worst are deterministic; markovian is averaged over both goals.
    The asymptotic values (L -> infinity) are 1.0 / 0.5 / -1.0.
    """
    L = spec.corridor_len
    optimal = 1.0 - 1.0 / L if spec.variant == "passive" else 1.0 - 3.0 / L

    def scripted_return(policy: ScriptedPolicy, goal: int) -> float:
        env = TMazeEnv(spec, seed=0)
        env.reset()
        env._context = goal
        obs = env._reset_state()
        policy.reset()
        total, done = 0.0, False
        while not done:
            obs, reward, done = env.step(policy.act(obs))
            total += reward
        return total

    markovian = 0.5 * (scripted_return(MarkovianPolicy(), 1) + scripted_return(MarkovianPolicy(), -1))
    worst = scripted_return(StayPolicy(), 1)
    return {"optimal": optimal, "markovian": markovian, "worst": worst,
            "asymptotic_optimal": 1.0, "asymptotic_markovian": 0.5, "asymptotic_worst": -1.0}
