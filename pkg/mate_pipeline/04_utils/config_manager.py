#!/usr/bin/env python3
"""
MATE Pipeline Configuration Manager
===================================

Centralized configuration management for MATE runs.

Features:
- JSON-based configuration loading from 03_configs/ with a config cache
- pydantic schema with defaults; unknown keys are rejected by name
- `section.key=value` overrides applied before validation
- Derived defaults (corridor length, memory horizon, algorithm, learning rate)
- Master seed fanned out to named sub-seeds through numpy SeedSequence
- Resolved config serialization (`config.resolved`) that parses back unchanged

Author: MATE Pipeline
Version: 1.0
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from typing_extensions import Self

from errors import ConfigurationError

logger = logging.getLogger(__name__)

DISCRETE_ENVS = ("tmaze_passive", "tmaze_active")
SEED_NAMES = ("env", "init", "exploration", "bench", "eval")

ALGO_DEFAULTS = {
    "ddqn": {"lr": 3e-5, "grad_clip": 0.03, "hidden_sizes": [256, 256]},
    "sac": {"lr": 1e-4, "grad_clip": None, "hidden_sizes": [512, 512]},
}


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class EnvSection(_Section):
    name: Literal["tmaze_passive", "tmaze_active", "gauss_bandit", "point_dir"] = "tmaze_passive"
    horizon: Optional[int] = Field(default=None, ge=1)
    corridor_len: Optional[int] = Field(default=None, ge=2)
    sigma_obs: float = Field(default=0.5, gt=0)

    @model_validator(mode="after")
    def _derive(self) -> Self:
        offset = 1 if self.name == "tmaze_passive" else 2
        if self.horizon is None:
            if self.name in DISCRETE_ENVS and self.corridor_len is not None:
                self.horizon = self.corridor_len + offset
            else:
                defaults = {"tmaze_passive": 11, "tmaze_active": 12, "gauss_bandit": 20, "point_dir": 100}
                self.horizon = defaults[self.name]
        if self.name in DISCRETE_ENVS:
            if self.corridor_len is None:
                self.corridor_len = self.horizon - offset
            if self.corridor_len < 2 or self.horizon < self.corridor_len + offset:
                raise ValueError(f"horizon {self.horizon} and corridor_len {self.corridor_len} do not fit {self.name}")
        elif self.corridor_len is not None:
            raise ValueError(f"corridor_len applies to T-Maze only, not {self.name}")
        return self

    @property
    def discrete(self) -> bool:
        return self.name in DISCRETE_ENVS


class MemorySection(_Section):
    arch: Literal["mate", "rnn", "attn", "memoryless"] = "mate"
    dim: int = Field(default=128, ge=1)
    obs_embed_dim: int = Field(default=64, ge=1)
    horizon: Optional[int] = Field(default=None, ge=1)
    activation: Literal["tanh", "gelu", "relu", "softplus", "identity"] = "tanh"
    positional_encoding: Optional[bool] = None

    @model_validator(mode="after")
    def _derive(self) -> Self:
        if self.positional_encoding is None:
            self.positional_encoding = self.arch == "attn"
        if self.arch == "mate" and self.positional_encoding:
            raise ValueError("positional_encoding must be false for mate (the memory is order-free)")
        return self


class TrainSection(_Section):
    algo: Optional[Literal["ddqn", "sac"]] = None
    episodes: int = Field(default=2000, ge=1)
    gamma: float = Field(default=0.99, gt=0, le=1)
    tau: float = Field(default=0.001, gt=0, le=1)
    lr: Optional[float] = Field(default=None, gt=0)
    batch_size: int = Field(default=64, ge=1)
    buffer_size: int = Field(default=10000, ge=1)
    grad_clip: Optional[float] = Field(default=None, gt=0)
    freeze_critic: bool = True
    alpha: float = Field(default=0.1, gt=0)
    epsilon_fraction: float = Field(default=0.1, ge=0, le=1)
    hidden_sizes: Optional[List[int]] = None
    max_batch_transitions: int = Field(default=65536, ge=1)
    eval_every: int = Field(default=100, ge=1)
    eval_episodes: int = Field(default=20, ge=1)
    ckpt_every: int = Field(default=500, ge=1)
    warmup_episodes: int = Field(default=1, ge=1)
    dtype: Literal["float64", "float32"] = "float64"


class BenchSection(_Section):
    archs: List[Literal["mate", "rnn", "attn"]] = Field(default_factory=lambda: ["mate", "rnn", "attn"])
    lengths: List[int] = Field(default_factory=lambda: [512, 1024, 2048, 4096, 8192])
    dim: int = Field(default=128, ge=1)
    repeats: int = Field(default=5, ge=5)
    warmup: int = Field(default=2, ge=0)
    update_batch: int = Field(default=1, ge=1)
    parallel_batch: int = Field(default=8, ge=1)
    workers: int = Field(default=4, ge=1)
    dtype: Literal["float64", "float32"] = "float32"


class RunConfig(_Section):
    env: EnvSection = Field(default_factory=EnvSection)
    memory: MemorySection = Field(default_factory=MemorySection)
    train: TrainSection = Field(default_factory=TrainSection)
    bench: BenchSection = Field(default_factory=BenchSection)
    seed: int = Field(default=0, ge=0)
    label: Optional[str] = None
    seeds: Optional[Dict[str, int]] = None

    @model_validator(mode="after")
    def _resolve(self) -> Self:
        if self.memory.horizon is None:
            self.memory.horizon = self.env.horizon
        if self.memory.horizon < self.env.horizon:
            raise ValueError(f"memory.horizon {self.memory.horizon} is shorter than env.horizon {self.env.horizon}")
        expected_algo = "ddqn" if self.env.discrete else "sac"
        if self.train.algo is None:
            self.train.algo = expected_algo
        if self.train.algo != expected_algo:
            raise ValueError(f"train.algo={self.train.algo} is incompatible with env.name={self.env.name} "
                             f"({'discrete' if self.env.discrete else 'continuous'} actions need {expected_algo})")
        defaults = ALGO_DEFAULTS[self.train.algo]
        if self.train.lr is None:
            self.train.lr = defaults["lr"]
        if self.train.hidden_sizes is None:
            self.train.hidden_sizes = list(defaults["hidden_sizes"])
        if self.train.grad_clip is None and "grad_clip" not in self.train.model_fields_set:
            self.train.grad_clip = defaults["grad_clip"]
        derived = derive_seeds(self.seed)
        if self.seeds is not None and self.seeds != derived:
            raise ValueError(f"seeds block {self.seeds} disagrees with the sub-seeds of seed={self.seed}: {derived}")
        self.seeds = derived
        if self.label is None:
            self.label = f"{self.env.name}-{self.memory.arch}-{self.train.algo}-seed{self.seed}"
        return self


def derive_seeds(master: int) -> Dict[str, int]:
    """Named sub-seeds from one master seed; spawn key i belongs to SEED_NAMES[i]"""
    children = np.random.SeedSequence(master).spawn(len(SEED_NAMES))
    return {name: int(child.generate_state(1, dtype=np.uint32)[0]) for name, child in zip(SEED_NAMES, children)}


def _parse_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_overrides(data: Dict[str, Any], overrides: List[str]) -> Dict[str, Any]:
    """Apply `section.key=value` strings; values are parsed as JSON when possible"""
    data = json.loads(json.dumps(data))
    for item in overrides:
        if "=" not in item:
            raise ConfigurationError(f"Override '{item}' must look like section.key=value")
        dotted, raw = item.split("=", 1)
        parts = [p for p in dotted.strip().split(".") if p]
        if not parts:
            raise ConfigurationError(f"Override '{item}' has an empty key")
        node = data
        for part in parts[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigurationError(f"Override key '{dotted}': '{part}' is not a section")
            node = child
        node[parts[-1]] = _parse_value(raw.strip())
    return data


def _format_validation_error(exc: ValidationError, source: str) -> str:
    problems = []
    for error in exc.errors():
        key = ".".join(str(p) for p in error["loc"]) or "<root>"
        if error["type"] == "extra_forbidden":
            problems.append(f"unknown key '{key}'")
        else:
            problems.append(f"{key}: {error['msg']}")
    return f"Invalid configuration {source}: " + "; ".join(problems)


def resolve_config(data: Dict[str, Any], overrides: Optional[List[str]] = None,
                   source: str = "<inline>") -> RunConfig:
    """Validate raw config data (after overrides) into a fully resolved RunConfig"""
    if overrides:
        data = apply_overrides(data, overrides)
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigurationError(_format_validation_error(exc, source)) from None


def dump_resolved(config: RunConfig) -> str:
    return json.dumps(config.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"


def write_resolved(config: RunConfig, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.write_text(dump_resolved(config), encoding="utf-8")
    return path


def read_resolved(path: Union[str, Path]) -> RunConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigurationError(f"Resolved config not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"Error parsing resolved config {path}: {exc}") from None
    return resolve_config(data, source=str(path))


class MateConfig:
    """Loads run configurations from 03_configs/ (JSON), cached by name"""

    def __init__(self, configs_dir: Optional[Path] = None):
        self.base_path = Path(__file__).parent.parent
        self.configs_dir = configs_dir or self.base_path / "03_configs"
        self._config_cache: Dict[str, Dict[str, Any]] = {}

    def _locate(self, config_name: str) -> Path:
        candidate = Path(config_name)
        if candidate.suffix == ".json" and candidate.exists():
            return candidate
        name = config_name if config_name.endswith(".json") else f"{config_name}.json"
        return self.configs_dir / name

    def load_config(self, config_name: str) -> Dict[str, Any]:
        """
        Load raw configuration data

        Args:
            config_name: Name in 03_configs/ (with or without .json) or a path to a JSON file

        Returns:
            Dictionary containing configuration data
        """
        if config_name in self._config_cache:
            return self._config_cache[config_name]

        config_file = self._locate(config_name)
        try:
            with open(config_file, "r", encoding="utf-8") as f:
                config_data = json.load(f)
        except FileNotFoundError:
            raise ConfigurationError(f"Configuration file not found: {config_file}") from None
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"Error parsing configuration {config_file}: {e}") from None
        if not isinstance(config_data, dict):
            raise ConfigurationError(f"Configuration {config_file} must be a JSON object")

        self._config_cache[config_name] = config_data
        logger.info(f"✓ Loaded configuration: {config_file.name}")
        return config_data

    def load_run_config(self, config_name: Optional[str] = None, overrides: Optional[List[str]] = None) -> RunConfig:
        data = self.load_config(config_name) if config_name else {}
        return resolve_config(data, overrides, source=config_name or "<defaults>")

    def list_configs(self) -> List[Path]:
        return sorted(self.configs_dir.glob("*.json"))


def to_train_config(config: RunConfig):
    """TrainSection -> rl_algos.TrainConfig"""
    from rl_algos import TrainConfig
    t = config.train
    return TrainConfig(algo=t.algo, gamma=t.gamma, tau=t.tau, lr=t.lr, batch_size=t.batch_size,
                       buffer_size=t.buffer_size, grad_clip=t.grad_clip, episodes=t.episodes,
                       freeze_critic=t.freeze_critic, alpha=t.alpha, epsilon_fraction=t.epsilon_fraction,
                       hidden_sizes=tuple(t.hidden_sizes), max_batch_transitions=t.max_batch_transitions,
                       seed=config.seed)


# Global configuration instance
mate_config = MateConfig()


def get_config() -> MateConfig:
    return mate_config
