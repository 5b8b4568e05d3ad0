#!/usr/bin/env python3
"""
Memory Architectures
====================

Three history encoders behind one interface, plus a memoryless stand-in for
Markovian baselines:

- MateMemory: sum of transition embeddings, read through a hyperspherical
  projection with a trainable offset psi. Constant cost per rollout step; the
  whole-sequence pass is a position-parallel embedding followed by a prefix sum.
- RnnMemory: single-layer LSTM cell. Sequential in both rollout and update.
- AttnMemory: single pre-norm causal self-attention block with learned absolute
  positions and a key/value cache. Rollout cost per step grows with t.

Every architecture embeds its input transition with TransitionEmbedding (dense
layer + hyperspherical projection with its own offset).

Rollout path: initial_state() / encode_step() on numpy arrays, no graph.
Training path: encode_sequence() on (B, t, n) batches, fully differentiable.

Also here: the Gaussian sufficient-statistics encoder, the normalized-memory
recovery identity and the injectivity probe for sum-of-embedding memories.

Author: MATE Pipeline
Version: 1.0
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple, Union

import numpy as np

from errors import ConfigurationError, DegenerateInputError, DomainError, UsageError
import nn_core
from nn_core import Dense, Module, RmsNorm, Tensor, concat, hypersphere_project, no_grad, stack

logger = logging.getLogger(__name__)

ARCHITECTURES = ("mate", "rnn", "attn", "memoryless")


# ----------------------------------------------------------------------
# transitions
# ----------------------------------------------------------------------
def transition_dim(obs_dim: int, action_enc_dim: int) -> int:
    return 2 * obs_dim + action_enc_dim + 1


def build_transition(s_prev: np.ndarray, a_enc: np.ndarray, r_prev: float, s: np.ndarray) -> np.ndarray:
    """x_t = (s_{t-1}, a_{t-1}, r_{t-1}, s_t) flattened"""
    x = np.concatenate([np.asarray(s_prev, dtype=np.float64).ravel(),
                        np.asarray(a_enc, dtype=np.float64).ravel(),
                        [float(r_prev)],
                        np.asarray(s, dtype=np.float64).ravel()])
    if not np.all(np.isfinite(x)):
        raise DomainError("Transition contains non-finite components")
    return x


def encode_action(action, num_actions: Optional[int] = None) -> np.ndarray:
    """One-hot for discrete action sets, the raw vector otherwise"""
    if num_actions is None:
        return np.asarray(action, dtype=np.float64).reshape(-1)
    index = int(action)
    if not 0 <= index < num_actions:
        raise DomainError(f"Action {index} outside [0, {num_actions})")
    one_hot = np.zeros(num_actions)
    one_hot[index] = 1.0
    return one_hot


def build_transitions(observations: np.ndarray, actions_enc: np.ndarray, rewards: np.ndarray) -> np.ndarray:
    """All transitions x_1..x_L of one episode as an (L, n) array"""
    observations = np.asarray(observations, dtype=np.float64)
    actions_enc = np.asarray(actions_enc, dtype=np.float64).reshape(len(rewards), -1)
    rewards = np.asarray(rewards, dtype=np.float64).reshape(-1, 1)
    return np.concatenate([observations[:-1], actions_enc, rewards, observations[1:]], axis=1)


# ----------------------------------------------------------------------
# configuration
# ----------------------------------------------------------------------
@dataclass
class EncoderConfig:
    arch: str
    input_dim: int
    memory_dim: int = 128
    horizon: int = 11
    activation: str = "tanh"
    positional_encoding: Optional[bool] = None
    dtype: str = "float64"

    def __post_init__(self):
        if self.arch not in ARCHITECTURES:
            raise ConfigurationError(f"memory.arch must be one of {ARCHITECTURES}, got '{self.arch}'")
        if self.positional_encoding is None:
            self.positional_encoding = self.arch == "attn"
        if self.arch == "mate" and self.positional_encoding:
            raise ConfigurationError("memory.positional_encoding: MATE is permutation-invariant and never "
                                     "uses positional encodings")
        if self.input_dim < 1 or self.horizon < 1:
            raise ConfigurationError(f"input_dim and horizon must be positive "
                                     f"(got {self.input_dim}, {self.horizon})")
        if self.arch != "memoryless" and self.memory_dim < 1:
            raise ConfigurationError(f"memory.dim must be positive, got {self.memory_dim}")
        if self.activation not in nn_core.ACTIVATIONS:
            raise ConfigurationError(f"memory.activation '{self.activation}' not in {sorted(nn_core.ACTIVATIONS)}")

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64


def _as_tensor(xs: Union[Tensor, np.ndarray], dtype) -> Tensor:
    return xs if isinstance(xs, Tensor) else Tensor(np.asarray(xs, dtype=dtype))


def _unit_offset(rng: np.random.Generator, dim: int, dtype, name: str) -> Tensor:
    """N(0, 1/m) draw rescaled to unit norm; nonzero so the empty memory projects cleanly"""
    raw = rng.normal(0.0, 1.0 / math.sqrt(dim), size=dim)
    return Tensor((raw / np.linalg.norm(raw)).astype(dtype), requires_grad=True, name=name)


class TransitionEmbedding(Module):
    """Dense input embedding followed by the hyperspherical projection"""

    def __init__(self, in_dim: int, dim: int, rng: np.random.Generator, dtype=np.float64, name: str = "embed"):
        self.dense = Dense(in_dim, dim, "identity", rng, dtype, name=f"{name}/dense")
        self.psi = _unit_offset(rng, dim, dtype, f"{name}/psi")
        self.dim = dim

    def named_parameters(self, prefix: str = "embed/") -> List[Tuple[str, Tensor]]:
        return self.dense.named_parameters(f"{prefix}dense/") + [(f"{prefix}psi", self.psi)]

    def __call__(self, x: Tensor) -> Tensor:
        return hypersphere_project(self.dense(x), self.psi)


class ResidualTransitionEncoder(Module):
    """E_psi(x) = e + W2 f(W1 e + b1) + b2 with e the projected input embedding"""

    def __init__(self, in_dim: int, dim: int, activation: str, rng: np.random.Generator, dtype=np.float64,
                 expansion: int = 4):
        self.embed = TransitionEmbedding(in_dim, dim, rng, dtype)
        self.fc1 = Dense(dim, expansion * dim, activation, rng, dtype, name="mem/fc1")
        self.fc2 = Dense(expansion * dim, dim, "identity", rng, dtype, name="mem/fc2")
        self.out_dim = dim

    def named_parameters(self, prefix: str = "") -> List[Tuple[str, Tensor]]:
        return (self.embed.named_parameters("embed/")
                + self.fc1.named_parameters("mem/fc1/")
                + self.fc2.named_parameters("mem/fc2/"))

    def __call__(self, x: Tensor) -> Tensor:
        e = self.embed(x)
        return e + self.fc2(self.fc1(e))


class SingleLayerEncoder(Module):
    """E_psi(x) = f(A x + b), the one-layer form used by the injectivity argument"""

    def __init__(self, layer: Dense):
        self.layer = layer
        self.out_dim = layer.out_dim

    def named_parameters(self, prefix: str = "") -> List[Tuple[str, Tensor]]:
        return self.layer.named_parameters("mem/layer/")

    def __call__(self, x: Tensor) -> Tensor:
        return self.layer(x)


# ----------------------------------------------------------------------
# states
# ----------------------------------------------------------------------
@dataclass
class MateState:
    raw_sum: np.ndarray
    t: int = 0


@dataclass
class RnnState:
    h: np.ndarray
    c: np.ndarray
    t: int = 0


@dataclass
class AttnCache:
    """Preallocated key/value rows; rows [0, t) are live"""
    keys: np.ndarray
    values: np.ndarray
    t: int = 0

    def truncate(self, length: int) -> None:
        if not 0 <= length <= self.t:
            raise UsageError(f"Cannot truncate cache of length {self.t} to {length}")
        self.t = length

    def copy(self) -> "AttnCache":
        return AttnCache(keys=self.keys.copy(), values=self.values.copy(), t=self.t)


@dataclass
class EmptyState:
    t: int = 0


# ----------------------------------------------------------------------
# memories
# ----------------------------------------------------------------------
class Memory(Module):
    """Shared surface of every architecture"""

    arch = "base"

    def __init__(self, config: EncoderConfig):
        self.config = config
        self.dim = config.memory_dim if config.arch != "memoryless" else 0
        self.horizon = config.horizon
        self.dtype = config.np_dtype

    def initial_state(self):
        raise NotImplementedError

    def initial_readout(self) -> Tensor:
        return Tensor(np.zeros(self.dim, dtype=self.dtype))

    def encode_step(self, state, x: np.ndarray):
        raise NotImplementedError

    def encode_sequence(self, xs: Union[Tensor, np.ndarray], workers: int = 1) -> Tensor:
        raise NotImplementedError

    def _check_step(self, state, x: np.ndarray) -> np.ndarray:
        if state.t >= self.horizon:
            raise UsageError(f"{self.arch} memory already consumed {state.t} steps (horizon {self.horizon})")
        x = np.asarray(x, dtype=self.dtype).reshape(-1)
        if x.shape[0] != self.config.input_dim:
            raise ConfigurationError(f"Transition has dim {x.shape[0]}, encoder expects {self.config.input_dim}")
        return x

    def _check_sequence(self, xs: Tensor) -> Tensor:
        if xs.shape[-1] != self.config.input_dim:
            raise ConfigurationError(f"Transitions have dim {xs.shape[-1]}, encoder expects {self.config.input_dim}")
        if xs.shape[-2] > self.horizon:
            raise UsageError(f"Sequence of length {xs.shape[-2]} exceeds horizon {self.horizon}")
        return xs

    def readouts_with_initial(self, xs: Union[Tensor, np.ndarray], workers: int = 1) -> Tensor:
        """(B, t+1, m): the empty-history readout followed by encode_sequence(xs)"""
        xs = _as_tensor(xs, self.dtype)
        batch = xs.shape[0]
        first = self.initial_readout().reshape(1, 1, self.dim) + np.zeros((batch, 1, self.dim), dtype=self.dtype)
        if xs.shape[-2] == 0:
            return first
        return concat([first, self.encode_sequence(xs, workers=workers)], axis=-2)


def _run_chunks(fn: Callable[[int, int], Tensor], length: int, workers: int) -> List[Tensor]:
    """Evaluate fn on contiguous position chunks, optionally on a thread pool"""
    workers = max(1, min(workers, length))
    bounds = np.linspace(0, length, workers + 1).astype(int)
    spans = [(int(bounds[i]), int(bounds[i + 1])) for i in range(workers) if bounds[i + 1] > bounds[i]]
    if workers == 1:
        return [fn(s, e) for s, e in spans]
    grad_enabled = nn_core.is_grad_enabled()

    def job(span):
        nn_core._grad_state.enabled = grad_enabled
        return fn(*span)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(job, spans))


class MateMemory(Memory):
    arch = "mate"

    def __init__(self, config: EncoderConfig, encoder: Module, rng: np.random.Generator,
                 psi: Optional[np.ndarray] = None):
        super().__init__(config)
        if getattr(encoder, "out_dim", config.memory_dim) != config.memory_dim:
            raise ConfigurationError(f"Encoder output dim {encoder.out_dim} != memory.dim {config.memory_dim}")
        self.encoder = encoder
        if psi is None:
            self.psi = _unit_offset(rng, config.memory_dim, self.dtype, "psi")
        else:
            self.psi = Tensor(np.asarray(psi, dtype=self.dtype), requires_grad=True, name="psi")
        self.scale = math.sqrt(config.memory_dim)

    def named_parameters(self, prefix: str = "") -> List[Tuple[str, Tensor]]:
        return self.encoder.named_parameters() + [("psi", self.psi)]

    def initial_state(self) -> MateState:
        return MateState(raw_sum=np.zeros(self.dim, dtype=self.dtype), t=0)

    def initial_readout(self) -> Tensor:
        return hypersphere_project(Tensor(np.zeros(self.dim, dtype=self.dtype)), self.psi, self.scale)

    def embed(self, x: np.ndarray) -> np.ndarray:
        with no_grad():
            return self.encoder(Tensor(np.asarray(x, dtype=self.dtype).reshape(1, -1))).data[0]

    def read(self, raw_sum: np.ndarray) -> np.ndarray:
        with no_grad():
            return hypersphere_project(Tensor(raw_sum), self.psi, self.scale).data

    def encode_step(self, state: MateState, x: np.ndarray) -> Tuple[MateState, np.ndarray]:
        x = self._check_step(state, x)
        raw_sum = state.raw_sum + self.embed(x)
        return MateState(raw_sum=raw_sum, t=state.t + 1), self.read(raw_sum)

    def raw_sums(self, xs: Union[Tensor, np.ndarray], workers: int = 1) -> Tensor:
        xs = self._check_sequence(_as_tensor(xs, self.dtype))
        length = xs.shape[-2]
        if length == 0:
            return Tensor(np.zeros(xs.shape[:-1] + (self.dim,), dtype=self.dtype))
        pieces = _run_chunks(lambda s, e: self.encoder(xs[..., s:e, :]), length, workers)
        embedded = pieces[0] if len(pieces) == 1 else concat(pieces, axis=-2)
        return embedded.cumsum(axis=-2)

    def encode_sequence(self, xs: Union[Tensor, np.ndarray], workers: int = 1) -> Tensor:
        raw = self.raw_sums(xs, workers)
        if raw.shape[-2] == 0:
            return raw
        return hypersphere_project(raw, self.psi, self.scale)


class RnnMemory(Memory):
    arch = "rnn"

    def __init__(self, config: EncoderConfig, rng: np.random.Generator):
        super().__init__(config)
        m = config.memory_dim
        self.embed = TransitionEmbedding(config.input_dim, m, rng, self.dtype)
        self.cell = Dense(2 * m, 4 * m, "identity", rng, self.dtype, name="mem/cell")

    def named_parameters(self, prefix: str = "") -> List[Tuple[str, Tensor]]:
        return self.embed.named_parameters("embed/") + self.cell.named_parameters("mem/cell/")

    def initial_state(self) -> RnnState:
        zeros = np.zeros(self.dim, dtype=self.dtype)
        return RnnState(h=zeros, c=zeros.copy(), t=0)

    def _cell(self, e: Tensor, h: Tensor, c: Tensor) -> Tuple[Tensor, Tensor]:
        m = self.dim
        gates = self.cell(concat([e, h], axis=-1))
        i = gates[..., 0:m].sigmoid()
        f = gates[..., m:2 * m].sigmoid()
        g = gates[..., 2 * m:3 * m].tanh()
        o = gates[..., 3 * m:4 * m].sigmoid()
        c_next = f * c + i * g
        h_next = o * c_next.tanh()
        return h_next, c_next

    def encode_step(self, state: RnnState, x: np.ndarray) -> Tuple[RnnState, np.ndarray]:
        x = self._check_step(state, x)
        with no_grad():
            e = self.embed(Tensor(x.reshape(1, -1)))
            h, c = self._cell(e, Tensor(state.h.reshape(1, -1)), Tensor(state.c.reshape(1, -1)))
        h_next, c_next = h.data[0], c.data[0]
        return RnnState(h=h_next, c=c_next, t=state.t + 1), h_next

    def encode_sequence(self, xs: Union[Tensor, np.ndarray], workers: int = 1) -> Tensor:
        # recurrence is inherently sequential; workers is accepted and ignored
        xs = self._check_sequence(_as_tensor(xs, self.dtype))
        length = xs.shape[-2]
        lead = xs.shape[:-2]
        if length == 0:
            return Tensor(np.zeros(lead + (0, self.dim), dtype=self.dtype))
        h = Tensor(np.zeros(lead + (self.dim,), dtype=self.dtype))
        c = Tensor(np.zeros(lead + (self.dim,), dtype=self.dtype))
        outputs = []
        for t in range(length):
            # per-step embedding keeps the backward pass linear in length
            h, c = self._cell(self.embed(xs[..., t, :]), h, c)
            outputs.append(h)
        return stack(outputs, axis=-2)


class AttnMemory(Memory):
    arch = "attn"

    def __init__(self, config: EncoderConfig, rng: np.random.Generator, expansion: int = 4):
        super().__init__(config)
        m = config.memory_dim
        self.embed = TransitionEmbedding(config.input_dim, m, rng, self.dtype)
        self.positions = None
        if config.positional_encoding:
            self.positions = Tensor(rng.normal(0.0, 0.02, size=(config.horizon, m)).astype(self.dtype),
                                    requires_grad=True, name="mem/pos")
        self.norm1 = RmsNorm(m, self.dtype, name="mem/norm1")
        self.query = Dense(m, m, "identity", rng, self.dtype, name="mem/query")
        self.key = Dense(m, m, "identity", rng, self.dtype, name="mem/key")
        self.value = Dense(m, m, "identity", rng, self.dtype, name="mem/value")
        self.proj = Dense(m, m, "identity", rng, self.dtype, name="mem/proj")
        self.norm2 = RmsNorm(m, self.dtype, name="mem/norm2")
        self.fc1 = Dense(m, expansion * m, config.activation, rng, self.dtype, name="mem/fc1")
        self.fc2 = Dense(expansion * m, m, "identity", rng, self.dtype, name="mem/fc2")
        self.inv_sqrt_dim = 1.0 / math.sqrt(m)

    def named_parameters(self, prefix: str = "") -> List[Tuple[str, Tensor]]:
        named = self.embed.named_parameters("embed/")
        if self.positions is not None:
            named.append(("mem/pos", self.positions))
        for label, module in (("norm1", self.norm1), ("query", self.query), ("key", self.key),
                              ("value", self.value), ("proj", self.proj), ("norm2", self.norm2),
                              ("fc1", self.fc1), ("fc2", self.fc2)):
            named.extend(module.named_parameters(f"mem/{label}/"))
        return named

    def feedforward_parameter_count(self) -> int:
        return self.fc1.parameter_count() + self.fc2.parameter_count()

    def _inputs(self, xs: Tensor, start: int) -> Tensor:
        z = self.embed(xs)
        if self.positions is not None:
            z = z + self.positions[start:start + xs.shape[-2]]
        return z

    def _finish(self, z: Tensor, attended: Tensor) -> Tensor:
        u = z + self.proj(attended)
        return u + self.fc2(self.fc1(self.norm2(u)))

    def initial_state(self) -> AttnCache:
        shape = (self.horizon, self.dim)
        return AttnCache(keys=np.zeros(shape, dtype=self.dtype), values=np.zeros(shape, dtype=self.dtype), t=0)

    def encode_step(self, state: AttnCache, x: np.ndarray) -> Tuple[AttnCache, np.ndarray]:
        """
        Append one step to the cache and read out.

        The input state is consumed: rows are written in place and the same cache
        object is returned. Branch from `state.copy()` to keep the old history.
        """
        x = self._check_step(state, x)
        t = state.t
        with no_grad():
            z = self._inputs(Tensor(x.reshape(1, -1)), t)
            h = self.norm1(z)
            q = self.query(h).data[0]
            state.keys[t] = self.key(h).data[0]
            state.values[t] = self.value(h).data[0]
            scores = state.keys[:t + 1] @ q * self.inv_sqrt_dim
            weights = np.exp(scores - scores.max())
            weights /= weights.sum()
            attended = Tensor((weights @ state.values[:t + 1]).reshape(1, -1))
            y = self._finish(z, attended).data[0]
        state.t = t + 1
        return state, y

    def encode_sequence(self, xs: Union[Tensor, np.ndarray], workers: int = 1) -> Tensor:
        xs = self._check_sequence(_as_tensor(xs, self.dtype))
        length = xs.shape[-2]
        if length == 0:
            return Tensor(np.zeros(xs.shape[:-1] + (self.dim,), dtype=self.dtype))
        z = self._inputs(xs, 0)
        h = self.norm1(z)
        q, k, v = self.query(h), self.key(h), self.value(h)
        causal = np.triu(np.full((length, length), -1e30, dtype=self.dtype), k=1)

        def attend(s: int, e: int) -> Tensor:
            scores = (q[..., s:e, :] @ k[..., :e, :].T) * self.inv_sqrt_dim + causal[s:e, :e]
            return scores.softmax(axis=-1) @ v[..., :e, :]

        pieces = _run_chunks(attend, length, workers)
        attended = pieces[0] if len(pieces) == 1 else concat(pieces, axis=-2)
        return self._finish(z, attended)


class MemorylessMemory(Memory):
    """Zero-width readout; heads see the observation embedding only"""

    arch = "memoryless"

    def named_parameters(self, prefix: str = "") -> List[Tuple[str, Tensor]]:
        return []

    def initial_state(self) -> EmptyState:
        return EmptyState()

    def encode_step(self, state: EmptyState, x: np.ndarray) -> Tuple[EmptyState, np.ndarray]:
        self._check_step(state, x)
        return EmptyState(t=state.t + 1), np.zeros(0, dtype=self.dtype)

    def encode_sequence(self, xs: Union[Tensor, np.ndarray], workers: int = 1) -> Tensor:
        xs = self._check_sequence(_as_tensor(xs, self.dtype))
        return Tensor(np.zeros(xs.shape[:-1] + (0,), dtype=self.dtype))


def build_memory(config: EncoderConfig, rng: np.random.Generator) -> Memory:
    """Factory keyed by memory.arch"""
    dtype = config.np_dtype
    if config.arch == "mate":
        encoder = ResidualTransitionEncoder(config.input_dim, config.memory_dim, config.activation, rng, dtype)
        return MateMemory(config, encoder, rng)
    if config.arch == "rnn":
        return RnnMemory(config, rng)
    if config.arch == "attn":
        return AttnMemory(config, rng)
    return MemorylessMemory(config)


def encode_step(memory: Memory, state, x: np.ndarray):
    return memory.encode_step(state, x)


def encode_sequence(memory: Memory, xs: Union[Tensor, np.ndarray], workers: int = 1) -> Tensor:
    return memory.encode_sequence(xs, workers=workers)


def encode_steps(memory: Memory, xs: np.ndarray) -> np.ndarray:
    """Readouts from feeding xs one step at a time, shape (t, m)"""
    state = memory.initial_state()
    readouts = []
    for x in np.asarray(xs):
        state, readout = memory.encode_step(state, x)
        readouts.append(readout)
    return np.array(readouts).reshape(len(readouts), memory.dim)


# ----------------------------------------------------------------------
# analytic constructions
# ----------------------------------------------------------------------
def gaussian_analytic_encoder(mu: Union[float, np.ndarray], var: Union[float, np.ndarray]) -> np.ndarray:
    """(mu / var, 1 / var); sums over a history give the posterior natural parameters"""
    mu = np.asarray(mu, dtype=np.float64)
    var = np.asarray(var, dtype=np.float64)
    if np.any(var <= 0):
        raise DomainError(f"Observation variance must be positive, got min {float(np.min(var))}")
    return np.stack([mu / var, 1.0 / var], axis=-1)


def normalize_with_unit_offset(m_tilde: np.ndarray, scale: float = 1.0) -> np.ndarray:
    """Project (m_tilde, 0) + (0, ..., 0, 1) onto the sphere of radius scale"""
    m_tilde = np.asarray(m_tilde, dtype=np.float64)
    lifted = np.concatenate([m_tilde, np.ones(m_tilde.shape[:-1] + (1,))], axis=-1)
    return scale * lifted / np.linalg.norm(lifted, axis=-1, keepdims=True)


def recover_unnormalized(m_hat: np.ndarray, scale: float = 1.0) -> np.ndarray:
    """Invert normalize_with_unit_offset: m_tilde = m_hat[:-1] / m_hat[-1]"""
    m_hat = np.asarray(m_hat, dtype=np.float64)
    last = m_hat[..., -1]
    if np.any(last / scale <= 1e-12):
        raise DegenerateInputError(f"Last coordinate {float(np.min(last)):.3e} too small to recover the raw memory")
    return m_hat[..., :-1] / last[..., None]


@dataclass
class InjectivityReport:
    input_dim: int
    horizon: int
    memory_dim: int
    pairs: int
    min_distance: float
    collisions: int
    threshold: float
    identical_skipped: int
    sufficiency_claimed: bool
    normalized_min_distance: float = float("nan")
    kinds: dict = field(default_factory=dict)


def _same_multiset(a: np.ndarray, b: np.ndarray) -> bool:
    if a.shape != b.shape:
        return False
    return np.array_equal(a[np.lexsort(a.T[::-1])], b[np.lexsort(b.T[::-1])])


def injectivity_probe(n: int, horizon: int, trials: int = 10000, seed: int = 0,
                      memory_dim: Optional[int] = None, threshold: float = 1e-8) -> InjectivityReport:
    """
    Empirical injectivity of the sum of one-layer tanh embeddings

    Pairs of multisets over [-1, 1]^n with sizes 1..T are drawn in three flavours:
    independent draws, pairs differing in one element, and pairs differing only in
    the multiplicity of one element. Raw sums are compared in 64-bit.
    """
    expected = 2 * n * horizon + 1
    m = expected if memory_dim is None else memory_dim
    if m != expected:
        logger.warning(f"⚠️ Injectivity probe at m={m} (sufficiency dimension is 2nT+1={expected}); "
                       f"the injectivity guarantee is not claimed")
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(m, n))
    b = rng.normal(size=m)

    def embed_sum(items: np.ndarray) -> np.ndarray:
        return np.tanh(items @ A.T + b).sum(axis=0)

    min_distance = math.inf
    normalized_min = math.inf
    collisions = 0
    skipped = 0
    kinds = {"independent": 0, "one_element": 0, "multiplicity": 0}
    for trial in range(trials):
        kind = ("independent", "one_element", "multiplicity")[trial % 3]
        kinds[kind] += 1
        size = int(rng.integers(1, horizon + 1))
        first = rng.uniform(-1.0, 1.0, size=(size, n))
        if kind == "independent":
            second = rng.uniform(-1.0, 1.0, size=(int(rng.integers(1, horizon + 1)), n))
        elif kind == "one_element":
            second = first.copy()
            second[int(rng.integers(size))] = rng.uniform(-1.0, 1.0, size=n)
        else:
            if size < horizon:
                second = np.vstack([first, first[int(rng.integers(size))]])
            else:
                second = first[:-1].copy() if size > 1 else np.vstack([first, first])
        if _same_multiset(first, second):
            skipped += 1
            continue
        s1, s2 = embed_sum(first), embed_sum(second)
        distance = float(np.linalg.norm(s1 - s2))
        min_distance = min(min_distance, distance)
        if distance < threshold:
            collisions += 1
        normalized = normalize_with_unit_offset(np.stack([s1, s2]))
        normalized_min = min(normalized_min, float(np.linalg.norm(normalized[0] - normalized[1])))

    return InjectivityReport(input_dim=n, horizon=horizon, memory_dim=m, pairs=trials - skipped,
                             min_distance=min_distance, collisions=collisions, threshold=threshold,
                             identical_skipped=skipped, sufficiency_claimed=(m == expected),
                             normalized_min_distance=normalized_min, kinds=kinds)


def multiset_sum_distance(layer: Dense, first: np.ndarray, second: np.ndarray) -> float:
    """Distance between raw sums of two multisets under a given one-layer encoder"""
    with no_grad():
        s1 = layer(Tensor(np.asarray(first, dtype=np.float64))).data.sum(axis=0)
        s2 = layer(Tensor(np.asarray(second, dtype=np.float64))).data.sum(axis=0)
    return float(np.linalg.norm(s1 - s2))


def episode_transitions(record, action_space) -> np.ndarray:
    """Transitions of a recorded episode, actions encoded by the environment's action space"""
    actions = np.array([action_space.encode(a) for a in record.actions]).reshape(len(record.actions), -1)
    return build_transitions(record.observations, actions, record.rewards)


def count_parameters(module: Module) -> int:
    return module.parameter_count()
