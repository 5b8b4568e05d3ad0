#!/usr/bin/env python3
"""
Exact Context Posteriors
========================

Ground-truth beliefs over the hidden context for environments whose kernel we
define ourselves:

- categorical posteriors over finitely many contexts, accumulated in log-space
  from an explicit kernel table p(s', r | s, a, c)
- the conjugate Gaussian posterior for a Gaussian-mean context, kept as
  precision-weighted mean and precision
- brute-force and discretized-grid oracles used to cross-check both

Author: MATE Pipeline
Version: 1.0
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from errors import DataError, DegenerateInputError, DomainError, ImpossibleEvidenceError
from memory_arch import EncoderConfig, MateMemory
from nn_core import Module, Tensor, concat, no_grad

logger = logging.getLogger(__name__)

NORMALIZATION_TOLERANCE = 1e-12


# ----------------------------------------------------------------------
# kernel tables
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class DiscreteTransition:
    """(s_{t-1}, a_{t-1}, r_{t-1}, s_t) over a finite state/action/reward alphabet"""
    state: int
    action: int
    reward: float
    next_state: int


class KernelTable:
    """
    Explicit p(s', r | s, a, c).

    JSON layout (fixtures/):
        {"contexts": ["c0", "c1"], "prior": [0.5, 0.5],
         "entries": [{"state": 0, "action": 1, "context": "c0",
                      "outcomes": [{"next_state": 1, "reward": 0.0, "prob": 0.8}, ...]}, ...]}
    """

    def __init__(self, contexts: Sequence[str], table: Dict[Tuple[int, int, int], Dict[Tuple[int, float], float]],
                 prior: Optional[Sequence[float]] = None):
        self.contexts = list(contexts)
        self.table = table
        if prior is None:
            prior = np.full(len(self.contexts), 1.0 / len(self.contexts))
        self.prior = np.asarray(prior, dtype=np.float64)
        self.validate()

    def validate(self) -> None:
        if len(self.prior) != len(self.contexts):
            raise DataError(f"Prior has {len(self.prior)} entries for {len(self.contexts)} contexts")
        if abs(self.prior.sum() - 1.0) > NORMALIZATION_TOLERANCE or np.any(self.prior < 0):
            raise DataError(f"Prior must be a distribution, sums to {self.prior.sum()!r}")
        for (s, a, c), outcomes in self.table.items():
            total = sum(outcomes.values())
            if abs(total - 1.0) > NORMALIZATION_TOLERANCE:
                raise DataError(f"Kernel row (state={s}, action={a}, context={self.contexts[c]}) sums to {total!r}")
            if any(p < 0 for p in outcomes.values()):
                raise DataError(f"Kernel row (state={s}, action={a}, context={self.contexts[c]}) has negative mass")

    @property
    def num_contexts(self) -> int:
        return len(self.contexts)

    def likelihood(self, x: DiscreteTransition, context: int) -> float:
        row = self.table.get((x.state, x.action, context), {})
        return row.get((x.next_state, float(x.reward)), 0.0)

    def log_likelihoods(self, x: DiscreteTransition) -> np.ndarray:
        probs = np.array([self.likelihood(x, c) for c in range(self.num_contexts)])
        with np.errstate(divide="ignore"):
            return np.log(probs)

    def outcomes(self, state: int, action: int, context: int) -> Dict[Tuple[int, float], float]:
        return self.table.get((state, action, context), {})

    # ------------------------------------------------------------------
    # persistence
    # ------------------------------------------------------------------
    def to_dict(self) -> Dict:
        entries = []
        for (s, a, c), outcomes in sorted(self.table.items()):
            entries.append({
                "state": s, "action": a, "context": self.contexts[c],
                "outcomes": [{"next_state": ns, "reward": r, "prob": p} for (ns, r), p in sorted(outcomes.items())],
            })
        return {"contexts": self.contexts, "prior": self.prior.tolist(), "entries": entries}

    def to_json(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2)
        return path

    @classmethod
    def from_dict(cls, data: Dict, source: str = "<dict>") -> "KernelTable":
        try:
            contexts = list(data["contexts"])
            index = {name: i for i, name in enumerate(contexts)}
            table: Dict[Tuple[int, int, int], Dict[Tuple[int, float], float]] = {}
            for entry in data["entries"]:
                if entry["context"] not in index:
                    raise DataError(f"{source}: entry references unknown context '{entry['context']}'")
                key = (int(entry["state"]), int(entry["action"]), index[entry["context"]])
                table[key] = {(int(o["next_state"]), float(o["reward"])): float(o["prob"]) for o in entry["outcomes"]}
        except KeyError as exc:
            raise DataError(f"{source}: kernel table missing key {exc}") from exc
        return cls(contexts, table, data.get("prior"))

    @classmethod
    def from_json(cls, path: Union[str, Path]) -> "KernelTable":
        path = Path(path)
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except FileNotFoundError as exc:
            raise DataError(f"Kernel fixture not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise DataError(f"Error parsing kernel fixture {path}: {exc}") from exc
        return cls.from_dict(data, source=str(path))


def random_kernel_table(rng: np.random.Generator, n_states: int = 2, n_actions: int = 2, n_contexts: int = 2,
                        rewards: Sequence[float] = (0.0, 1.0), sparsity: float = 0.0) -> KernelTable:
    """Dirichlet rows over (s', r); with sparsity > 0 some outcomes get exactly zero mass"""
    outcomes = [(ns, float(r)) for ns in range(n_states) for r in rewards]
    table = {}
    for s in range(n_states):
        for a in range(n_actions):
            for c in range(n_contexts):
                probs = rng.dirichlet(np.ones(len(outcomes)))
                if sparsity > 0:
                    mask = rng.random(len(outcomes)) >= sparsity
                    mask[rng.integers(len(outcomes))] = True
                    probs = probs * mask
                probs = probs / probs.sum()
                # fold the rounding residue into the largest entry
                probs[np.argmax(probs)] += 1.0 - probs.sum()
                table[(s, a, c)] = {o: float(p) for o, p in zip(outcomes, probs) if p > 0}
    return KernelTable([f"c{c}" for c in range(n_contexts)], table)


def sample_history(kernel: KernelTable, rng: np.random.Generator, context: int, length: int,
                   n_actions: int = 2, start_state: int = 0) -> List[DiscreteTransition]:
    """Roll the kernel forward under one context with uniformly random actions"""
    history = []
    state = start_state
    for _ in range(length):
        action = int(rng.integers(n_actions))
        row = kernel.outcomes(state, action, context)
        keys = list(row)
        choice = keys[int(rng.choice(len(keys), p=np.array([row[k] for k in keys])))]
        next_state, reward = choice
        history.append(DiscreteTransition(state, action, reward, next_state))
        state = next_state
    return history


# ----------------------------------------------------------------------
# categorical posterior
# ----------------------------------------------------------------------
@dataclass
class CategoricalPosterior:
    labels: List
    log_weights: np.ndarray

    def log_probabilities(self) -> np.ndarray:
        shift = np.max(self.log_weights)
        if not np.isfinite(shift):
            raise ImpossibleEvidenceError("Every context has zero posterior weight")
        with np.errstate(divide="ignore"):
            shifted = self.log_weights - shift
            return shifted - np.log(np.exp(shifted).sum())

    def probabilities(self) -> np.ndarray:
        return np.exp(self.log_probabilities())


def categorical_prior(labels: Sequence, probs: Optional[Sequence[float]] = None) -> CategoricalPosterior:
    probs = np.full(len(labels), 1.0 / len(labels)) if probs is None else np.asarray(probs, dtype=np.float64)
    with np.errstate(divide="ignore"):
        return CategoricalPosterior(list(labels), np.log(probs))


def discrete_posterior_update(post: CategoricalPosterior, kernel: KernelTable,
                              x: DiscreteTransition) -> CategoricalPosterior:
    log_weights = post.log_weights + kernel.log_likelihoods(x)
    if not np.any(np.isfinite(log_weights)):
        raise ImpossibleEvidenceError(f"Transition {x} has zero likelihood under every context")
    return CategoricalPosterior(post.labels, log_weights)


def discrete_posterior_batch(prior: CategoricalPosterior, kernel: KernelTable,
                             history: Iterable[DiscreteTransition]) -> CategoricalPosterior:
    post = prior
    for x in history:
        post = discrete_posterior_update(post, kernel, x)
    return post


def brute_force_posterior(kernel: KernelTable, history: Sequence[DiscreteTransition],
                          prior: Optional[Sequence[float]] = None) -> np.ndarray:
    """p(c) * prod_i p(x_i | c), normalized in linear space"""
    prior = kernel.prior if prior is None else np.asarray(prior, dtype=np.float64)
    joint = np.array([prior[c] * np.prod([kernel.likelihood(x, c) for x in history])
                      for c in range(kernel.num_contexts)])
    if joint.sum() <= 0:
        raise ImpossibleEvidenceError("History has zero likelihood under every context")
    return joint / joint.sum()


# ----------------------------------------------------------------------
# Gaussian posterior
# ----------------------------------------------------------------------
@dataclass
class GaussianPosterior:
    """eta = mu_post / var_post, lam = 1 / var_post"""
    eta: float = 0.0
    lam: float = 0.0

    @property
    def mean(self) -> float:
        if self.lam <= 0:
            raise DegenerateInputError("Posterior with zero precision has no mean")
        return self.eta / self.lam

    @property
    def variance(self) -> float:
        if self.lam <= 0:
            raise DegenerateInputError("Posterior with zero precision has no finite variance")
        return 1.0 / self.lam


def gaussian_posterior_update(post: GaussianPosterior, mu: float, var: float) -> GaussianPosterior:
    if var <= 0:
        raise DomainError(f"Observation variance must be positive, got {var}")
    return GaussianPosterior(post.eta + mu / var, post.lam + 1.0 / var)


def gaussian_prior(mean: float = 0.0, var: float = 1.0) -> GaussianPosterior:
    """A N(mean, var) prior is the pseudo-observation (mean, var) folded into a fresh posterior"""
    return gaussian_posterior_update(GaussianPosterior(), mean, var)


def gaussian_posterior_fold(history: np.ndarray, post: Optional[GaussianPosterior] = None) -> GaussianPosterior:
    post = GaussianPosterior() if post is None else post
    for mu, var in np.asarray(history, dtype=np.float64).reshape(-1, 2):
        post = gaussian_posterior_update(post, float(mu), float(var))
    return post


def gaussian_bandit_posterior(rewards: Sequence[float], sigma_obs: float) -> GaussianPosterior:
    """Conjugate posterior of c ~ N(0, 1) given rewards r_i ~ N(c, sigma_obs^2)"""
    history = np.column_stack([np.asarray(rewards, dtype=np.float64), np.full(len(rewards), sigma_obs ** 2)])
    return gaussian_posterior_fold(history, gaussian_prior())


class AnalyticGaussianEncoder(Module):
    """Transition (mu, var) -> (mu / var, 1 / var) as a parameter-free MATE encoder"""

    out_dim = 2

    def named_parameters(self, prefix: str = "") -> list:
        return []

    def __call__(self, x: Tensor) -> Tensor:
        mu, var = x[..., 0:1], x[..., 1:2]
        return concat([mu / var, 1.0 / var], axis=-1)


def analytic_mate_raw_sum(history: np.ndarray) -> np.ndarray:
    """Final MATE raw sum of a (mu, var) history under the analytic encoder"""
    history = np.asarray(history, dtype=np.float64).reshape(-1, 2)
    if np.any(history[:, 1] <= 0):
        raise DomainError("Observation variances must be positive")
    config = EncoderConfig(arch="mate", input_dim=2, memory_dim=2, horizon=len(history))
    memory = MateMemory(config, AnalyticGaussianEncoder(), np.random.default_rng(0))
    with no_grad():
        return memory.raw_sums(history[None])[0, -1].data


def verify_memory_sufficiency(history: np.ndarray) -> float:
    """Max componentwise relative deviation between the MATE raw sum and the conjugate fold"""
    history = np.asarray(history, dtype=np.float64).reshape(-1, 2)
    if len(history) == 0:
        raise DomainError("History must be nonempty")
    raw = analytic_mate_raw_sum(history)
    post = gaussian_posterior_fold(history)
    oracle = np.array([post.eta, post.lam])
    scale = np.maximum(np.abs(oracle), 1e-300)
    deviation = float(np.max(np.abs(raw - oracle) / scale))
    logger.debug(f"Sufficiency deviation {deviation:.3e} over {len(history)} observations")
    return deviation


# ----------------------------------------------------------------------
# discretized-grid cross-check
# ----------------------------------------------------------------------
def gaussian_bandit_grid_posterior(rewards: Sequence[float], sigma_obs: float,
                                   grid: Optional[np.ndarray] = None) -> Tuple[np.ndarray, CategoricalPosterior]:
    """Categorical posterior of c on a grid (default 201 points on [-5, 5]) under the N(0, 1) prior"""
    grid = np.linspace(-5.0, 5.0, 201) if grid is None else np.asarray(grid, dtype=np.float64)
    rewards = np.asarray(rewards, dtype=np.float64)
    log_prior = -0.5 * grid ** 2
    log_lik = -0.5 * ((rewards[:, None] - grid[None, :]) / sigma_obs) ** 2
    post = CategoricalPosterior(grid.tolist(), log_prior + log_lik.sum(axis=0))
    return grid, post


def grid_posterior_mean(grid: np.ndarray, post: CategoricalPosterior) -> float:
    return float(np.asarray(grid) @ post.probabilities())
