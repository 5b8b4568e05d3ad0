#!/usr/bin/env python3
"""
Property Check Suites
=====================

Self-contained property checks with fixed internal seeds, run by `mate_cli.py check`.

Suites:
- invariance   MATE raw sums ignore history order; RNN and attention do not
- oracle       discrete posterior vs brute force and permutations; Gaussian sufficiency
- recovery     unit-offset normalization round trip
- injectivity  sum of one-layer embeddings at dimension 2nT+1
- gradients    finite-difference agreement for every trainable component

Every check returns PropertyResult rows; a suite passes iff all of its rows pass.
`scale` shrinks trial counts for quick runs (tests use it).

Author: MATE Pipeline
Version: 1.0
"""

import itertools
import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np

from errors import DegenerateInputError, UsageError
from memory_arch import (EncoderConfig, MateMemory, build_memory, encode_steps, injectivity_probe,
                         normalize_with_unit_offset, recover_unnormalized)
from nn_core import (ACTIVATIONS, Dense, Mlp, RmsNorm, Tensor, apply_activation, build_mlp,
                     finite_difference_check, hypersphere_project, no_grad)
from posterior_oracle import (brute_force_posterior, categorical_prior, discrete_posterior_batch,
                              gaussian_bandit_grid_posterior, gaussian_bandit_posterior, grid_posterior_mean,
                              random_kernel_table, sample_history, verify_memory_sufficiency)
from rl_algos import ObservationEmbedding, QHeads, SacHeads

logger = logging.getLogger(__name__)

SUITES = ("invariance", "oracle", "recovery", "injectivity", "gradients")

INVARIANCE_TOL = 1e-12
VIOLATION_TOL = 1e-9
MIN_VIOLATION_RATE = 0.99
STEP_SEQUENCE_TOL = 1e-10
ORACLE_LOG_TOL = 1e-12
SUFFICIENCY_TOL = 1e-10
GRID_MEAN_TOL = 1e-6
RECOVERY_TOL = 1e-9
GRADIENT_TOL = 1e-4
GRADIENT_EPS = 1e-5
RELU_MARGIN = 1e-3


@dataclass
class PropertyResult:
    suite: str
    name: str
    passed: bool
    measured: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.suite}.{self.name}: {self.measured}"


def _trials(base: int, scale: float) -> int:
    return max(1, int(round(base * scale)))


# ----------------------------------------------------------------------
# invariance
# ----------------------------------------------------------------------
def _rel(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), 1e-300))


def check_invariance(scale: float = 1.0, seed: int = 101) -> List[PropertyResult]:
    trials = _trials(1000, scale)
    rng = np.random.default_rng(seed)
    n, m, horizon = 4, 8, 64
    mate_worst = 0.0
    violations = {"rnn": 0, "attn": 0}
    for _ in range(trials):
        length = int(rng.integers(2, horizon + 1))
        xs = rng.normal(size=(length, n))
        perm = rng.permutation(length)
        if np.array_equal(perm, np.arange(length)):
            perm = np.roll(perm, 1)
        arch_seed = int(rng.integers(2 ** 31))
        with no_grad():
            mate = build_memory(EncoderConfig("mate", n, m, horizon), np.random.default_rng(arch_seed))
            raw = mate.raw_sums(np.stack([xs, xs[perm]]))[:, -1].data
            readout = mate.encode_sequence(np.stack([xs, xs[perm]]))[:, -1].data
            mate_worst = max(mate_worst, _rel(raw[0], raw[1]), _rel(readout[0], readout[1]))
            for arch in violations:
                memory = build_memory(EncoderConfig(arch, n, m, horizon, positional_encoding=arch == "attn"),
                                      np.random.default_rng(arch_seed))
                final = memory.encode_sequence(np.stack([xs, xs[perm]]))[:, -1].data
                if _rel(final[0], final[1]) > VIOLATION_TOL:
                    violations[arch] += 1

    results = [PropertyResult("invariance", "mate_permutation", mate_worst <= INVARIANCE_TOL,
                              f"max_rel_err={mate_worst:.3e} over {trials} histories (tol {INVARIANCE_TOL:g})")]
    for arch, count in violations.items():
        rate = count / trials
        results.append(PropertyResult("invariance", f"{arch}_order_sensitive", rate >= MIN_VIOLATION_RATE,
                                      f"violation_rate={rate:.4f} (fail-as-expected needs >= {MIN_VIOLATION_RATE})"))

    worst_gap = 0.0
    for arch in ("mate", "rnn", "attn"):
        memory = build_memory(EncoderConfig(arch, n, m, 16, positional_encoding=arch == "attn"),
                              np.random.default_rng(seed))
        xs = rng.normal(size=(16, n))
        with no_grad():
            sequence = memory.encode_sequence(xs[None]).data[0]
        worst_gap = max(worst_gap, float(np.max(np.abs(encode_steps(memory, xs) - sequence))))
    results.append(PropertyResult("invariance", "step_sequence_agreement", worst_gap <= STEP_SEQUENCE_TOL,
                                  f"max_abs_gap={worst_gap:.3e} across mate/rnn/attn"))
    return results


# ----------------------------------------------------------------------
# oracle
# ----------------------------------------------------------------------
def _log_gap(a: np.ndarray, b: np.ndarray) -> float:
    """Max abs difference of log-probabilities; mismatched zero-support patterns count as infinite"""
    if not np.array_equal(np.isfinite(a), np.isfinite(b)):
        return math.inf
    finite = np.isfinite(a)
    return float(np.max(np.abs(a[finite] - b[finite]))) if finite.any() else 0.0


def check_oracle(scale: float = 1.0, seed: int = 202) -> List[PropertyResult]:
    rng = np.random.default_rng(seed)
    kernels = _trials(1000, scale)
    brute_gap = perm_gap = 0.0
    for _ in range(kernels):
        kernel = random_kernel_table(rng, n_states=2, n_actions=2, n_contexts=3, sparsity=0.3)
        context = int(rng.integers(kernel.num_contexts))
        history = sample_history(kernel, rng, context, 4)
        prior = categorical_prior(kernel.contexts, kernel.prior)
        log_post = discrete_posterior_batch(prior, kernel, history).log_probabilities()
        with np.errstate(divide="ignore"):
            brute = np.log(brute_force_posterior(kernel, history))
        brute_gap = max(brute_gap, _log_gap(log_post, brute))
        for order in itertools.permutations(range(len(history))):
            permuted = discrete_posterior_batch(prior, kernel, [history[i] for i in order]).log_probabilities()
            perm_gap = max(perm_gap, _log_gap(log_post, permuted))

    trials = _trials(1000, scale)
    sufficiency = 0.0
    for _ in range(trials):
        history = np.column_stack([rng.normal(size=100), rng.uniform(0.1, 2.0, size=100)])
        sufficiency = max(sufficiency, verify_memory_sufficiency(history))

    grid_trials = _trials(100, scale)
    grid_gap = 0.0
    grid = np.linspace(-6.0, 6.0, 1201)
    for _ in range(grid_trials):
        c = rng.normal()
        rewards = c + 0.5 * rng.normal(size=20)
        exact = gaussian_bandit_posterior(rewards, 0.5).mean
        values, post = gaussian_bandit_grid_posterior(rewards, 0.5, grid)
        grid_gap = max(grid_gap, abs(grid_posterior_mean(values, post) - exact))

    return [
        PropertyResult("oracle", "discrete_vs_brute_force", brute_gap <= ORACLE_LOG_TOL,
                       f"max_log_gap={brute_gap:.3e} over {kernels} kernels"),
        PropertyResult("oracle", "discrete_order_invariance", perm_gap <= ORACLE_LOG_TOL,
                       f"max_log_gap={perm_gap:.3e} over all orders of 4-step histories"),
        PropertyResult("oracle", "gaussian_sufficiency", sufficiency <= SUFFICIENCY_TOL,
                       f"max_rel_err={sufficiency:.3e} over {trials} histories of length 100"),
        PropertyResult("oracle", "gaussian_grid_agreement", grid_gap <= GRID_MEAN_TOL,
                       f"max_mean_gap={grid_gap:.3e} over {grid_trials} bandit histories"),
    ]


# ----------------------------------------------------------------------
# recovery
# ----------------------------------------------------------------------
def check_recovery(scale: float = 1.0, seed: int = 303) -> List[PropertyResult]:
    rng = np.random.default_rng(seed)
    trials = _trials(1000, scale)
    worst = 0.0
    for _ in range(trials):
        dim = int(rng.integers(8, 257))
        m_tilde = rng.normal(size=dim) * 10.0 ** rng.uniform(-2.0, 2.0)
        radius = math.sqrt(dim + 1)
        m_hat = normalize_with_unit_offset(m_tilde, radius)
        worst = max(worst, _rel(m_tilde, recover_unnormalized(m_hat, radius)))
    try:
        recover_unnormalized(np.array([1.0, 0.0]))
        rejected = False
    except DegenerateInputError:
        rejected = True
    return [
        PropertyResult("recovery", "round_trip", worst <= RECOVERY_TOL,
                       f"max_rel_err={worst:.3e} over {trials} vectors in R^8..R^256 (tol {RECOVERY_TOL:g})"),
        PropertyResult("recovery", "degenerate_rejected", rejected, "zero last coordinate raises DegenerateInputError"),
    ]


# ----------------------------------------------------------------------
# injectivity
# ----------------------------------------------------------------------
def check_injectivity(scale: float = 1.0, seed: int = 404) -> List[PropertyResult]:
    report = injectivity_probe(n=2, horizon=4, trials=_trials(10000, scale), seed=seed)
    return [
        PropertyResult("injectivity", "no_collisions",
                       report.collisions == 0 and report.min_distance > report.threshold,
                       f"m={report.memory_dim} pairs={report.pairs} collisions={report.collisions} "
                       f"min_distance={report.min_distance:.3e} (threshold {report.threshold:g})"),
        PropertyResult("injectivity", "normalized_distinct", report.normalized_min_distance > 0,
                       f"m={report.memory_dim + 1} normalized min_distance={report.normalized_min_distance:.3e}"),
    ]


# ----------------------------------------------------------------------
# gradients
# ----------------------------------------------------------------------
def _relu_margin(mlp: Mlp, x: np.ndarray) -> float:
    """Smallest |pre-activation| feeding a relu; finite differences straddling a kink are meaningless"""
    margin = math.inf
    h = x
    for layer in mlp.layers:
        pre = h @ layer.A.data.T + layer.b.data
        if layer.activation == "relu":
            margin = min(margin, float(np.min(np.abs(pre))))
        h = apply_activation(layer.activation, Tensor(pre)).data
    return margin


def _weighted(out: Tensor, weights: np.ndarray) -> Tensor:
    return (out * weights).sum()


def _component_cases() -> Dict[str, Callable[[np.random.Generator], Tuple[Callable[[], Tensor], list]]]:
    """component -> builder(rng) returning (objective, params)"""
    smooth = ("tanh", "gelu", "softplus")

    def dense_case(activation: str):
        def build(rng):
            while True:
                layer = Dense(3, 4, activation, rng, name="dense")
                layer.b.data = rng.normal(size=4)
                x = rng.normal(size=(5, 3))
                if activation != "relu" or np.min(np.abs(x @ layer.A.data.T + layer.b.data)) > RELU_MARGIN:
                    break
            w = rng.normal(size=(5, 4))
            return (lambda: _weighted(layer(Tensor(x)), w)), layer.parameters()
        return build

    def mlp_case(rng):
        activation = ("tanh", "relu")[int(rng.integers(2))]
        while True:
            mlp = build_mlp(3, [5], 2, activation, rng=rng)
            x = rng.normal(size=(4, 3))
            if _relu_margin(mlp, x) > RELU_MARGIN:
                break
        w = rng.normal(size=(4, 2))
        return (lambda: _weighted(mlp(Tensor(x)), w)), mlp.parameters()

    def rms_case(rng):
        norm = RmsNorm(4)
        norm.gain.data = rng.normal(size=4)
        x = Tensor(rng.normal(size=(3, 4)), requires_grad=True, name="x")
        w = rng.normal(size=(3, 4))
        return (lambda: _weighted(norm(x), w)), norm.parameters() + [x]

    def projection_case(rng):
        v = Tensor(rng.normal(size=(3, 5)), requires_grad=True, name="v")
        psi = Tensor(rng.normal(size=5), requires_grad=True, name="psi")
        w = rng.normal(size=(3, 5))
        return (lambda: _weighted(hypersphere_project(v, psi), w)), [v, psi]

    def memory_case(arch: str):
        def build(rng):
            activation = smooth[int(rng.integers(len(smooth)))]
            config = EncoderConfig(arch, 3, 4, 4, activation=activation, positional_encoding=arch == "attn")
            memory = build_memory(config, rng)
            xs = rng.normal(size=(2, int(rng.integers(1, 5)), 3))
            w = rng.normal(size=xs.shape[:-1] + (4,))
            return (lambda: _weighted(memory.encode_sequence(xs), w)), memory.parameters()
        return build

    def obs_embedding_case(rng):
        embed = ObservationEmbedding(3, 4, rng)
        embed.dense.b.data = rng.normal(size=4)
        obs = rng.normal(size=(3, 3))
        w = rng.normal(size=(3, 4))
        return (lambda: _weighted(embed(Tensor(obs)), w)), embed.parameters()

    def q_heads_case(rng):
        while True:
            heads = QHeads(4, 3, [6], rng)
            features = rng.normal(size=(3, 4))
            if _relu_margin(heads.online, features) > RELU_MARGIN:
                break
        w = rng.normal(size=(3, 3))
        return (lambda: _weighted(heads.online(Tensor(features)), w)), heads.online_parameters()

    def squashed_gaussian_case(rng):
        mean = Tensor(rng.normal(0.0, 0.5, size=(3, 2)), requires_grad=True, name="mean")
        log_std = Tensor(rng.uniform(-1.0, 0.5, size=(3, 2)), requires_grad=True, name="log_std")
        noise = rng.normal(size=(3, 2))
        w = rng.normal(size=(3, 2))
        v = rng.normal(size=3)

        def objective():
            action, log_prob = SacHeads.squash(mean, log_std, noise)
            return _weighted(action, w) + _weighted(log_prob, v)
        return objective, [mean, log_std]

    cases = {f"dense_{a}": dense_case(a) for a in ACTIVATIONS}
    cases.update({"mlp": mlp_case, "rms_norm": rms_case, "hypersphere_project": projection_case,
                  "mate_memory": memory_case("mate"), "rnn_memory": memory_case("rnn"),
                  "attn_memory": memory_case("attn"), "observation_embedding": obs_embedding_case,
                  "q_heads": q_heads_case, "squashed_gaussian": squashed_gaussian_case})
    return cases


def check_gradients(scale: float = 1.0, seed: int = 505) -> List[PropertyResult]:
    configs = _trials(100, scale)
    results = []
    for index, (component, build) in enumerate(_component_cases().items()):
        rng = np.random.default_rng([seed, index])
        worst = 0.0
        for _ in range(configs):
            objective, params = build(rng)
            worst = max(worst, finite_difference_check(objective, params, GRADIENT_EPS))
        results.append(PropertyResult("gradients", component, worst <= GRADIENT_TOL,
                                      f"max_rel_err={worst:.3e} over {configs} configs (eps {GRADIENT_EPS:g})"))
    return results


# ----------------------------------------------------------------------
# driver
# ----------------------------------------------------------------------
SUITE_RUNNERS: Dict[str, Callable[..., List[PropertyResult]]] = {
    "invariance": check_invariance,
    "oracle": check_oracle,
    "recovery": check_recovery,
    "injectivity": check_injectivity,
    "gradients": check_gradients,
}


def resolve_suites(name: str) -> Sequence[str]:
    if name == "all":
        return SUITES
    if name not in SUITE_RUNNERS:
        raise UsageError(f"Unknown check suite '{name}' (choose from {', '.join(SUITES)}, all)")
    return (name,)


def run_checks(name: str, scale: float = 1.0) -> List[PropertyResult]:
    results: List[PropertyResult] = []
    for suite in resolve_suites(name):
        logger.info(f"🔍 Running {suite} checks")
        suite_results = SUITE_RUNNERS[suite](scale=scale)
        failed = [r for r in suite_results if not r.passed]
        logger.info(f"{'✅' if not failed else '❌'} {suite}: {len(suite_results) - len(failed)}/"
                    f"{len(suite_results)} properties passed")
        results.extend(suite_results)
    return results


def report_lines(results: Sequence[PropertyResult]) -> List[str]:
    passed = sum(r.passed for r in results)
    return [r.line() for r in results] + ["", f"{passed}/{len(results)} properties passed"]
