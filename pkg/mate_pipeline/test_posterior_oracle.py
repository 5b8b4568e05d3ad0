"""Posterior oracle tests on the fixture kernel and on random kernels"""

import itertools
from pathlib import Path

import numpy as np
import pytest

from cmdp_envs import GaussBanditEnv
from errors import DataError, DegenerateInputError, DomainError, ImpossibleEvidenceError
from posterior_oracle import (DiscreteTransition, GaussianPosterior, KernelTable, brute_force_posterior,
                              categorical_prior, discrete_posterior_batch, discrete_posterior_update,
                              gaussian_bandit_grid_posterior, gaussian_bandit_posterior, gaussian_posterior_fold,
                              gaussian_posterior_update, gaussian_prior, grid_posterior_mean, random_kernel_table,
                              sample_history, verify_memory_sufficiency)

FIXTURE = Path(__file__).parent / "fixtures" / "two_context_kernel.json"


@pytest.fixture
def kernel():
    return KernelTable.from_json(FIXTURE)


class TestKernelTable:
    def test_fixture_loads(self, kernel):
        assert kernel.contexts == ["left_biased", "right_biased"]
        assert kernel.likelihood(DiscreteTransition(0, 0, 1.0, 0), 0) == 0.75
        assert kernel.likelihood(DiscreteTransition(0, 0, 1.0, 1), 0) == 0.0

    def test_unnormalized_row_rejected(self):
        with pytest.raises(DataError):
            KernelTable(["a"], {(0, 0, 0): {(0, 0.0): 0.5, (1, 0.0): 0.4}})

    def test_unknown_context_rejected(self):
        data = {"contexts": ["a"], "entries": [{"state": 0, "action": 0, "context": "b",
                                                "outcomes": [{"next_state": 0, "reward": 0.0, "prob": 1.0}]}]}
        with pytest.raises(DataError):
            KernelTable.from_dict(data)

    def test_json_round_trip(self, kernel, tmp_path):
        again = KernelTable.from_json(kernel.to_json(tmp_path / "k.json"))
        assert again.table == kernel.table
        np.testing.assert_array_equal(again.prior, kernel.prior)

    def test_random_kernel_rows_normalized(self, rng):
        table = random_kernel_table(rng, n_contexts=3, sparsity=0.5)
        for row in table.table.values():
            assert abs(sum(row.values()) - 1.0) <= 1e-12


class TestDiscretePosterior:
    def test_single_update(self, kernel):
        post = discrete_posterior_update(categorical_prior(kernel.contexts), kernel, DiscreteTransition(0, 0, 1.0, 0))
        np.testing.assert_allclose(post.probabilities(), [0.75, 0.25], rtol=1e-12)

    def test_zero_support_is_minus_infinity(self, kernel):
        history = [DiscreteTransition(0, 0, 1.0, 0), DiscreteTransition(1, 0, 0.0, 0)]
        post = discrete_posterior_batch(categorical_prior(kernel.contexts), kernel, history)
        log_p = post.log_probabilities()
        assert log_p[0] == 0.0
        assert np.isneginf(log_p[1])

    def test_impossible_evidence(self, kernel):
        history = [DiscreteTransition(1, 0, 0.0, 0), DiscreteTransition(1, 0, 1.0, 1)]
        with pytest.raises(ImpossibleEvidenceError):
            discrete_posterior_batch(categorical_prior(kernel.contexts), kernel, history)
        with pytest.raises(ImpossibleEvidenceError):
            brute_force_posterior(kernel, history)

    def test_matches_brute_force_and_every_order(self, rng):
        for _ in range(50):
            table = random_kernel_table(rng, n_contexts=3, sparsity=0.3)
            history = sample_history(table, rng, int(rng.integers(3)), 4)
            prior = categorical_prior(table.contexts, table.prior)
            log_post = discrete_posterior_batch(prior, table, history).log_probabilities()
            with np.errstate(divide="ignore"):
                brute = np.log(brute_force_posterior(table, history))
            finite = np.isfinite(brute)
            np.testing.assert_array_equal(np.isfinite(log_post), finite)
            np.testing.assert_allclose(log_post[finite], brute[finite], atol=1e-12)
            for order in itertools.permutations(range(4)):
                permuted = discrete_posterior_batch(prior, table, [history[i] for i in order]).log_probabilities()
                np.testing.assert_allclose(permuted[finite], log_post[finite], atol=1e-12)


class TestGaussianPosterior:
    def test_prior_is_pseudo_observation(self):
        prior = gaussian_prior(2.0, 4.0)
        assert prior.mean == pytest.approx(2.0)
        assert prior.variance == pytest.approx(4.0)

    def test_conjugate_update(self):
        post = gaussian_posterior_update(gaussian_prior(0.0, 1.0), 2.0, 1.0)
        assert post.mean == pytest.approx(1.0)
        assert post.variance == pytest.approx(0.5)

    def test_zero_precision_has_no_mean(self):
        with pytest.raises(DegenerateInputError):
            GaussianPosterior().mean

    def test_bad_variance(self):
        with pytest.raises(DomainError):
            gaussian_posterior_update(GaussianPosterior(), 0.0, 0.0)

    def test_fold_is_order_free(self, rng):
        history = np.column_stack([rng.normal(size=20), rng.uniform(0.1, 2.0, size=20)])
        a = gaussian_posterior_fold(history)
        b = gaussian_posterior_fold(history[::-1])
        assert a.eta == pytest.approx(b.eta, rel=1e-12, abs=1e-12)
        assert a.lam == pytest.approx(b.lam, rel=1e-12)

    def test_precision_strictly_increases(self, rng):
        variances = np.concatenate([rng.uniform(0.01, 5.0, size=200), [1e6, 1e-6]])
        post = gaussian_prior()
        for var in variances:
            updated = gaussian_posterior_update(post, float(rng.normal()), float(var))
            assert updated.lam > post.lam
            post = updated

    def test_memory_sufficiency(self, rng):
        for _ in range(20):
            history = np.column_stack([rng.normal(size=100), rng.uniform(0.1, 2.0, size=100)])
            assert verify_memory_sufficiency(history) <= 1e-10

    def test_sufficiency_needs_history(self):
        with pytest.raises(DomainError):
            verify_memory_sufficiency(np.zeros((0, 2)))

    def test_bandit_posterior_matches_grid(self, rng):
        grid = np.linspace(-6.0, 6.0, 1201)
        for _ in range(10):
            rewards = rng.normal() + 0.5 * rng.normal(size=20)
            exact = gaussian_bandit_posterior(rewards, 0.5)
            values, post = gaussian_bandit_grid_posterior(rewards, 0.5, grid)
            assert abs(grid_posterior_mean(values, post) - exact.mean) <= 1e-6
            # prior precision 1 plus 20 observations at precision 4
            assert exact.lam == pytest.approx(81.0)

    def test_grid_posterior_concentrates_on_context(self):
        env = GaussBanditEnv(horizon=20, sigma_obs=0.5, seed=17)
        hits = 0
        for _ in range(1000):
            env.reset()
            rewards = [env.step(np.array([0.0]))[1] for _ in range(20)]
            grid, post = gaussian_bandit_grid_posterior(rewards, 0.5)
            lam = gaussian_bandit_posterior(rewards, 0.5).lam
            hits += abs(grid_posterior_mean(grid, post) - env.context[0]) <= 3.0 / np.sqrt(lam)
        assert hits >= 990
