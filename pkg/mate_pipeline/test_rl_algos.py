"""Learner tests: replay, batching, DDQN and SAC updates, checkpoint round trips"""

import numpy as np
import pytest

from cmdp_envs import (DiscreteSpace, EpisodeRecord, OraclePolicy, TMazeEnv, TMazeSpec, make_env,
                       run_scripted_episode)
from errors import CheckpointMismatchError, ConfigurationError, UsageError
from memory_arch import EncoderConfig, build_memory, episode_transitions
from nn_core import Tensor, compute_gradients, no_grad, snapshot
from rl_algos import (EpisodeBatch, QHeads, ReplayBuffer, SacHeads, TrainConfig, build_agent, build_optimizers,
                      collect_episode, copy_parameters, ddqn_loss, ddqn_update, epsilon_schedule, load_agent,
                      make_batch, sac_actor_loss, sac_update, save_agent, soft_update)


def tmaze(corridor_len=4, seed=0):
    return TMazeEnv(TMazeSpec("passive", corridor_len + 1, corridor_len), seed=seed)


def agent_for(env, arch="mate", algo="ddqn", seed=0, **train):
    rng = np.random.default_rng(seed)
    memory = build_memory(EncoderConfig(arch, env.transition_dim, 8, env.horizon,
                                        positional_encoding=arch == "attn"), rng)
    config = TrainConfig(algo=algo, hidden_sizes=(16,), lr=1e-3, **train)
    return build_agent(memory, env.observation_dim, env.action_space, config, rng, obs_embed_dim=4), config


def scripted_records(env, count):
    return [run_scripted_episode(env, OraclePolicy(), seed=s) for s in range(count)]


class TestSchedulesAndPlumbing:
    def test_epsilon_schedule(self):
        assert epsilon_schedule(0, 1000, 10) == 1.0
        assert epsilon_schedule(50, 1000, 10) == pytest.approx(0.55)
        assert epsilon_schedule(100, 1000, 10) == pytest.approx(0.1)
        assert epsilon_schedule(999, 1000, 10) == pytest.approx(0.1)
        assert epsilon_schedule(0, 1000, 10, fraction=0.0) == pytest.approx(0.1)

    def test_soft_update(self):
        target = [Tensor(np.zeros(2))]
        online = [Tensor(np.ones(2))]
        soft_update(target, online, 0.25)
        np.testing.assert_allclose(target[0].data, [0.25, 0.25])
        copy_parameters(target, online)
        np.testing.assert_array_equal(target[0].data, [1.0, 1.0])
        with pytest.raises(UsageError):
            soft_update(target, online, 1.5)
        with pytest.raises(UsageError):
            soft_update(target, [Tensor(np.ones(3))], 0.5)

    def test_train_config_validation(self):
        with pytest.raises(ConfigurationError, match="train.gamma"):
            TrainConfig(gamma=0.0)
        with pytest.raises(ConfigurationError, match="train.grad_clip"):
            TrainConfig(grad_clip=-1.0)
        assert TrainConfig(grad_clip=None).grad_clip is None


class TestReplayBuffer:
    def test_evicts_oldest_by_transitions(self):
        env = tmaze()
        buffer = ReplayBuffer(capacity=12)
        records = scripted_records(env, 3)
        for record in records:
            buffer.add(record)
        assert len(buffer) == 2
        assert buffer.transitions == 10
        assert buffer.episodes[0] is records[1]

    def test_oversized_episode_rejected(self):
        buffer = ReplayBuffer(capacity=3)
        with pytest.raises(UsageError):
            buffer.add(scripted_records(tmaze(), 1)[0])

    def test_sample_distinct_and_capped(self, rng):
        buffer = ReplayBuffer(capacity=100)
        for record in scripted_records(tmaze(), 6):
            buffer.add(record)
        batch = buffer.sample(4, rng)
        assert len({id(r) for r in batch}) == 4
        assert len(buffer.sample(4, rng, max_transitions=12)) == 2
        assert len(buffer.sample(4, rng, max_transitions=1)) == 1

    def test_empty_sample(self, rng):
        with pytest.raises(UsageError):
            ReplayBuffer(10).sample(1, rng)

    def test_save_and_load(self, tmp_path):
        buffer = ReplayBuffer(capacity=100)
        for record in scripted_records(tmaze(), 3):
            buffer.add(record)
        buffer.save(tmp_path / "replay.mate")
        loaded = ReplayBuffer.load(tmp_path / "replay.mate", capacity=100)
        assert len(loaded) == 3
        assert loaded.transitions == buffer.transitions


class TestBatching:
    def test_padding_and_mask(self):
        env = TMazeEnv(TMazeSpec("passive", 5, 4), seed=0)
        long = run_scripted_episode(env, OraclePolicy(), seed=0)
        short_obs = [env.reset(seed=1)]
        obs, reward, done = env.step(1)
        short = EpisodeRecord(np.array(short_obs + [obs]), np.array([1]), np.array([reward]), np.array([False]),
                              env.context)
        batch: EpisodeBatch = make_batch([long, short], env.action_space)
        assert batch.transitions.shape == (2, 5, env.transition_dim)
        assert batch.observations.shape == (2, 6, 3)
        np.testing.assert_array_equal(batch.mask[1], [1, 0, 0, 0, 0])
        np.testing.assert_array_equal(batch.transitions[1, 1:], 0.0)
        assert batch.size == 2 and batch.max_length == 5

    def test_empty_batch(self):
        with pytest.raises(UsageError):
            make_batch([], tmaze().action_space)


class TestAgents:
    def test_algorithm_must_match_action_space(self):
        with pytest.raises(ConfigurationError):
            agent_for(make_env("gauss_bandit", 5), algo="ddqn")
        with pytest.raises(ConfigurationError):
            agent_for(tmaze(), algo="sac")

    def test_target_stack_starts_equal(self):
        nets, _ = agent_for(tmaze())
        online = nets.encoder.parameters() + nets.heads.online_parameters()
        targets = nets.target_encoder.parameters() + nets.heads.target.parameters()
        for o, t in zip(online, targets):
            np.testing.assert_array_equal(o.data, t.data)
            assert o is not t

    def test_greedy_collection_is_deterministic(self):
        env = tmaze()
        nets, _ = agent_for(env)
        first = collect_episode(env, nets, np.random.default_rng(0), greedy=True, seed=3)
        second = collect_episode(env, nets, np.random.default_rng(99), greedy=True, seed=3)
        np.testing.assert_array_equal(first.actions, second.actions)
        assert first.readouts.shape == (first.length + 1, 8)

    @pytest.mark.parametrize("arch", ["mate", "rnn", "attn", "memoryless"])
    def test_ddqn_update_moves_online_and_targets(self, arch):
        env = tmaze()
        nets, config = agent_for(env, arch=arch, tau=0.5)
        optimizers = build_optimizers(nets, config)
        batch = make_batch(scripted_records(env, 4), env.action_space)
        before_online = snapshot(nets.heads.online_parameters())
        before_target = snapshot(nets.heads.target.parameters())
        loss = ddqn_update(nets, batch, config, optimizers)
        assert np.isfinite(loss)
        assert any(not np.array_equal(a, p.data) for a, p in zip(before_online, nets.heads.online_parameters()))
        assert any(not np.array_equal(a, p.data) for a, p in zip(before_target, nets.heads.target.parameters()))

    def test_ddqn_loss_decreases_on_fixed_batch(self):
        env = tmaze()
        nets, config = agent_for(env, grad_clip=None)
        optimizers = build_optimizers(nets, config)
        batch = make_batch(scripted_records(env, 4), env.action_space)
        first = ddqn_loss(nets, batch, config.gamma).item()
        for _ in range(60):
            ddqn_update(nets, batch, config, optimizers)
        assert ddqn_loss(nets, batch, config.gamma).item() < first

    def test_sac_update(self):
        env = make_env("gauss_bandit", 5, seed=0)
        nets, config = agent_for(env, algo="sac")
        assert isinstance(nets.heads, SacHeads)
        optimizers = build_optimizers(nets, config)
        records = [collect_episode(env, nets, np.random.default_rng(s)) for s in range(3)]
        batch = make_batch(records, env.action_space)
        actor_before = snapshot(nets.heads.actor.parameters())
        encoder_before = snapshot(nets.encoder.parameters())
        losses = sac_update(nets, batch, config, optimizers, np.random.default_rng(0))
        assert set(losses) == {"critic_loss", "actor_loss"}
        assert all(np.isfinite(v) for v in losses.values())
        assert any(not np.array_equal(a, p.data) for a, p in zip(actor_before, nets.heads.actor.parameters()))
        assert any(not np.array_equal(a, p.data) for a, p in zip(encoder_before, nets.encoder.parameters()))

    def test_sac_actions_in_bounds(self):
        env = make_env("point_dir", 6, seed=0)
        nets, _ = agent_for(env, algo="sac")
        record = collect_episode(env, nets, np.random.default_rng(0))
        assert np.all(np.abs(record.actions) <= 1.0)


class TestAgentCheckpoints:
    def test_round_trip_restores_greedy_actions(self, tmp_path):
        env = tmaze()
        nets, config = agent_for(env, seed=1)
        optimizers = build_optimizers(nets, config)
        ddqn_update(nets, make_batch(scripted_records(env, 2), env.action_space), config, optimizers)
        save_agent(tmp_path / "final.mate", nets)
        fresh, _ = agent_for(env, seed=2)
        load_agent(tmp_path / "final.mate", fresh)
        for (name, a), (_, b) in zip(nets.named_parameters(), fresh.named_parameters()):
            assert a.data.tobytes() == b.data.tobytes(), name
        a = collect_episode(env, nets, np.random.default_rng(0), greedy=True, seed=4)
        b = collect_episode(env, fresh, np.random.default_rng(0), greedy=True, seed=4)
        np.testing.assert_array_equal(a.actions, b.actions)

    def test_architecture_mismatch(self, tmp_path):
        env = tmaze()
        nets, _ = agent_for(env, arch="mate")
        save_agent(tmp_path / "final.mate", nets)
        other, _ = agent_for(env, arch="rnn")
        with pytest.raises(CheckpointMismatchError):
            load_agent(tmp_path / "final.mate", other)

    def test_q_heads_type(self):
        nets, _ = agent_for(tmaze())
        assert isinstance(nets.heads, QHeads)


class TestUpdateSemantics:
    def test_one_step_episode_td_loss(self):
        env = tmaze()
        nets, config = agent_for(env)
        for head in (nets.heads.online, nets.heads.target):
            head.layers[-1].A.data[:] = 0.0
            head.layers[-1].b.data[:] = 0.0
        obs = env.reset(seed=0)
        record = EpisodeRecord(np.array([obs, obs]), np.array([0]), np.array([1.0]), np.array([True]), env.context)
        batch = make_batch([record], env.action_space)
        assert ddqn_loss(nets, batch, config.gamma).item() == 1.0

    def test_target_lag_shrinks_geometrically(self, rng):
        target = [Tensor(rng.normal(size=5))]
        online = [Tensor(rng.normal(size=5))]
        gap = np.linalg.norm(target[0].data - online[0].data)
        for _ in range(50):
            soft_update(target, online, 0.1)
        assert np.linalg.norm(target[0].data - online[0].data) == pytest.approx(gap * 0.9 ** 50, rel=1e-9)

    @pytest.mark.parametrize("freeze", [True, False])
    def test_actor_step_isolation(self, freeze):
        env = make_env("point_dir", 5, seed=0)
        nets, config = agent_for(env, algo="sac", freeze_critic=freeze)
        optimizers = build_optimizers(nets, config)
        records = [collect_episode(env, nets, np.random.default_rng(s)) for s in range(2)]
        batch = make_batch(records, env.action_space)
        watched = nets.encoder.parameters() + nets.heads.critic_parameters()
        before = snapshot(watched)
        loss = sac_actor_loss(nets, batch, np.random.default_rng(0), config.freeze_critic)
        optimizers.actor.step(compute_gradients(loss, optimizers.actor.params))
        unchanged = [a.tobytes() == p.data.tobytes() for a, p in zip(before, watched)]
        if freeze:
            assert all(unchanged)
        else:
            assert not all(unchanged)

    def test_collection_readouts_match_sequence_encoding(self):
        env = tmaze()
        nets, _ = agent_for(env, arch="attn")
        record = collect_episode(env, nets, np.random.default_rng(0), epsilon=1.0)
        xs = episode_transitions(record, env.action_space)
        with no_grad():
            sequence = nets.memory.encode_sequence(xs[None]).data[0]
        np.testing.assert_allclose(record.readouts[1:], sequence, rtol=1e-6, atol=1e-9)


class TestLearningSanity:
    MEANS = np.array([0.3, -0.4, 0.8])

    def bandit_records(self):
        """One-step episodes from a single state; the context shifts each reward by +-0.2"""
        obs = np.array([[1.0], [1.0]])
        return [EpisodeRecord(obs, np.array([a]), np.array([self.MEANS[a] + 0.2 * c]), np.array([True]),
                              np.array([c]))
                for a in range(3) for c in (1.0, -1.0)]

    def test_memoryless_ddqn_fits_expected_rewards(self):
        space = DiscreteSpace(3)
        rng = np.random.default_rng(0)
        memory = build_memory(EncoderConfig("memoryless", 6, 8, 1), rng)
        config = TrainConfig(hidden_sizes=(16,), lr=1e-3, grad_clip=None)
        nets = build_agent(memory, 1, space, config, rng, obs_embed_dim=4)
        optimizers = build_optimizers(nets, config)
        batch = make_batch(self.bandit_records(), space)
        for _ in range(3000):
            ddqn_update(nets, batch, config, optimizers)
        with no_grad():
            q = nets.heads.online(nets.encoder.sequence_features(batch)).data[0, 0]
        np.testing.assert_allclose(q, self.MEANS, atol=0.05)
