#!/usr/bin/env python3
"""
Training and Evaluation Loops
=============================

Glue between a resolved RunConfig and the learners:

    collect (incremental memory) -> store -> sample whole episodes ->
    update (sequence memory) -> soft-update targets -> metrics row

Periodic greedy evaluation fills the `eval_return` column; checkpoints and the
replay buffer are written every `train.ckpt_every` episodes and at the end.

Author: MATE Pipeline
Version: 1.0
"""

import logging
import time
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from cmdp_envs import CmdpEnv, ScriptedPolicy, make_env
from config_manager import RunConfig, to_train_config
from errors import NumericError
from memory_arch import EncoderConfig, build_memory
from output_utils import TIMING_COLUMNS, CsvAppender, open_metrics, write_json
from path_manager import RunPaths
from rl_algos import (AgentNetworks, QHeads, ReplayBuffer, build_agent, build_optimizers, collect_episode,
                      ddqn_update, epsilon_schedule, make_batch, sac_update, save_agent)

logger = logging.getLogger(__name__)


@dataclass
class TrainSummary:
    episodes: int
    final_eval: Optional[float]
    best_eval: Optional[float]
    mean_return_last_100: float
    final_checkpoint: str


def make_run_env(config: RunConfig, seed: int) -> CmdpEnv:
    env = config.env
    return make_env(env.name, env.horizon, seed=seed, corridor_len=env.corridor_len, sigma_obs=env.sigma_obs)


def build_networks(config: RunConfig, env: CmdpEnv) -> AgentNetworks:
    """Memory, feature encoder and heads, initialized from the `init` sub-seed"""
    rng = np.random.default_rng(config.seeds["init"])
    memory_cfg = EncoderConfig(arch=config.memory.arch, input_dim=env.transition_dim, memory_dim=config.memory.dim,
                               horizon=config.memory.horizon, activation=config.memory.activation,
                               positional_encoding=config.memory.positional_encoding, dtype=config.train.dtype)
    memory = build_memory(memory_cfg, rng)
    return build_agent(memory, env.observation_dim, env.action_space, to_train_config(config), rng,
                       obs_embed_dim=config.memory.obs_embed_dim)


def evaluate_policy(env: CmdpEnv, nets: AgentNetworks, episodes: int, rng: np.random.Generator,
                    scripted: Optional[ScriptedPolicy] = None) -> np.ndarray:
    """Returns of `episodes` greedy (or scripted) episodes"""
    returns = np.empty(episodes)
    for i in range(episodes):
        record = collect_episode(env, nets, rng, greedy=True, scripted=scripted)
        returns[i] = record.total_return
    return returns


def summarize_returns(returns: np.ndarray) -> Dict[str, float]:
    return {"episodes": int(len(returns)), "mean_return": float(np.mean(returns)), "std_return": float(np.std(returns)),
            "min_return": float(np.min(returns)), "max_return": float(np.max(returns))}


def run_training(config: RunConfig, run: RunPaths, workers: int = 1) -> TrainSummary:
    train_cfg = to_train_config(config)
    t = config.train
    env = make_run_env(config, config.seeds["env"])
    eval_env = make_run_env(config, config.seeds["eval"])
    explore_rng = np.random.default_rng(config.seeds["exploration"])
    eval_rng = np.random.default_rng(config.seeds["eval"])

    nets = build_networks(config, env)
    nets.set_workers(workers)
    optimizers = build_optimizers(nets, train_cfg)
    buffer = ReplayBuffer(t.buffer_size)
    dtype = nets.memory.dtype
    discrete = isinstance(nets.heads, QHeads)

    logger.info(f"🚀 Training {config.label}: {config.env.name} (T={env.horizon}), memory={config.memory.arch}, "
                f"algo={t.algo}, episodes={t.episodes}, parameters={nets.encoder.parameter_count()} encoder")

    best_eval: Optional[float] = None
    last_eval: Optional[float] = None
    recent = []
    with open_metrics(run.metrics) as metrics, CsvAppender(run.timing, TIMING_COLUMNS) as timing:
        for episode in range(t.episodes):
            started = time.perf_counter()
            epsilon = epsilon_schedule(episode, t.episodes, env.horizon, t.epsilon_fraction) if discrete else None
            record = collect_episode(env, nets, explore_rng, epsilon=epsilon or 0.0)
            buffer.add(record)
            recent = (recent + [record.total_return])[-100:]

            loss = actor_loss = None
            batch_episodes = 0
            if len(buffer) >= t.warmup_episodes:
                records = buffer.sample(t.batch_size, explore_rng, t.max_batch_transitions)
                batch = make_batch(records, env.action_space, dtype)
                batch_episodes = batch.size
                try:
                    if discrete:
                        loss = ddqn_update(nets, batch, train_cfg, optimizers)
                    else:
                        losses = sac_update(nets, batch, train_cfg, optimizers, explore_rng)
                        loss, actor_loss = losses["critic_loss"], losses["actor_loss"]
                except NumericError as err:
                    diagnostic = dict(getattr(err, "diagnostic", {}))
                    diagnostic.update({"episode": episode, "message": str(err)})
                    write_json(run.diagnostic, diagnostic)
                    logger.error(f"❌ Training aborted at episode {episode}: {err}")
                    raise

            eval_return = None
            if (episode + 1) % t.eval_every == 0 or episode + 1 == t.episodes:
                eval_return = float(np.mean(evaluate_policy(eval_env, nets, t.eval_episodes, eval_rng)))
                last_eval = eval_return
                best_eval = eval_return if best_eval is None else max(best_eval, eval_return)
                logger.info(f"📊 Episode {episode + 1}/{t.episodes}: eval return {eval_return:.4f} "
                            f"(best {best_eval:.4f}), train return mean {np.mean(recent):.4f}")

            metrics.append({"episode": episode, "return": record.total_return, "loss": loss,
                            "actor_loss": actor_loss, "epsilon": epsilon, "eval_return": eval_return,
                            "batch_episodes": batch_episodes})
            timing.append({"episode": episode, "wall_ms": (time.perf_counter() - started) * 1e3})

            if (episode + 1) % t.ckpt_every == 0 and episode + 1 < t.episodes:
                save_agent(run.checkpoint(episode + 1), nets)
                buffer.save(run.replay)

    save_agent(run.final_checkpoint, nets)
    buffer.save(run.replay)
    logger.info(f"✅ Training finished: final eval {last_eval}, best eval {best_eval}")
    return TrainSummary(episodes=t.episodes, final_eval=last_eval, best_eval=best_eval,
                        mean_return_last_100=float(np.mean(recent)), final_checkpoint=str(run.final_checkpoint))
