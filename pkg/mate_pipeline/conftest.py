"""Shared pytest fixtures for the MATE pipeline tests"""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent / "04_utils"))
sys.path.insert(0, str(Path(__file__).parent))

from config_manager import resolve_config  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def run_root(tmp_path, monkeypatch):
    root = tmp_path / "runs"
    monkeypatch.setenv("MATE_RUN_ROOT", str(root))
    monkeypatch.delenv("MATE_WORKERS", raising=False)
    return root


TINY_TRAIN = [
    "env.corridor_len=4",
    "memory.dim=8",
    "memory.obs_embed_dim=4",
    "train.hidden_sizes=[16]",
    "train.batch_size=4",
    "train.eval_every=3",
    "train.eval_episodes=2",
    "train.ckpt_every=4",
]


@pytest.fixture
def tiny_overrides():
    """Small T-Maze run that finishes in seconds"""
    return list(TINY_TRAIN)


@pytest.fixture
def tiny_config():
    return resolve_config({}, TINY_TRAIN + ["train.episodes=5", "seed=3"])
