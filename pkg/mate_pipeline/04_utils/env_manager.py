#!/usr/bin/env python3
"""
MATE Pipeline Environment Manager
=================================

Handles environment variables for the pipeline.

Features:
- .env loading from the pipeline directory or the working directory
- MATE_RUN_ROOT resolution (default ./runs)
- Worker-count default from MATE_WORKERS

Author: MATE Pipeline
Version: 1.0
"""

import logging
import os
from pathlib import Path
from typing import List, Optional

from dotenv import load_dotenv

from errors import ConfigurationError

logger = logging.getLogger(__name__)

DEFAULT_RUN_ROOT = "runs"


class MateEnvironment:
    """Environment variable manager for MATE runs"""

    def __init__(self, search_paths: Optional[List[Path]] = None):
        self.loaded_from: Optional[Path] = None
        self.search_paths = search_paths or [
            Path.cwd() / ".env",
            Path(__file__).parent.parent / ".env",  # mate_pipeline directory
        ]
        self._load_environment_files()

    def _load_environment_files(self):
        """Load the first .env found; existing variables win over file values"""
        for env_path in self.search_paths:
            if env_path.exists():
                load_dotenv(env_path, override=False)
                self.loaded_from = env_path
                logger.debug(f"✓ Loaded environment from: {env_path}")
                return

    def get_run_root(self) -> Path:
        """Directory under which run directories are created"""
        return Path(os.getenv("MATE_RUN_ROOT") or DEFAULT_RUN_ROOT)

    def get_default_workers(self) -> int:
        raw = os.getenv("MATE_WORKERS")
        if raw is None:
            return 1
        try:
            workers = int(raw)
        except ValueError:
            raise ConfigurationError(f"MATE_WORKERS must be an integer, got '{raw}'") from None
        if workers < 1:
            raise ConfigurationError(f"MATE_WORKERS must be positive, got {workers}")
        return workers


def get_environment() -> MateEnvironment:
    return MateEnvironment()


def get_run_root() -> Path:
    return get_environment().get_run_root()
