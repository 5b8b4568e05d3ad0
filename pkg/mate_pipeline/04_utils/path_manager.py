#!/usr/bin/env python3
"""
MATE Pipeline Path Manager
==========================

Centralized path management for the pipeline and for run directories.

Features:
- Pipeline directory structure (01_scripts, 02_outputs, 03_configs, 04_utils, fixtures)
- Run directories staged in a hidden temp path and renamed into place, so a
  half-written run is never visible under its label
- Existing run labels are never overwritten

Author: MATE Pipeline
Version: 1.0
"""

import logging
import os
import shutil
import tempfile
from pathlib import Path
from typing import List, Optional

from errors import ConfigurationError, DataError

logger = logging.getLogger(__name__)


class MatePaths:
    """Centralized path management for the pipeline"""

    def __init__(self):
        self.base_path = Path(__file__).parent.parent
        self.scripts_dir = self.base_path / "01_scripts"
        self.outputs_dir = self.base_path / "02_outputs"
        self.configs_dir = self.base_path / "03_configs"
        self.utils_dir = self.base_path / "04_utils"
        self.fixtures_dir = self.base_path / "fixtures"

    def get_config_path(self, filename: str) -> Path:
        if not filename.endswith(".json"):
            filename += ".json"
        return self.configs_dir / filename

    def get_output_path(self, filename: str) -> Path:
        self.outputs_dir.mkdir(exist_ok=True)
        return self.outputs_dir / filename

    def get_fixture_path(self, filename: str) -> Path:
        return self.fixtures_dir / filename

    def list_config_files(self) -> List[Path]:
        return sorted(self.configs_dir.glob("*.json"))


class RunPaths:
    """Files inside one run directory"""

    def __init__(self, root: Path):
        self.root = Path(root)

    @property
    def config(self) -> Path:
        return self.root / "config.resolved"

    @property
    def metrics(self) -> Path:
        return self.root / "metrics.csv"

    @property
    def timing(self) -> Path:
        return self.root / "timing.csv"

    @property
    def checkpoints(self) -> Path:
        return self.root / "checkpoints"

    @property
    def final_checkpoint(self) -> Path:
        return self.checkpoints / "final.mate"

    @property
    def replay(self) -> Path:
        return self.checkpoints / "replay.mate"

    def checkpoint(self, episode: int) -> Path:
        return self.checkpoints / f"episode-{episode:07d}.mate"

    @property
    def bench_csv(self) -> Path:
        return self.root / "bench.csv"

    @property
    def scaling_csv(self) -> Path:
        return self.root / "scaling.csv"

    @property
    def bench_summary(self) -> Path:
        return self.root / "bench-summary.txt"

    @property
    def report(self) -> Path:
        return self.root / "report.txt"

    @property
    def diagnostic(self) -> Path:
        return self.root / "diagnostic.json"

    @property
    def eval_summary(self) -> Path:
        return self.root / "eval-summary.json"

    @property
    def log(self) -> Path:
        return self.root / "run.log"

    @classmethod
    def for_checkpoint(cls, checkpoint: Path) -> "RunPaths":
        """Run directory owning a checkpoint file (<run>/checkpoints/<file>)"""
        checkpoint = Path(checkpoint)
        if not checkpoint.exists():
            raise DataError(f"Checkpoint not found: {checkpoint}")
        return cls(checkpoint.resolve().parent.parent)


class StagedRun:
    """
    Context manager that builds a run directory in a temp path next to its final
    location and renames it into place on success. On failure the staged
    directory is still published so diagnostics survive, unless `keep_on_error`
    is False.
    """

    def __init__(self, run_root: Path, label: str, keep_on_error: bool = True):
        if not label or "/" in label or label.startswith("."):
            raise ConfigurationError(f"Invalid run label '{label}'")
        self.run_root = Path(run_root)
        self.final = self.run_root / label
        self.keep_on_error = keep_on_error
        if self.final.exists():
            raise ConfigurationError(f"Run label '{label}' already exists under {self.run_root}")
        self.staging: Optional[Path] = None

    def __enter__(self) -> RunPaths:
        self.run_root.mkdir(parents=True, exist_ok=True)
        self.staging = Path(tempfile.mkdtemp(prefix=f".{self.final.name}-", dir=self.run_root))
        (self.staging / "checkpoints").mkdir()
        return RunPaths(self.staging)

    def publish(self) -> Path:
        if self.final.exists():
            raise ConfigurationError(f"Run label '{self.final.name}' appeared under {self.run_root} during the run")
        os.replace(self.staging, self.final)
        logger.info(f"📁 Run directory: {self.final}")
        return self.final

    def __exit__(self, exc_type, exc, tb) -> bool:
        if exc_type is None or self.keep_on_error:
            self.publish()
        else:
            shutil.rmtree(self.staging, ignore_errors=True)
        return False


# Global path manager instance
mate_paths = MatePaths()


def get_paths() -> MatePaths:
    return mate_paths
