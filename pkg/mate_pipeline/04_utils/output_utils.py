#!/usr/bin/env python3
"""
Output Utilities
Report writing, CSV helpers and timestamps shared by the CLI and orchestrator
"""
import json
import logging
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

METRICS_HEADER = "# mate-metrics v1"
METRICS_COLUMNS = ["episode", "return", "loss", "actor_loss", "epsilon", "eval_return", "batch_episodes"]
TIMING_COLUMNS = ["episode", "wall_ms"]
FLOAT_FORMAT = "%.12g"


def get_timestamp() -> str:
    """Current UTC time as YYYY-MM-DD HH:MM:SS UTC"""
    return datetime.now(timezone.utc).strftime("%Y-%m-%d %H:%M:%S UTC")


def format_duration(seconds: float) -> str:
    if seconds < 60:
        return f"{seconds:.1f}s"
    elif seconds < 3600:
        return f"{seconds / 60:.1f}m"
    return f"{seconds / 3600:.1f}h"


class CsvAppender:
    """Row-at-a-time CSV writer that flushes after every row"""

    def __init__(self, path: Path, columns: Sequence[str], header_comment: Optional[str] = None):
        self.path = Path(path)
        self.columns = list(columns)
        self._file = open(self.path, "w", encoding="utf-8", newline="")
        if header_comment:
            self._file.write(header_comment + "\n")
        self._file.write(",".join(self.columns) + "\n")
        self._file.flush()

    def append(self, row: Dict[str, Any]) -> None:
        frame = pd.DataFrame([{c: row.get(c) for c in self.columns}], columns=self.columns)
        frame.to_csv(self._file, header=False, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
        self._file.flush()

    def close(self) -> None:
        if not self._file.closed:
            self._file.close()

    def __enter__(self) -> "CsvAppender":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def open_metrics(path: Path) -> CsvAppender:
    return CsvAppender(path, METRICS_COLUMNS, METRICS_HEADER)


def read_metrics(path: Union[str, Path]) -> pd.DataFrame:
    return pd.read_csv(path, comment="#")


def write_frame(path: Union[str, Path], rows: Iterable[Dict[str, Any]], columns: Sequence[str]) -> Path:
    path = Path(path)
    frame = pd.DataFrame(list(rows), columns=list(columns))
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def write_json(path: Union[str, Path], payload: Dict[str, Any]) -> Path:
    path = Path(path)

    def default(value):
        if isinstance(value, np.ndarray):
            return value.tolist()
        if isinstance(value, np.generic):
            return value.item()
        raise TypeError(f"Not JSON serializable: {type(value).__name__}")

    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=default) + "\n", encoding="utf-8")
    return path


def write_report(path: Union[str, Path], title: str, lines: List[str]) -> Path:
    """Plain-text report with a banner header"""
    path = Path(path)
    body = [title, "=" * 80, f"Generated: {get_timestamp()}", "", *lines, ""]
    path.write_text("\n".join(body), encoding="utf-8")
    logger.info(f"📊 Report written: {path}")
    return path


def banner(text: str) -> str:
    return f"\n{'=' * 80}\n{text}\n{'=' * 80}"
