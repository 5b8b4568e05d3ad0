#!/usr/bin/env python3
"""
Scaling Benchmark Harness
=========================

Times rollout (incremental encode_step) and update (encode_sequence + backward)
for each memory architecture over a grid of sequence lengths, then fits
log-log slopes and checks them against the expected complexity windows.

Features:
- Median-of-repeats timing with discarded warmup repeats
- Per-step rollout timing at t = T/16, T/4, T (attention rolls back its cache
  between repeats with `truncate`)
- Inner loop auto-increase when a single timed call is below timer resolution
- OLS fit on (log T, log time) with R²; PASS/FAIL verdicts per arch and phase
- Position-parallel update speedup probe for MATE and attention at the largest length

Author: MATE Pipeline
Version: 1.0
"""

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from config_manager import BenchSection
from errors import ConfigurationError, DataError
from memory_arch import EncoderConfig, Memory, build_memory
from nn_core import Tensor, compute_gradients
from output_utils import write_frame, write_report

logger = logging.getLogger(__name__)

PHASES = ("rollout_total", "rollout_per_step_at_t", "update_total")
BENCH_COLUMNS = ["arch", "phase", "T", "t_checkpoint", "batch", "workers", "repeats", "median_ns", "mad_ns",
                 "warning"]
SCALING_COLUMNS = ["arch", "phase", "slope", "r2", "verdict"]

# T-Maze transition width: obs(3) + one-hot action(4) + reward(1) + obs(3)
BENCH_INPUT_DIM = 11
MIN_STEP_NS = 100
MIN_R2 = 0.98
MIN_LENGTHS = 4
MIN_SPAN = 16

EXPECTED_SLOPES: Dict[Tuple[str, str], Tuple[float, float]] = {
    ("mate", "rollout_total"): (0.8, 1.2),
    ("rnn", "rollout_total"): (0.8, 1.2),
    ("attn", "rollout_total"): (1.6, 2.4),
    ("mate", "update_total"): (0.8, 1.2),
    ("rnn", "update_total"): (0.8, 1.2),
    ("attn", "update_total"): (1.6, 2.4),
}
# ratio of per-step time at t=T over t=T/16
PER_STEP_RATIO_MAX = {"mate": 1.5, "rnn": 1.5}
PER_STEP_RATIO_MIN = {"attn": 4.0}
MIN_PARALLEL_SPEEDUP = 1.5
PARALLEL_ARCHS = ("mate", "attn")


@dataclass
class TimingSample:
    arch: str
    phase: str
    length: int
    repeats: int
    times_ns: List[float]
    t_checkpoint: Optional[int] = None
    batch: int = 1
    workers: int = 1
    inner: int = 1
    warning: Optional[str] = None

    @property
    def median_ns(self) -> float:
        return float(np.median(self.times_ns))

    @property
    def mad_ns(self) -> float:
        return float(np.median(np.abs(np.asarray(self.times_ns) - self.median_ns)))

    def to_row(self) -> Dict[str, object]:
        return {"arch": self.arch, "phase": self.phase, "T": self.length, "t_checkpoint": self.t_checkpoint,
                "batch": self.batch, "workers": self.workers, "repeats": self.repeats,
                "median_ns": self.median_ns, "mad_ns": self.mad_ns, "warning": self.warning}


@dataclass
class ScalingReport:
    arch: str
    phase: str
    points: List[Tuple[int, float]]
    slope: float
    intercept: float
    r2: float
    residual: float
    expected: Optional[Tuple[float, float]] = None

    @property
    def verdict(self) -> str:
        if self.expected is None:
            return "INFO"
        low, high = self.expected
        return "PASS" if low <= self.slope <= high and self.r2 >= MIN_R2 else "FAIL"

    def to_row(self) -> Dict[str, object]:
        return {"arch": self.arch, "phase": self.phase, "slope": self.slope, "r2": self.r2, "verdict": self.verdict}


@dataclass
class BenchResult:
    samples: List[TimingSample] = field(default_factory=list)
    reports: List[ScalingReport] = field(default_factory=list)
    per_step_ratios: Dict[str, float] = field(default_factory=dict)
    speedups: Dict[str, Dict[str, float]] = field(default_factory=dict)

    def verdicts(self) -> List[Tuple[str, bool]]:
        lines = [(f"{r.arch} {r.phase} slope {r.slope:.3f} (R² {r.r2:.4f}) in {r.expected}", r.verdict == "PASS")
                 for r in self.reports if r.expected is not None]
        for arch, ratio in sorted(self.per_step_ratios.items()):
            if arch in PER_STEP_RATIO_MAX:
                lines.append((f"{arch} per-step ratio {ratio:.2f} <= {PER_STEP_RATIO_MAX[arch]}",
                              ratio <= PER_STEP_RATIO_MAX[arch]))
            elif arch in PER_STEP_RATIO_MIN:
                lines.append((f"{arch} per-step ratio {ratio:.2f} >= {PER_STEP_RATIO_MIN[arch]}",
                              ratio >= PER_STEP_RATIO_MIN[arch]))
        if "mate" in self.speedups:
            mate = self.speedups["mate"]
            lines.append((f"mate parallel update speedup {mate['speedup']:.2f}x "
                          f"at {int(mate['workers'])} workers >= {MIN_PARALLEL_SPEEDUP}x",
                          mate["speedup"] >= MIN_PARALLEL_SPEEDUP))
        return lines


# ----------------------------------------------------------------------
# timing primitives
# ----------------------------------------------------------------------
def _time_calls(call: Callable[[object], None], repeats: int, warmup: int,
                setup: Optional[Callable[[], object]] = None) -> Tuple[List[float], int, Optional[str]]:
    """
    Per-call wall times (ns) of `repeats` timed repeats after `warmup` discarded ones.

    Without a setup hook the inner loop count doubles until one call is above
    MIN_STEP_NS; with one, each repeat times a single call on fresh setup output.
    """
    inner = 1
    warning = None
    if setup is None:
        while True:
            start = time.perf_counter_ns()
            for _ in range(inner):
                call(None)
            elapsed = time.perf_counter_ns() - start
            if elapsed >= MIN_STEP_NS * 10 or inner >= 1 << 20:
                break
            inner *= 2
    times: List[float] = []
    for i in range(warmup + repeats):
        arg = setup() if setup is not None else None
        start = time.perf_counter_ns()
        for _ in range(inner):
            call(arg)
        per_call = (time.perf_counter_ns() - start) / inner
        if i >= warmup:
            times.append(per_call)
    if min(times) < MIN_STEP_NS:
        warning = f"below timer resolution ({min(times):.0f} ns with inner loop {inner})"
    return times, inner, warning


def _bench_memory(arch: str, length: int, dim: int, seed: int, dtype: str) -> Memory:
    config = EncoderConfig(arch=arch, input_dim=BENCH_INPUT_DIM, memory_dim=dim, horizon=length,
                           positional_encoding=arch == "attn", dtype=dtype)
    return build_memory(config, np.random.default_rng(seed))


def _checkpoints(length: int) -> List[int]:
    return sorted({max(1, length // 16), max(1, length // 4), length})


def time_memory_rollout(memory: Memory, xs: np.ndarray, repeats: int = 5,
                        warmup: int = 2) -> List[TimingSample]:
    """Rollout timings on a pre-generated (T, n) input stream"""
    length = xs.shape[0]
    arch = memory.arch
    mutable = arch == "attn"

    def rollout(state):
        for x in xs:
            state, _ = memory.encode_step(state, x)

    times, inner, warning = _time_calls(rollout, repeats, warmup, setup=memory.initial_state)
    samples = [TimingSample(arch, "rollout_total", length, repeats, times, inner=inner, warning=warning)]

    state = memory.initial_state()
    consumed = 0
    for t in _checkpoints(length):
        while consumed < t - 1:
            state, _ = memory.encode_step(state, xs[consumed])
            consumed += 1
        x = xs[t - 1]
        before = state

        def step(_):
            memory.encode_step(before, x)
            if mutable:
                before.truncate(t - 1)

        times, inner, warning = _time_calls(step, repeats, warmup)
        samples.append(TimingSample(arch, "rollout_per_step_at_t", length, repeats, times, t_checkpoint=t,
                                    inner=inner, warning=warning))
    return samples


def time_rollout(arch: str, length: int, repeats: int = 5, seed: int = 0, dim: int = 128,
                 warmup: int = 2, dtype: str = "float32") -> List[TimingSample]:
    """Total and per-step rollout timings of one architecture at sequence length `length`"""
    memory = _bench_memory(arch, length, dim, seed, dtype)
    xs = np.random.default_rng(seed + 1).normal(size=(length, BENCH_INPUT_DIM)).astype(memory.dtype)
    return time_memory_rollout(memory, xs, repeats, warmup)


def time_memory_update(memory: Memory, xs: np.ndarray, repeats: int = 5, warmup: int = 2,
                       workers: int = 1) -> TimingSample:
    """One encode_sequence over a (B, T, n) batch, a dummy scalar loss and its backward pass"""
    if memory.arch == "rnn" and workers != 1:
        logger.debug("rnn recurrence is sequential; timing update with one worker")
        workers = 1
    inputs = Tensor(xs)
    params = memory.parameters()

    def update(_):
        out = memory.encode_sequence(inputs, workers=workers)
        loss = (out * out).mean()
        compute_gradients(loss, params)

    times, inner, warning = _time_calls(update, repeats, warmup)
    return TimingSample(memory.arch, "update_total", xs.shape[-2], repeats, times, batch=xs.shape[0],
                        workers=workers, inner=inner, warning=warning)


def time_update(arch: str, length: int, batch: int = 1, repeats: int = 5, seed: int = 0, dim: int = 128,
                warmup: int = 2, workers: int = 1, dtype: str = "float32") -> TimingSample:
    memory = _bench_memory(arch, length, dim, seed, dtype)
    xs = np.random.default_rng(seed + 1).normal(size=(batch, length, BENCH_INPUT_DIM)).astype(memory.dtype)
    return time_memory_update(memory, xs, repeats, warmup, workers)


# ----------------------------------------------------------------------
# reduction
# ----------------------------------------------------------------------
def fit_scaling(points: Sequence[Tuple[float, float]], arch: str = "", phase: str = "",
                expected: Optional[Tuple[float, float]] = None) -> ScalingReport:
    """Ordinary least squares of log(time) on log(T)"""
    if len(points) < MIN_LENGTHS or len({p[0] for p in points}) < MIN_LENGTHS:
        raise DataError(f"Scaling fit for {arch or '?'} {phase or '?'}: need >= {MIN_LENGTHS} lengths, "
                        f"got {len(points)} points")
    lengths = np.array([p[0] for p in points], dtype=np.float64)
    times = np.array([p[1] for p in points], dtype=np.float64)
    if np.any(lengths <= 0) or np.any(times <= 0) or not np.all(np.isfinite(times)):
        raise DataError(f"Scaling fit for {arch or '?'} {phase or '?'}: lengths and times must be positive")
    x, y = np.log(lengths), np.log(times)
    design = np.stack([x, np.ones_like(x)], axis=1)
    (slope, intercept), *_ = np.linalg.lstsq(design, y, rcond=None)
    predicted = design @ np.array([slope, intercept])
    ss_res = float(np.sum((y - predicted) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return ScalingReport(arch=arch, phase=phase, points=[(int(t), float(v)) for t, v in points],
                         slope=float(slope), intercept=float(intercept), r2=r2, residual=math.sqrt(ss_res),
                         expected=expected)


def validate_lengths(lengths: Sequence[int]) -> List[int]:
    distinct = sorted(set(int(t) for t in lengths))
    if len(distinct) < MIN_LENGTHS:
        raise ConfigurationError(f"bench.lengths: need >= {MIN_LENGTHS} lengths, got {distinct}")
    if distinct[0] < 1 or distinct[-1] < MIN_SPAN * distinct[0]:
        raise ConfigurationError(f"bench.lengths: must span >= {MIN_SPAN}x, got {distinct[0]}..{distinct[-1]}")
    return distinct


def reduce_samples(samples: Sequence[TimingSample], update_batch: int) -> BenchResult:
    result = BenchResult(samples=list(samples))
    archs = list(dict.fromkeys(s.arch for s in samples))
    for arch in archs:
        for phase in ("rollout_total", "update_total"):
            points = [(s.length, s.median_ns) for s in samples
                      if s.arch == arch and s.phase == phase and s.workers == 1
                      and (phase != "update_total" or s.batch == update_batch)]
            if points:
                result.reports.append(fit_scaling(points, arch, phase, EXPECTED_SLOPES.get((arch, phase))))
        per_step = [s for s in samples if s.arch == arch and s.phase == "rollout_per_step_at_t"]
        if per_step:
            longest = max(s.length for s in per_step)
            at = {s.t_checkpoint: s.median_ns for s in per_step if s.length == longest}
            result.per_step_ratios[arch] = at[max(at)] / at[min(at)]
    return result


def run_grid(bench: BenchSection, seed: int = 0, workers: Optional[int] = None) -> BenchResult:
    """Full grid: every arch x length x phase, then the parallel-update probes for mate and attn"""
    lengths = validate_lengths(bench.lengths)
    probe_workers = workers or bench.workers
    samples: List[TimingSample] = []
    for index, arch in enumerate(bench.archs):
        for length in lengths:
            arch_seed = seed + 1000 * index + length
            logger.info(f"⏱️  {arch} T={length}: rollout")
            samples.extend(time_rollout(arch, length, bench.repeats, arch_seed, bench.dim, bench.warmup,
                                        bench.dtype))
            logger.info(f"⏱️  {arch} T={length}: update (batch {bench.update_batch})")
            samples.append(time_update(arch, length, bench.update_batch, bench.repeats, arch_seed, bench.dim,
                                       bench.warmup, 1, bench.dtype))

    speedups: Dict[str, Dict[str, float]] = {}
    if probe_workers > 1:
        longest = lengths[-1]
        for arch in (a for a in bench.archs if a in PARALLEL_ARCHS):
            logger.info(f"⏱️  {arch} T={longest}: parallel update probe ({probe_workers} workers, "
                        f"batch {bench.parallel_batch})")
            single = time_update(arch, longest, bench.parallel_batch, bench.repeats, seed, bench.dim,
                                 bench.warmup, 1, bench.dtype)
            multi = time_update(arch, longest, bench.parallel_batch, bench.repeats, seed, bench.dim,
                                bench.warmup, probe_workers, bench.dtype)
            samples.extend([single, multi])
            speedups[arch] = {"single_ns": single.median_ns, "multi_ns": multi.median_ns,
                              "workers": float(probe_workers), "speedup": single.median_ns / multi.median_ns}

    result = reduce_samples(samples, bench.update_batch)
    result.speedups = speedups
    return result


# ----------------------------------------------------------------------
# output
# ----------------------------------------------------------------------
def write_bench_csv(path, samples: Sequence[TimingSample]):
    return write_frame(path, (s.to_row() for s in samples), BENCH_COLUMNS)


def write_scaling_csv(path, reports: Sequence[ScalingReport]):
    return write_frame(path, (r.to_row() for r in reports), SCALING_COLUMNS)


def write_bench_summary(path, result: BenchResult):
    lines = []
    for text, ok in result.verdicts():
        lines.append(f"{'PASS' if ok else 'FAIL'}  {text}")
    for arch, timing in sorted(result.speedups.items()):
        if arch != "mate":
            lines.append(f"INFO  {arch} parallel update speedup {timing['speedup']:.2f}x "
                         f"at {int(timing['workers'])} workers")
    warnings = [s for s in result.samples if s.warning]
    if warnings:
        lines.append("")
        lines.append(f"⚠️  {len(warnings)} timing rows flagged:")
        lines.extend(f"  {s.arch} {s.phase} T={s.length}: {s.warning}" for s in warnings)
    return write_report(path, "MATE SCALING BENCHMARK", lines)
