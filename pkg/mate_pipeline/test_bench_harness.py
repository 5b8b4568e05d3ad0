"""Benchmark harness tests: slope fitting, reduction, and tiny real timings"""

import numpy as np
import pytest

from bench_harness import (BENCH_COLUMNS, TimingSample, fit_scaling, reduce_samples, run_grid, time_rollout,
                           time_update, validate_lengths, write_bench_csv, write_bench_summary, write_scaling_csv)
from config_manager import BenchSection
from errors import ConfigurationError, DataError
from output_utils import read_metrics

LENGTHS = [512, 1024, 2048, 4096, 8192]


class TestFitScaling:
    def test_linear(self):
        report = fit_scaling([(t, 3.0 * t) for t in LENGTHS])
        assert report.slope == pytest.approx(1.0, abs=1e-9)
        assert report.r2 == pytest.approx(1.0)

    def test_quadratic(self):
        report = fit_scaling([(t, 0.5 * t * t) for t in LENGTHS], "attn", "rollout_total", (1.6, 2.4))
        assert report.slope == pytest.approx(2.0, abs=1e-9)
        assert report.verdict == "PASS"

    def test_affine_bends_below_one(self):
        report = fit_scaling([(t, t + 100.0) for t in LENGTHS])
        assert 0.9 <= report.slope < 1.0

    def test_out_of_window_fails(self):
        report = fit_scaling([(t, 1.0 * t) for t in LENGTHS], "attn", "update_total", (1.6, 2.4))
        assert report.verdict == "FAIL"
        assert fit_scaling([(t, 1.0 * t) for t in LENGTHS]).verdict == "INFO"

    def test_too_few_points(self):
        with pytest.raises(DataError):
            fit_scaling([(t, float(t)) for t in LENGTHS[:3]])
        with pytest.raises(DataError):
            fit_scaling([(512, 1.0), (512, 1.1), (1024, 2.0), (2048, 4.0)])

    def test_non_positive_time(self):
        with pytest.raises(DataError):
            fit_scaling([(t, 0.0) for t in LENGTHS])


class TestValidateLengths:
    def test_accepts_default_grid(self):
        assert validate_lengths([8192, 512, 1024, 2048, 4096]) == LENGTHS

    def test_rejects_short_grid(self):
        with pytest.raises(ConfigurationError):
            validate_lengths([512])
        with pytest.raises(ConfigurationError):
            validate_lengths([512, 1024, 2048])

    def test_rejects_narrow_span(self):
        with pytest.raises(ConfigurationError):
            validate_lengths([100, 200, 400, 800])


def synthetic(arch, scale, exponent, per_step):
    samples = []
    for t in LENGTHS:
        samples.append(TimingSample(arch, "rollout_total", t, 5, [scale * t ** exponent] * 5))
        samples.append(TimingSample(arch, "update_total", t, 5, [2 * scale * t ** exponent] * 5))
    for t_check, value in zip([512, 2048, 8192], per_step):
        samples.append(TimingSample(arch, "rollout_per_step_at_t", 8192, 5, [value] * 5, t_checkpoint=t_check))
    return samples


class TestReduceSamples:
    def test_verdicts_from_synthetic_grid(self):
        samples = synthetic("mate", 10.0, 1.0, [100.0, 101.0, 102.0]) + synthetic("attn", 0.01, 2.0,
                                                                                  [10.0, 40.0, 160.0])
        result = reduce_samples(samples, update_batch=1)
        assert {(r.arch, r.phase): r.verdict for r in result.reports} == {
            ("mate", "rollout_total"): "PASS", ("mate", "update_total"): "PASS",
            ("attn", "rollout_total"): "PASS", ("attn", "update_total"): "PASS"}
        assert result.per_step_ratios["mate"] == pytest.approx(1.02)
        assert result.per_step_ratios["attn"] == pytest.approx(16.0)
        assert all(ok for _, ok in result.verdicts())

    def test_flat_per_step_attention_fails(self):
        result = reduce_samples(synthetic("attn", 0.01, 2.0, [10.0, 10.0, 10.0]), update_batch=1)
        assert not all(ok for _, ok in result.verdicts())

    def test_writers(self, tmp_path):
        samples = synthetic("mate", 10.0, 1.0, [100.0, 100.0, 100.0])
        samples[0].warning = "below timer resolution"
        result = reduce_samples(samples, update_batch=1)
        frame = read_metrics(write_bench_csv(tmp_path / "bench.csv", samples))
        assert list(frame.columns) == BENCH_COLUMNS
        assert len(frame) == len(samples)
        scaling = read_metrics(write_scaling_csv(tmp_path / "scaling.csv", result.reports))
        assert set(scaling["verdict"]) == {"PASS"}
        text = write_bench_summary(tmp_path / "bench-summary.txt", result).read_text()
        assert "PASS  mate rollout_total" in text
        assert "1 timing rows flagged" in text


class TestRealTimings:
    @pytest.mark.parametrize("arch", ["mate", "rnn", "attn"])
    def test_rollout_samples(self, arch):
        samples = time_rollout(arch, 32, repeats=5, dim=8, warmup=0, dtype="float64")
        assert [s.phase for s in samples] == ["rollout_total"] + ["rollout_per_step_at_t"] * 3
        assert [s.t_checkpoint for s in samples[1:]] == [2, 8, 32]
        assert all(len(s.times_ns) == 5 and s.median_ns > 0 for s in samples)

    def test_update_sample(self):
        sample = time_update("mate", 16, batch=2, repeats=5, dim=8, warmup=0, workers=2, dtype="float64")
        assert sample.phase == "update_total"
        assert sample.batch == 2 and sample.workers == 2
        assert np.all(np.asarray(sample.times_ns) > 0)

    def test_rnn_update_runs_single_worker(self):
        assert time_update("rnn", 16, repeats=5, dim=8, warmup=0, workers=4).workers == 1

    def test_grid_times_parallel_updates_for_mate_and_attn(self, tmp_path):
        bench = BenchSection(lengths=[2, 4, 8, 32], dim=4, repeats=5, warmup=0, parallel_batch=2, workers=2,
                             dtype="float64")
        result = run_grid(bench, seed=3)
        frame = read_metrics(write_bench_csv(tmp_path / "bench.csv", result.samples))
        parallel = frame[frame["workers"] > 1]
        assert sorted(parallel["arch"].unique()) == ["attn", "mate"]
        assert (parallel["T"] == 32).all() and (parallel["batch"] == 2).all()
        assert (frame[frame["arch"] == "rnn"]["workers"] == 1).all()
        assert set(result.speedups) == {"attn", "mate"}
        text = write_bench_summary(tmp_path / "bench-summary.txt", result).read_text()
        assert "mate parallel update speedup" in text
        assert "INFO  attn parallel update speedup" in text

    def test_single_worker_grid_times_no_parallel_pair(self):
        bench = BenchSection(archs=["mate", "attn"], lengths=[2, 4, 8, 32], dim=4, repeats=5, warmup=0,
                             workers=1, dtype="float64")
        result = run_grid(bench)
        assert result.speedups == {}
        assert all(s.workers == 1 for s in result.samples)
