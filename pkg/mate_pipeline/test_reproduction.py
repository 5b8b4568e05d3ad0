"""Reproduction orchestrator tests: step plan, dependency skips, report text"""

import importlib.util
from pathlib import Path

import pytest

SCRIPT = Path(__file__).parent / "01_scripts" / "Z_run_reproduction.py"


@pytest.fixture(scope="module")
def repro():
    found = importlib.util.spec_from_file_location("z_run_reproduction", SCRIPT)
    module = importlib.util.module_from_spec(found)
    found.loader.exec_module(module)
    return module


def fake_executor(failing=()):
    calls = []

    def execute(step, run_root):
        calls.append(step["name"])
        if step["name"] in failing:
            return False, "boom\nlast line", 0.5, 2
        return True, "ok", 0.25, 0

    return execute, calls


class TestBuildSteps:
    def test_evals_need_the_training_step(self, repro, tmp_path):
        steps = repro.build_steps("20260101-000000", tmp_path)
        train_index = next(i for i, s in enumerate(steps) if s["args"][0] == "train")
        evals = [s for s in steps if s["args"][0] == "eval"]
        assert len(evals) == 2
        assert all(s["needs"] == train_index for s in evals)
        assert all(s["needs"] is None for s in steps if s["args"][0] != "eval")

    def test_eval_points_at_training_checkpoint(self, repro, tmp_path):
        steps = repro.build_steps("stamp", tmp_path)
        train = next(s for s in steps if s["args"][0] == "train")
        label = train["args"][train["args"].index("--label") + 1]
        expected = str(tmp_path / label / "checkpoints" / "final.mate")
        assert all(s["args"][1] == expected for s in steps if s["args"][0] == "eval")


class TestRunSteps:
    def test_all_succeed(self, repro, tmp_path):
        steps = repro.build_steps("stamp", tmp_path)
        execute, calls = fake_executor()
        results = repro.run_steps(steps, tmp_path, execute)
        assert [r[1] for r in results] == ["SUCCESS"] * len(steps)
        assert calls == [s["name"] for s in steps]

    def test_failed_training_skips_evals(self, repro, tmp_path):
        steps = repro.build_steps("stamp", tmp_path)
        execute, calls = fake_executor(failing={"Passive T-Maze Training"})
        results = repro.run_steps(steps, tmp_path, execute)
        assert [r[1] for r in results] == ["SUCCESS", "SUCCESS", "FAILED", "SKIPPED", "SKIPPED"]
        assert "Greedy Evaluation" not in calls

    def test_failed_check_does_not_block_training(self, repro, tmp_path):
        steps = repro.build_steps("stamp", tmp_path)
        execute, _ = fake_executor(failing={"Property Checks"})
        results = repro.run_steps(steps, tmp_path, execute)
        assert [r[1] for r in results] == ["FAILED", "SUCCESS", "SUCCESS", "SUCCESS", "SUCCESS"]


class TestReport:
    def test_report_lists_failures_with_exit_meaning(self, repro, tmp_path):
        steps = repro.build_steps("stamp", tmp_path)
        execute, _ = fake_executor(failing={"Passive T-Maze Training"})
        report = repro.generate_execution_report(repro.run_steps(steps, tmp_path, execute))
        assert "Total Steps: 5" in report
        assert "Successful: 2" in report
        assert "Exit code: 2 (runtime error)" in report
        assert "Error: last line" in report
        assert report.count("SKIPPED") == 2
