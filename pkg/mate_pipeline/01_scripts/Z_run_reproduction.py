#!/usr/bin/env python3
"""
MATE Reproduction Orchestrator
==============================

Runs the reproduction sequence through mate_cli.py:

A. check all       - property suites (invariance, oracle, recovery, injectivity, gradients)
B. bench           - rollout/update scaling grid
C. train           - MATE + DDQN on the passive T-Maze (03_configs/01_tmaze_passive.json)
D. eval            - greedy evaluation of the final checkpoint from C
E. eval (scripted) - oracle surrogate on the same run, the analytic optimum

Features:
- Sequential execution; a failed required step skips the steps that depend on it
- Exit codes of mate_cli.py reported per step (1 config, 2 runtime, 3 check failure)
- Execution timing and a plain-text report in 02_outputs/

Author: MATE Pipeline
Version: 1.0
"""

import os
import subprocess
import sys
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Dict, List, Tuple

sys.path.append(os.path.join(os.path.dirname(__file__), "..", "04_utils"))
from env_manager import get_run_root  # noqa: E402
from output_utils import format_duration, get_timestamp  # noqa: E402

PIPELINE_DIR = Path(__file__).resolve().parent.parent
CLI = PIPELINE_DIR / "mate_cli.py"
REPORT_FILE = PIPELINE_DIR / "02_outputs" / "Z-reproduction-report.txt"
STEP_TIMEOUT = 6 * 3600

EXIT_MEANINGS = {0: "success", 1: "configuration error", 2: "runtime error", 3: "check failure"}


def build_steps(stamp: str, run_root: Path) -> List[Dict]:
    train_label = f"repro-tmaze-passive-{stamp}"
    checkpoint = run_root / train_label / "checkpoints" / "final.mate"
    return [
        {"name": "Property Checks", "args": ["check", "all", "--label", f"repro-check-{stamp}"],
         "description": "All property suites with fixed seeds", "required": False, "needs": None},
        {"name": "Scaling Benchmark", "args": ["bench", "--config", "05_bench_grid", "--label", f"repro-bench-{stamp}"],
         "description": "Rollout/update timing grid and log-log slope verdicts", "required": False, "needs": None},
        {"name": "Passive T-Maze Training", "args": ["train", "--config", "01_tmaze_passive", "--label", train_label],
         "description": "MATE + DDQN, corridor length 10", "required": True, "needs": None},
        {"name": "Greedy Evaluation", "args": ["eval", str(checkpoint), "--episodes", "100"],
         "description": "Greedy policy of the final checkpoint", "required": True, "needs": 2},
        {"name": "Scripted Surrogate Evaluation",
         "args": ["eval", str(checkpoint), "--episodes", "100", "--policy", "scripted"],
         "description": "Oracle surrogate; mean return equals the analytic optimum", "required": False, "needs": 2},
    ]


def execute_step(step: Dict, run_root: Path) -> Tuple[bool, str, float, int]:
    """
    Run one mate_cli.py invocation

    Returns:
        Tuple of (success, output, duration_seconds, exit_code)
    """
    print(f"\n{'=' * 80}")
    print(f"EXECUTING: {step['name']}")
    print(f"{'=' * 80}")
    print(f"Command: mate_cli.py {' '.join(step['args'])}")
    print(f"Description: {step['description']}")
    print(f"Started at: {get_timestamp()}")

    start_time = time.time()
    try:
        result = subprocess.run([sys.executable, str(CLI), *step["args"]], capture_output=True, text=True,
                                timeout=STEP_TIMEOUT, env={**os.environ, "MATE_RUN_ROOT": str(run_root)},
                                cwd=PIPELINE_DIR)
    except subprocess.TimeoutExpired:
        duration = time.time() - start_time
        message = f"❌ TIMEOUT: {step['name']} exceeded {format_duration(STEP_TIMEOUT)}"
        print(message)
        return False, message, duration, -1

    duration = time.time() - start_time
    if result.stdout:
        print(f"\n📤 STDOUT:\n{result.stdout}")
    if result.stderr:
        print(f"\n📤 STDERR:\n{result.stderr}")

    if result.returncode == 0:
        print(f"\n✅ SUCCESS: {step['name']} completed in {format_duration(duration)}")
        return True, result.stdout, duration, 0
    meaning = EXIT_MEANINGS.get(result.returncode, "unexpected exit")
    print(f"❌ FAILED: {step['name']} (exit code {result.returncode}: {meaning})")
    return False, result.stderr or result.stdout or "Unknown error", duration, result.returncode


def generate_execution_report(results: List[Tuple[Dict, str, str, float, int]]) -> str:
    total_duration = sum(r[3] for r in results)
    succeeded = [r for r in results if r[1] == "SUCCESS"]
    report_lines = [
        "MATE REPRODUCTION REPORT",
        "=" * 80,
        f"Generated: {get_timestamp()}",
        f"Total Execution Time: {format_duration(total_duration)}",
        "",
        "EXECUTION SUMMARY",
        "-" * 80,
        f"Total Steps: {len(results)}",
        f"Successful: {len(succeeded)}",
        f"Failed or skipped: {len(results) - len(succeeded)}",
        "",
        "DETAILED RESULTS",
        "-" * 80,
    ]
    for i, (step, status, output, duration, code) in enumerate(results, 1):
        icon = {"SUCCESS": "✅", "FAILED": "❌", "SKIPPED": "⏭️"}[status]
        report_lines.extend([
            f"{i}. {step['name']}",
            f"   Command: mate_cli.py {' '.join(step['args'])}",
            f"   Status: {icon} {status} ({'REQUIRED' if step['required'] else 'OPTIONAL'})",
            f"   Duration: {format_duration(duration)}",
        ])
        if status == "FAILED":
            report_lines.append(f"   Exit code: {code} ({EXIT_MEANINGS.get(code, 'unexpected exit')})")
            for line in [l for l in output.split("\n") if l.strip()][-3:]:
                report_lines.append(f"   Error: {line.strip()}")
        report_lines.append("")
    return "\n".join(report_lines)


def save_execution_report(report_content: str) -> Path:
    REPORT_FILE.parent.mkdir(exist_ok=True)
    REPORT_FILE.write_text(report_content + "\n", encoding="utf-8")
    print(f"📄 Execution report saved to: {REPORT_FILE}")
    return REPORT_FILE


def run_steps(steps: List[Dict], run_root: Path,
              execute: Callable[[Dict, Path], Tuple[bool, str, float, int]] = execute_step
              ) -> List[Tuple[Dict, str, str, float, int]]:
    """Run steps in order; a step whose `needs` step did not succeed is skipped"""
    results: List[Tuple[Dict, str, str, float, int]] = []
    for i, step in enumerate(steps, 1):
        print(f"\n🎯 STEP {i}/{len(steps)}")
        needs = step["needs"]
        if needs is not None and results[needs][1] != "SUCCESS":
            print(f"⏭️  Skipping {step['name']}: '{steps[needs]['name']}' did not succeed")
            results.append((step, "SKIPPED", "", 0.0, -1))
            continue
        success, output, duration, code = execute(step, run_root)
        results.append((step, "SUCCESS" if success else "FAILED", output, duration, code))
    return results


def main() -> bool:
    stamp = datetime.now(timezone.utc).strftime("%Y%m%d-%H%M%S")
    run_root = get_run_root().resolve()
    steps = build_steps(stamp, run_root)

    print("=" * 80)
    print("MATE REPRODUCTION ORCHESTRATOR")
    print("=" * 80)
    print(f"Started at: {get_timestamp()}")
    print(f"Run root: {run_root}")
    print("\nEXECUTION PLAN")
    print("-" * 80)
    for i, step in enumerate(steps, 1):
        print(f"{i}. {step['name']} ({'REQUIRED' if step['required'] else 'OPTIONAL'})")
        print(f"   mate_cli.py {' '.join(step['args'])}")

    results = run_steps(steps, run_root)

    report_content = generate_execution_report(results)
    print(report_content)
    save_execution_report(report_content)

    critical = [r for r in results if r[0]["required"] and r[1] != "SUCCESS"]
    print("\n🏁 FINAL SUMMARY")
    print(f"Success: {sum(r[1] == 'SUCCESS' for r in results)}/{len(results)} steps")
    if critical:
        print(f"❌ Required steps not completed: {', '.join(r[0]['name'] for r in critical)}")
        return False
    print("✅ Reproduction sequence completed")
    return True


if __name__ == "__main__":
    try:
        sys.exit(0 if main() else 1)
    except KeyboardInterrupt:
        print("\n❌ Execution interrupted by user")
        sys.exit(1)
    except Exception as e:
        print(f"\n💥 FATAL ERROR: {e}")
        sys.exit(1)
