"""Property suites at reduced scale"""

import pytest

from check_suites import (SUITES, PropertyResult, check_gradients, check_injectivity, check_invariance,
                          check_oracle, check_recovery, report_lines, resolve_suites, run_checks)
from errors import UsageError

QUICK = 0.01


def assert_all_pass(results):
    failed = [r.line() for r in results if not r.passed]
    assert not failed, "\n".join(failed)


class TestSuitesQuick:
    def test_invariance(self):
        results = check_invariance(QUICK)
        assert {r.name for r in results} == {"mate_permutation", "rnn_order_sensitive", "attn_order_sensitive",
                                             "step_sequence_agreement"}
        assert_all_pass(results)

    def test_oracle(self):
        assert_all_pass(check_oracle(QUICK))

    def test_recovery(self):
        assert_all_pass(check_recovery(QUICK))

    def test_injectivity(self):
        assert_all_pass(check_injectivity(QUICK))

    def test_gradients(self):
        results = check_gradients(QUICK)
        names = {r.name for r in results}
        assert {"mate_memory", "rnn_memory", "attn_memory", "squashed_gaussian", "dense_relu"} <= names
        assert_all_pass(results)


class TestDriver:
    def test_resolve(self):
        assert resolve_suites("all") == SUITES
        assert resolve_suites("oracle") == ("oracle",)
        with pytest.raises(UsageError):
            resolve_suites("speed")

    def test_run_checks_and_report(self):
        results = run_checks("recovery", scale=QUICK)
        lines = report_lines(results)
        assert lines[0].startswith("PASS  recovery.round_trip")
        assert lines[-1] == f"{len(results)}/{len(results)} properties passed"

    def test_failed_line(self):
        assert PropertyResult("oracle", "x", False, "gap=1").line() == "FAIL  oracle.x: gap=1"


@pytest.mark.slow
def test_full_scale_suites():
    assert_all_pass(run_checks("all"))
