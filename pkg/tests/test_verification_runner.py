import asyncio

import pytest

from regnn.core.verification_runner import (
    CheckStatus,
    VerificationRunner,
    build_checks,
    run_verification,
    summarize,
)
from regnn.schemas.reports import EquivalenceReport


def _report(passed=True, skipped=False):
    return EquivalenceReport(
        construction="stub", max_deviation=0.0, tolerance=0.0, skipped=skipped, passed=passed,
    )


def _boom():
    raise RuntimeError("broken check")


@pytest.fixture
def runner():
    return VerificationRunner({
        "ok": lambda: _report(),
        "bad": lambda: _report(passed=False),
        "skip": lambda: _report(skipped=True),
        "boom": _boom,
    }, max_concurrent=2)


def test_statuses(runner):
    assert runner.execute_check("ok").status == CheckStatus.PASSED
    assert runner.execute_check("bad").status == CheckStatus.FAILED
    assert runner.execute_check("skip").status == CheckStatus.SKIPPED
    result = runner.execute_check("boom")
    assert result.status == CheckStatus.ERROR
    assert result.error_message == "RuntimeError: broken check"
    assert result.report is None


def test_unknown_check(runner):
    with pytest.raises(KeyError):
        runner.execute_check("missing")


async def test_batch_keeps_request_order(runner):
    results = await runner.execute_batch(["skip", "ok", "boom"])
    assert list(results) == ["skip", "ok", "boom"]


async def test_sequential_matches_concurrent(runner):
    concurrent = await runner.execute_batch(concurrent=True)
    sequential = await runner.execute_batch(concurrent=False)
    assert {k: r.status for k, r in concurrent.items()} == {k: r.status for k, r in sequential.items()}


def test_summary_counts_failures_and_errors(runner):
    results = asyncio.run(runner.execute_batch())
    summary = summarize(7, results)
    assert summary.total == 4
    assert summary.failed == 2
    assert not summary.passed
    record = next(c for c in summary.checks if c.name == "ok")
    assert record.status == "passed"
    assert record.report["construction"] == "stub"


def test_skipped_checks_do_not_fail_the_summary():
    runner = VerificationRunner({"skip": lambda: _report(skipped=True), "ok": lambda: _report()})
    assert runner.run_all(seed=0, concurrent=False).passed


def test_suite_contents():
    checks = build_checks(seed=0, traces=1, steps=2)
    assert {f"scaling_{k}" for k in ("sgd", "momentum", "nesterov", "adagrad", "adam")} <= set(checks)
    assert {"lemma3", "lemma4", "corollary5", "theorem6", "theorem7_mlp_separation",
            "theorem7_determinant", "degeneration", "gradient_check"} <= set(checks)


def test_scaling_checks_are_seed_deterministic():
    a = build_checks(seed=5, traces=2, steps=3)["scaling_adam"]()
    b = build_checks(seed=5, traces=2, steps=3)["scaling_adam"]()
    assert a.observed_e_ratio == b.observed_e_ratio


@pytest.mark.slow
def test_full_suite_passes():
    summary = run_verification(seed=0, traces=5, steps=10)
    failing = [c.name for c in summary.checks if c.status in ("failed", "error")]
    assert summary.passed, failing
