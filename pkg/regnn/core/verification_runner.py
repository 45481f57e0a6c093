"""
Verification Runner
Executes the optimizer scaling checks and the expressivity witnesses with
per-check timing and error capture, sequentially or concurrently.
"""

import asyncio
import logging
import time
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Dict, List, Optional

import numpy as np
from pydantic import BaseModel

from regnn.config import settings
from regnn.core import proofs
from regnn.core.hgraph import random_hetero_graph
from regnn.core.optim import verify_scaling_batch
from regnn.schemas.reports import CheckRecord, VerifySummary
from regnn.schemas.run_schemas import OptimizerKind


logger = logging.getLogger(__name__)

CheckFn = Callable[[], BaseModel]

SCALING_LAMBDA = 100.0


class CheckStatus(str, Enum):
    """Verification check outcome."""
    PASSED = "passed"
    FAILED = "failed"
    ERROR = "error"
    SKIPPED = "skipped"


@dataclass
class CheckExecutionResult:
    """Structured result from one check."""
    name: str
    status: CheckStatus
    execution_time_seconds: float
    report: Optional[BaseModel]
    error_message: Optional[str]

    def to_record(self) -> CheckRecord:
        return CheckRecord(
            name=self.name,
            status=self.status.value,
            execution_time_seconds=self.execution_time_seconds,
            error_message=self.error_message,
            report=self.report.model_dump(mode="json") if self.report is not None else None,
        )


def build_checks(
    seed: int,
    traces: Optional[int] = None,
    steps: Optional[int] = None,
) -> Dict[str, CheckFn]:
    """
    The full `verify` suite keyed by check name.

    Every check draws from its own child of SeedSequence(seed), so results do
    not depend on execution order or concurrency.
    """
    traces = traces or settings.VERIFY_TRACES
    steps = steps or settings.VERIFY_TRACE_STEPS
    children = iter(np.random.SeedSequence(seed).spawn(32))

    def rng() -> np.random.Generator:
        return np.random.default_rng(next(children))

    checks: Dict[str, CheckFn] = {}
    for kind in OptimizerKind:
        child = int(next(children).generate_state(1)[0])
        checks[f"scaling_{kind.value}"] = (
            lambda k=kind.value, s=child: verify_scaling_batch(k, SCALING_LAMBDA, traces, steps, seed=s)
        )
    adam_seed = int(next(children).generate_state(1)[0])
    checks["scaling_adam_eps"] = (
        lambda: verify_scaling_batch("adam", SCALING_LAMBDA, traces, steps, seed=adam_seed, eps=1e-8)
    )

    lemma3_rng, lemma4_rng, cor5_rng, thm6_rng = rng(), rng(), rng(), rng()
    degen_rng, absorb_rng, factor_rng, grad_rng = rng(), rng(), rng(), rng()

    checks["lemma3"] = lambda: proofs.lemma3_random(lemma3_rng)
    checks["lemma4"] = lambda: proofs.lemma4_monte_carlo(lemma4_rng)
    checks["corollary5"] = lambda: proofs.corollary5_random(cor5_rng)
    checks["theorem6"] = lambda: proofs.theorem6_random(thm6_rng)
    checks["theorem7_mlp_separation"] = proofs.mlp_separation_witness
    checks["theorem7_determinant"] = (
        lambda: proofs.determinant_witness(*proofs.determinant_witness_pair())
    )

    def degeneration():
        g = random_hetero_graph(degen_rng, counts=(5, 4, 3), num_relations=3, num_classes=3)
        return proofs.degeneration_check(g, degen_rng)

    checks["degeneration"] = degeneration
    checks["row_stochastic_absorption"] = lambda: proofs.row_stochastic_absorption(absorb_rng)
    checks["degree_factorization"] = lambda: proofs.degree_factorization_check(factor_rng)
    checks["gradient_check"] = lambda: proofs.gradient_check(grad_rng)
    return checks


class VerificationRunner:
    """
    Executes named checks and collects their reports.

    Responsibilities:
    - Time each check
    - Turn a report into a status (skipped reports are not failures)
    - Capture exceptions as ERROR results instead of propagating them
    - Support both sync and async execution
    """

    def __init__(self, checks: Dict[str, CheckFn], max_concurrent: Optional[int] = None):
        """
        Args:
            checks: check name -> zero-argument callable returning a report
            max_concurrent: maximum number of checks running at once
        """
        self.checks = dict(checks)
        self.max_concurrent = max_concurrent or settings.VERIFY_MAX_CONCURRENT

    def execute_check(self, name: str) -> CheckExecutionResult:
        """
        Execute a single check synchronously.

        Returns:
            CheckExecutionResult with execution details
        """
        if name not in self.checks:
            raise KeyError(f"Unknown check '{name}'")
        started = time.perf_counter()
        try:
            report = self.checks[name]()
        except Exception as e:
            logger.exception("Check '%s' raised", name)
            return CheckExecutionResult(
                name=name,
                status=CheckStatus.ERROR,
                execution_time_seconds=time.perf_counter() - started,
                report=None,
                error_message=f"{type(e).__name__}: {e}",
            )

        elapsed = time.perf_counter() - started
        if getattr(report, "skipped", False):
            status = CheckStatus.SKIPPED
        elif getattr(report, "passed", False):
            status = CheckStatus.PASSED
        else:
            status = CheckStatus.FAILED

        if status == CheckStatus.FAILED:
            logger.error("Check '%s' failed after %.2fs", name, elapsed)
        else:
            logger.info("Check '%s' %s in %.2fs", name, status.value, elapsed)
        return CheckExecutionResult(
            name=name,
            status=status,
            execution_time_seconds=elapsed,
            report=report,
            error_message=None if status != CheckStatus.FAILED else "check did not pass",
        )

    async def execute_check_async(self, name: str) -> CheckExecutionResult:
        """Execute a check in a worker thread."""
        return await asyncio.to_thread(self.execute_check, name)

    async def execute_batch(
        self,
        names: Optional[List[str]] = None,
        concurrent: bool = True,
    ) -> Dict[str, CheckExecutionResult]:
        """
        Execute several checks, optionally in parallel.

        Args:
            names: checks to run (all when None)
            concurrent: whether to run checks concurrently

        Returns:
            Dictionary mapping check names to results, in request order
        """
        names = list(self.checks) if names is None else list(names)
        if not concurrent:
            results = {}
            for name in names:
                results[name] = await self.execute_check_async(name)
            return results

        semaphore = asyncio.Semaphore(self.max_concurrent)

        async def execute_with_semaphore(name: str) -> CheckExecutionResult:
            async with semaphore:
                return await self.execute_check_async(name)

        finished = await asyncio.gather(*(execute_with_semaphore(n) for n in names))
        return dict(zip(names, finished))

    def run_all(self, seed: int, concurrent: Optional[bool] = None) -> VerifySummary:
        concurrent = settings.VERIFY_CONCURRENT if concurrent is None else concurrent
        results = asyncio.run(self.execute_batch(concurrent=concurrent))
        return summarize(seed, results)


def summarize(seed: int, results: Dict[str, CheckExecutionResult]) -> VerifySummary:
    records = [r.to_record() for r in results.values()]
    failed = sum(1 for r in results.values() if r.status in (CheckStatus.FAILED, CheckStatus.ERROR))
    return VerifySummary(
        seed=seed,
        passed=failed == 0,
        total=len(records),
        failed=failed,
        checks=records,
    )


def run_verification(
    seed: int,
    concurrent: Optional[bool] = None,
    traces: Optional[int] = None,
    steps: Optional[int] = None,
) -> VerifySummary:
    """Build and run the whole suite; the summary passes iff no check failed or errored."""
    runner = VerificationRunner(build_checks(seed, traces, steps))
    summary = runner.run_all(seed, concurrent)
    logger.info("Verification finished: %d/%d checks ok", summary.total - summary.failed, summary.total)
    return summary