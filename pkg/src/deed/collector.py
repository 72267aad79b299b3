"""Error-code collection: rejection-sample candidates per problem and keep
the highest-confidence failure together with its execution evidence.

Candidates that pass their tests are rejected outright; among the failing
ones the candidate with the greatest mean token log-probability survives
(ties break toward the earlier sample). Candidates that do not even
compile are eligible failures too: their evidence is the crash message
and the full test list.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .corpus import Problem
from .errors import GatewayError
from .gateway import Candidate, GenerationRequest, candidate_score
from .sandbox import ExecutionOutcome, Sandbox, test_eval

log = logging.getLogger(__name__)


@dataclass
class ErrorRecord:
    problem_id: str
    code: str
    avg_logprob: float
    error_message: str
    failed_tests: list[str]
    iteration: int

    def to_dict(self) -> dict:
        score = self.avg_logprob
        return {
            "problem_id": self.problem_id,
            "code": self.code,
            "avg_logprob": None if score == float("-inf") else score,
            "error_message": self.error_message,
            "failed_tests": list(self.failed_tests),
            "iteration": self.iteration,
        }

    @classmethod
    def from_dict(cls, rec: dict) -> "ErrorRecord":
        score = rec["avg_logprob"]
        return cls(
            problem_id=rec["problem_id"],
            code=rec["code"],
            avg_logprob=float("-inf") if score is None else float(score),
            error_message=rec["error_message"],
            failed_tests=list(rec["failed_tests"]),
            iteration=int(rec["iteration"]),
        )


def trim_at_stop_markers(text: str, markers: list[str] | None) -> str:
    """Cut generated text at the earliest stop marker, if any occurs.

    Models tend to append trailing test blocks; those must not reach the
    sandbox or they would distort the verdict.
    """
    if not markers:
        return text
    cut = len(text)
    for marker in markers:
        idx = text.find(marker)
        if idx != -1:
            cut = min(cut, idx)
    return text[:cut]


def failure_evidence(outcome: ExecutionOutcome, problem: Problem) -> tuple[str, list[str]]:
    """(error message, failed test ids) for a non-passing outcome."""
    if outcome.verdict == "crash":
        return outcome.stderr_excerpt, [t.test_id for t in problem.tests]
    messages: list[str] = []
    for _, message in outcome.failed_tests:
        if message not in messages:
            messages.append(message)
    return "\n".join(messages), [test_id for test_id, _ in outcome.failed_tests]


def _collect_one(
    problem: Problem,
    gw,
    sandbox: Sandbox,
    *,
    k_samples: int,
    temperature: float,
    max_tokens: int,
    stop: list[str] | None,
    iteration: int,
    model_ref: str,
    prompt_template: str,
) -> ErrorRecord | None:
    prompt = prompt_template.format(requirement=problem.requirement)
    req = GenerationRequest(
        prompt=prompt,
        n=k_samples,
        temperature=temperature,
        max_tokens=max_tokens,
        stop=stop,
        model_ref=model_ref,
        problem_id=problem.id,
        stage="generate",
        iteration=iteration,
    )
    try:
        candidates = gw.generate(req)
    except GatewayError as exc:
        log.warning("generation failed for problem %s: %s", problem.id, exc)
        return None

    best: tuple[float, Candidate, ExecutionOutcome] | None = None
    for candidate in candidates:
        code = trim_at_stop_markers(candidate.text, stop)
        outcome = sandbox.run_tests(code, problem)
        if test_eval(outcome) == 1:
            continue  # rejection sampling keeps failures only
        score = candidate_score(candidate)
        if best is None or score > best[0]:
            best = (score, candidate, outcome)

    if best is None:
        return None
    score, candidate, outcome = best
    message, failed_ids = failure_evidence(outcome, problem)
    return ErrorRecord(
        problem_id=problem.id,
        code=trim_at_stop_markers(candidate.text, stop),
        avg_logprob=score,
        error_message=message,
        failed_tests=failed_ids,
        iteration=iteration,
    )


def collect_errors(
    adapt_set: list[Problem],
    gw,
    sandbox: Sandbox,
    *,
    k_samples: int = 5,
    temperature: float = 0.8,
    max_tokens: int = 1024,
    stop: list[str] | None = None,
    iteration: int = 1,
    model_ref: str = "",
    prompt_template: str = "{requirement}",
    workers: int = 1,
) -> list[ErrorRecord]:
    """At most one ErrorRecord per problem, merged in problem-id order."""
    if k_samples < 1:
        raise ValueError(f"k_samples must be >= 1, got {k_samples}")

    def task(problem: Problem) -> ErrorRecord | None:
        return _collect_one(
            problem,
            gw,
            sandbox,
            k_samples=k_samples,
            temperature=temperature,
            max_tokens=max_tokens,
            stop=stop,
            iteration=iteration,
            model_ref=model_ref,
            prompt_template=prompt_template,
        )

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(task, adapt_set))
    else:
        results = [task(p) for p in adapt_set]
    records = [r for r in results if r is not None]
    records.sort(key=lambda r: r.problem_id)
    return records
