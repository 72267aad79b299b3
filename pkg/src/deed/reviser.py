"""Self-revision: render the revision prompt, acceptance-sample candidate
fixes, and keep the passing revision closest to the error code.

The prompt template lives in ``prompts/revision.tmpl`` so its instruction
header stays auditable byte-for-byte. Sections appear in a fixed order:
requirement, correct solution, error code, error messages, failed test
cases, then the revision cue.
"""

from __future__ import annotations

import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources

from .collector import ErrorRecord, failure_evidence, trim_at_stop_markers
from .corpus import Origin, Problem, ProblemSet, TrainPair
from .errors import GatewayError
from .gateway import GenerationRequest
from .sandbox import Sandbox, test_eval

log = logging.getLogger(__name__)

PROMPT_PARTS = ("requirement", "solution", "error_code", "error_messages", "failed_tests")

_PLACEHOLDER_RE = re.compile(r"\{(" + "|".join(PROMPT_PARTS) + r")\}")

_template_cache: str | None = None


def prompt_template() -> str:
    global _template_cache
    if _template_cache is None:
        ref = resources.files("deed").joinpath("prompts/revision.tmpl")
        _template_cache = ref.read_text(encoding="utf-8")
    return _template_cache


def _render(template: str, parts: dict[str, str]) -> str:
    # Split-and-join instead of str.format: the inserted code routinely
    # contains braces.
    chunks = _PLACEHOLDER_RE.split(template)
    return "".join(parts[c] if c in parts else c for c in chunks)


@dataclass
class RevisionPrompt:
    problem_id: str
    text: str
    parts: dict[str, str]


@dataclass
class RevisionRecord:
    problem_id: str
    error_code: str
    revised_code: str
    edit_distance: int
    iteration: int

    def to_dict(self) -> dict:
        return {
            "problem_id": self.problem_id,
            "error_code": self.error_code,
            "revised_code": self.revised_code,
            "edit_distance": self.edit_distance,
            "iteration": self.iteration,
        }

    @classmethod
    def from_dict(cls, rec: dict) -> "RevisionRecord":
        return cls(
            problem_id=rec["problem_id"],
            error_code=rec["error_code"],
            revised_code=rec["revised_code"],
            edit_distance=int(rec["edit_distance"]),
            iteration=int(rec["iteration"]),
        )


def build_revision_prompt(problem: Problem, error: ErrorRecord) -> RevisionPrompt:
    """Deterministically render the revision input for one error record."""
    if error.problem_id != problem.id:
        raise ValueError(
            f"error record for {error.problem_id!r} does not belong to problem {problem.id!r}"
        )
    failed = set(error.failed_tests)
    snippets = [t.snippet for t in problem.tests if t.test_id in failed]
    parts = {
        "requirement": problem.requirement,
        "solution": problem.solution,
        "error_code": error.code,
        "error_messages": error.error_message,
        "failed_tests": "\n".join(snippets),
    }
    return RevisionPrompt(problem_id=problem.id, text=_render(prompt_template(), parts), parts=parts)


def build_fsp_prompt(
    examples: list[tuple[RevisionPrompt, str]], target: RevisionPrompt, k: int = 4
) -> str:
    """Few-shot variant: k worked (prompt, revised code) examples, then the target."""
    if k < 0:
        raise ValueError(f"k must be >= 0, got {k}")
    if len(examples) < k:
        raise ValueError(f"need {k} few-shot examples, got {len(examples)}")
    blocks = [prompt.text + revised.rstrip("\n") + "\n\n" for prompt, revised in examples[:k]]
    return "".join(blocks) + target.text


def normalize_code(text: str) -> str:
    """Whitespace normalization used for the revision-equals-solution check:
    unify newlines, strip trailing spaces per line, drop blank edges."""
    unified = text.replace("\r\n", "\n").replace("\r", "\n")
    return "\n".join(line.rstrip() for line in unified.split("\n")).strip("\n")


def levenshtein(a: str, b: str) -> int:
    """Exact unit-cost edit distance over characters (two-row DP)."""
    if a == b:
        return 0
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        current = [i]
        for j, cb in enumerate(b, start=1):
            current.append(
                min(
                    previous[j] + 1,  # deletion
                    current[j - 1] + 1,  # insertion
                    previous[j - 1] + (ca != cb),  # substitution
                )
            )
        previous = current
    return previous[-1]


def _revise_one(
    error: ErrorRecord,
    problem: Problem,
    gw,
    sandbox: Sandbox,
    *,
    n_samples: int,
    temperature: float,
    max_tokens: int,
    stop: list[str] | None,
    iteration: int,
    model_ref: str,
    fsp_examples: list[tuple[RevisionPrompt, str]] | None,
    fsp_k: int,
) -> RevisionRecord | None:
    target = build_revision_prompt(problem, error)
    if fsp_examples is None:
        prompt_text = target.text
    else:
        prompt_text = build_fsp_prompt(fsp_examples, target, fsp_k)
    req = GenerationRequest(
        prompt=prompt_text,
        n=n_samples,
        temperature=temperature,
        max_tokens=max_tokens,
        stop=stop,
        model_ref=model_ref,
        problem_id=problem.id,
        stage="revise",
        iteration=iteration,
    )
    try:
        candidates = gw.generate(req)
    except GatewayError as exc:
        log.warning("revision generation failed for problem %s: %s", problem.id, exc)
        return None

    solution_norm = normalize_code(problem.solution)
    best: tuple[int, str] | None = None
    for candidate in candidates:
        code = trim_at_stop_markers(candidate.text, stop)
        outcome = sandbox.run_tests(code, problem)
        if test_eval(outcome) != 1:
            continue  # acceptance sampling keeps passing revisions only
        if normalize_code(code) == solution_norm:
            continue  # a copied solution teaches nothing about the error
        distance = levenshtein(error.code, code)
        if best is None or distance < best[0]:
            best = (distance, code)

    if best is None:
        return None
    distance, code = best
    return RevisionRecord(
        problem_id=problem.id,
        error_code=error.code,
        revised_code=code,
        edit_distance=distance,
        iteration=iteration,
    )


def collect_revisions(
    errors: list[ErrorRecord],
    problems: ProblemSet,
    gw,
    sandbox: Sandbox,
    *,
    n_samples: int = 30,
    temperature: float = 0.8,
    max_tokens: int = 1024,
    stop: list[str] | None = None,
    iteration: int = 1,
    model_ref: str = "",
    fsp_examples: list[tuple[RevisionPrompt, str]] | None = None,
    fsp_k: int = 4,
    workers: int = 1,
) -> list[RevisionRecord]:
    """At most one RevisionRecord per problem; error records whose samples
    all fail (or all collapse onto the reference solution) yield nothing."""
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")

    def task(error: ErrorRecord) -> RevisionRecord | None:
        return _revise_one(
            error,
            problems.get(error.problem_id),
            gw,
            sandbox,
            n_samples=n_samples,
            temperature=temperature,
            max_tokens=max_tokens,
            stop=stop,
            iteration=iteration,
            model_ref=model_ref,
            fsp_examples=fsp_examples,
            fsp_k=fsp_k,
        )

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(task, errors))
    else:
        results = [task(e) for e in errors]
    records = [r for r in results if r is not None]
    records.sort(key=lambda r: r.problem_id)
    return records


def build_seed_prompt(problem: Problem, error_code: str, sandbox: Sandbox) -> RevisionPrompt:
    """Revision prompt for a seed error, with evidence recomputed by replay."""
    outcome = sandbox.run_tests(error_code, problem)
    if test_eval(outcome) == 1:
        message, failed = "", []
    else:
        message, failed = failure_evidence(outcome, problem)
    record = ErrorRecord(
        problem_id=problem.id,
        code=error_code,
        avg_logprob=float("-inf"),
        error_message=message,
        failed_tests=failed,
        iteration=0,
    )
    return build_revision_prompt(problem, record)


def build_revise_training_set(
    seed_problems: list[Problem],
    seed_errors: list[tuple[str, str]],
    sandbox: Sandbox,
) -> list[TrainPair]:
    """Fine-tuning pairs for the revise model from human-revised seed errors.

    Each seed pairs a problem with (error_code, human_revised_code). Seeds
    whose revision fails its own tests are rejected with a warning; a
    revision identical to its error code is legal here.
    """
    if len(seed_problems) != len(seed_errors):
        raise ValueError(
            f"{len(seed_problems)} seed problems vs {len(seed_errors)} seed errors"
        )
    pairs: list[TrainPair] = []
    for problem, (error_code, revised_code) in zip(seed_problems, seed_errors):
        outcome = sandbox.run_tests(revised_code, problem)
        if test_eval(outcome) != 1:
            log.warning(
                "rejecting corrupt seed for problem %s: revised code fails tests (%s)",
                problem.id,
                "; ".join(msg for _, msg in outcome.failed_tests) or outcome.verdict,
            )
            continue
        prompt = build_seed_prompt(problem, error_code, sandbox)
        pairs.append(
            TrainPair(
                prompt=prompt.text,
                completion=revised_code,
                origin=Origin.REVISE_SEED,
                problem_id=problem.id,
                iteration=0,
            )
        )
    return pairs
