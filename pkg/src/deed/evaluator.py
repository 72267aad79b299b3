"""Final evaluation: sample n completions per test problem, execute them,
and report unbiased Pass@k plus pass@any.

Pass@k uses the numerically stable product form

    pass@k = 1 - prod_{j = n-c+1..n} (1 - k/j)

which equals 1 - C(n-c, k)/C(n, k) without ever materializing binomials.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from . import ioutil
from .collector import trim_at_stop_markers
from .corpus import Problem
from .errors import GatewayError
from .gateway import GenerationRequest
from .sandbox import Sandbox, test_eval

log = logging.getLogger(__name__)


def pass_at_k(n: int, c: int, k: int) -> float:
    """Unbiased estimate of P(at least one of k draws from n samples passes)."""
    if n < 0 or c < 0 or k < 0:
        raise ValueError(f"pass_at_k inputs must be non-negative, got (n={n}, c={c}, k={k})")
    if k < 1 or k > n:
        raise ValueError(f"k must satisfy 1 <= k <= n, got k={k}, n={n}")
    if c > n:
        raise ValueError(f"c must satisfy 0 <= c <= n, got c={c}, n={n}")
    if c == 0:
        return 0.0
    if n - c < k:
        return 1.0
    prod = 1.0
    for j in range(n - c + 1, n + 1):
        prod *= 1.0 - k / j
    return 1.0 - prod


def pass_at_any(per_problem: list[tuple[int, int]]) -> float:
    """Fraction of problems with at least one passing sample."""
    if not per_problem:
        raise ValueError("pass_at_any needs at least one problem")
    return sum(1 for _, c in per_problem if c >= 1) / len(per_problem)


@dataclass
class ProblemEval:
    problem_id: str
    n: int
    c: int

    def __post_init__(self) -> None:
        if not 0 <= self.c <= self.n:
            raise ValueError(f"invalid (n={self.n}, c={self.c}) for {self.problem_id}")


@dataclass
class EvalRun:
    per_problem: list[ProblemEval]
    pass_at: dict[int, float]
    pass_any: float
    annotations: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "per_problem": [
                {"problem_id": p.problem_id, "n": p.n, "c": p.c} for p in self.per_problem
            ],
            "pass_at": {str(k): v for k, v in self.pass_at.items()},
            "pass_any": self.pass_any,
            "annotations": list(self.annotations),
        }


@dataclass
class EvalReport:
    model_ref: str
    temperature: float
    n: int
    ks: list[int]
    timestamp: float
    runs: list[EvalRun]
    aggregate_pass_at: dict[int, float]
    aggregate_pass_any: float

    def to_dict(self) -> dict:
        return {
            "model_ref": self.model_ref,
            "temperature": self.temperature,
            "n": self.n,
            "ks": list(self.ks),
            "timestamp": self.timestamp,
            "runs": [run.to_dict() for run in self.runs],
            "aggregate": {
                "pass_at": {str(k): v for k, v in self.aggregate_pass_at.items()},
                "pass_any": self.aggregate_pass_any,
            },
        }

    def save(self, path: str | Path) -> None:
        ioutil.write_json_atomic(path, self.to_dict())

    @classmethod
    def load(cls, path: str | Path) -> "EvalReport":
        rec = json.loads(Path(path).read_text(encoding="utf-8"))
        runs = [
            EvalRun(
                per_problem=[ProblemEval(**p) for p in run["per_problem"]],
                pass_at={int(k): v for k, v in run["pass_at"].items()},
                pass_any=run["pass_any"],
                annotations=list(run.get("annotations", [])),
            )
            for run in rec["runs"]
        ]
        return cls(
            model_ref=rec["model_ref"],
            temperature=rec["temperature"],
            n=rec["n"],
            ks=[int(k) for k in rec["ks"]],
            timestamp=rec["timestamp"],
            runs=runs,
            aggregate_pass_at={int(k): v for k, v in rec["aggregate"]["pass_at"].items()},
            aggregate_pass_any=rec["aggregate"]["pass_any"],
        )


def _eval_problem(
    problem: Problem,
    gw,
    sandbox: Sandbox,
    *,
    n: int,
    temperature: float,
    max_tokens: int,
    stop: list[str] | None,
    model_ref: str,
    prompt_template: str,
) -> tuple[ProblemEval, str | None]:
    req = GenerationRequest(
        prompt=prompt_template.format(requirement=problem.requirement),
        n=n,
        temperature=temperature,
        max_tokens=max_tokens,
        stop=stop,
        model_ref=model_ref,
        problem_id=problem.id,
        stage="eval",
    )
    try:
        candidates = gw.generate(req)
    except GatewayError as exc:
        # Missing samples count as failing; n must never silently shrink.
        note = f"{problem.id}: generation failed, {n} samples scored as failing ({exc})"
        log.warning(note)
        return ProblemEval(problem_id=problem.id, n=n, c=0), note
    c = 0
    for candidate in candidates:
        code = trim_at_stop_markers(candidate.text, stop)
        if test_eval(sandbox.run_tests(code, problem)) == 1:
            c += 1
    return ProblemEval(problem_id=problem.id, n=n, c=c), None


def evaluate_model(
    test_set: list[Problem],
    gw,
    sandbox: Sandbox,
    *,
    n: int = 50,
    ks: list[int] = (1, 5, 10),
    temperature: float = 0.8,
    max_tokens: int = 1024,
    stop: list[str] | None = None,
    model_ref: str = "",
    prompt_template: str = "{requirement}",
    repeats: int = 1,
    workers: int = 1,
    clock=time.time,
) -> EvalReport:
    """Sample, execute, and aggregate Pass@k as the mean over problems."""
    ks = sorted(int(k) for k in ks)
    if not test_set:
        raise ValueError("test set is empty")
    if not ks:
        raise ValueError("at least one k is required")
    if n < max(ks):
        raise ValueError(f"n={n} must be >= max(ks)={max(ks)}")
    if repeats < 1:
        raise ValueError(f"repeats must be >= 1, got {repeats}")

    def task(problem: Problem) -> tuple[ProblemEval, str | None]:
        return _eval_problem(
            problem,
            gw,
            sandbox,
            n=n,
            temperature=temperature,
            max_tokens=max_tokens,
            stop=stop,
            model_ref=model_ref,
            prompt_template=prompt_template,
        )

    runs: list[EvalRun] = []
    for _ in range(repeats):
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(task, test_set))
        else:
            results = [task(p) for p in test_set]
        results.sort(key=lambda item: item[0].problem_id)
        per_problem = [item[0] for item in results]
        annotations = [item[1] for item in results if item[1]]
        pass_at = {
            k: sum(pass_at_k(p.n, p.c, k) for p in per_problem) / len(per_problem)
            for k in ks
        }
        run_pass_any = pass_at_any([(p.n, p.c) for p in per_problem])
        runs.append(
            EvalRun(
                per_problem=per_problem,
                pass_at=pass_at,
                pass_any=run_pass_any,
                annotations=annotations,
            )
        )

    aggregate_pass_at = {
        k: sum(run.pass_at[k] for run in runs) / len(runs) for k in ks
    }
    aggregate_pass_any = sum(run.pass_any for run in runs) / len(runs)
    return EvalReport(
        model_ref=model_ref,
        temperature=temperature,
        n=n,
        ks=ks,
        timestamp=clock(),
        runs=runs,
        aggregate_pass_at=aggregate_pass_at,
        aggregate_pass_any=aggregate_pass_any,
    )


def render_report_table(reports: list[EvalReport]) -> str:
    """Plain-text comparison of aggregates across model references."""
    if not reports:
        return "(no reports)"
    ks = sorted({k for report in reports for k in report.ks})
    header = ["model_ref", *[f"Pass@{k}" for k in ks], "pass@any", "n", "runs"]
    rows = [header]
    for report in reports:
        rows.append(
            [
                report.model_ref or "(unnamed)",
                *[
                    f"{report.aggregate_pass_at[k]:.4f}" if k in report.aggregate_pass_at else "-"
                    for k in ks
                ],
                f"{report.aggregate_pass_any:.4f}",
                str(report.n),
                str(len(report.runs)),
            ]
        )
    widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
    lines = []
    for idx, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(width) for cell, width in zip(row, widths)).rstrip())
        if idx == 0:
            lines.append("  ".join("-" * width for width in widths))
    return "\n".join(lines)
