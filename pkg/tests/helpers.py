"""Shared builders for mock corpora, mock backend scripts, and run configs."""

from __future__ import annotations

import json
import sys
from pathlib import Path

from deed.config import RunConfig
from deed.corpus import load_problems, split_revise_seed, split_train_test

MOCK_TRAINER_CMD = f"{sys.executable} -m deed.mock_trainer"


def fn_name(pid: str) -> str:
    return f"sol_{pid}"


def offset_for(index: int) -> int:
    return (index % 7) + 1


def problem_record(pid: str, k: int, n_tests: int = 2) -> dict:
    fn = fn_name(pid)
    tests = [f"assert {fn}(1) == {1 + k}", f"assert {fn}(5) == {5 + k}"]
    return {
        "id": pid,
        "requirement": f"Write a function {fn}(x) that returns x + {k}.",
        "solution": f"def {fn}(x):\n    return x + {k}\n",
        "tests": tests[:n_tests],
        "entry_point": fn,
    }


def write_corpus(path: Path, n: int, n_tests: int = 2, prefix: str = "p") -> list[str]:
    """Write n synthetic problems; returns their ids in corpus order."""
    ids = [f"{prefix}{i:03d}" for i in range(n)]
    with open(path, "w", encoding="utf-8") as fh:
        for i, pid in enumerate(ids):
            fh.write(json.dumps(problem_record(pid, offset_for(i), n_tests)) + "\n")
    return ids


def solution_code(pid: str, k: int) -> str:
    return f"def {fn_name(pid)}(x):\n    return x + {k}\n"


def failing_code(pid: str, k: int) -> str:
    return f"def {fn_name(pid)}(x):\n    return x - {k}\n"


def revised_variant(pid: str, k: int, variant: int = 0) -> str:
    """Correct implementations that differ from the reference solution."""
    fn = fn_name(pid)
    variants = [
        f"def {fn}(x):\n    return {k} + x\n",
        f"def {fn}(x):\n    y = x + {k}\n    return y\n",
        f"def {fn}(x):\n    result = x + {k}\n    return result\n",
    ]
    return variants[variant % len(variants)]


def crash_code() -> str:
    return "def broken(:\n    pass\n"


def hang_code() -> str:
    return "while True:\n    pass\n"


class ScriptWriter:
    """Accumulate mock-backend entries and write them as a script file."""

    def __init__(self) -> None:
        self.records: list[dict] = []

    def add(self, problem_id: str, stage: str, candidates, iteration: int | None = None):
        normalized = []
        for cand in candidates:
            if isinstance(cand, str):
                normalized.append({"text": cand, "token_logprobs": [-1.0]})
            elif isinstance(cand, tuple):
                text, logprobs = cand
                normalized.append({"text": text, "token_logprobs": list(logprobs)})
            else:
                normalized.append(dict(cand))
        record = {"problem_id": problem_id, "stage": stage, "candidates": normalized}
        if iteration is not None:
            record["iteration"] = iteration
        self.records.append(record)
        return self

    def write(self, path: Path) -> Path:
        with open(path, "w", encoding="utf-8") as fh:
            for record in self.records:
                fh.write(json.dumps(record) + "\n")
        return path


def base_config(
    corpus: Path,
    script: Path,
    *,
    max_iterations: int = 2,
    k_samples: int = 2,
    n_revision_samples: int = 2,
    workers: int = 2,
    revise_model_ref: str | None = "mock-revise",
) -> RunConfig:
    cfg = RunConfig(corpus=str(corpus))
    cfg.max_iterations = max_iterations
    cfg.workers = workers
    cfg.backend.script = str(script)
    cfg.sampling.k_samples = k_samples
    cfg.sampling.n_revision_samples = n_revision_samples
    cfg.sampling.max_tokens = 256
    cfg.sandbox.timeout = 5.0
    cfg.trainer.command = MOCK_TRAINER_CMD
    cfg.revise.model_ref = revise_model_ref
    return cfg


def computed_manifest(cfg: RunConfig):
    """Replicate the pipeline's split so fixtures can target the adapt set."""
    problems = load_problems(cfg.corpus)
    manifest = split_train_test(problems, cfg.split.seed)
    return problems, split_revise_seed(manifest, cfg.split.revise_fraction, cfg.split.revise_seed)


def build_nrc_fixture(root: Path, additions: tuple[int, ...] = (31, 10, 2, 1)):
    """Corpus + per-iteration mock script yielding the given revision additions.

    Problems are grouped by the iteration in which their revision first
    survives: before that iteration they fail generation and all their
    revision samples fail; from the next iteration on they pass generation
    outright. Sized so the adapt split holds exactly sum(additions)
    problems (63 train - 19 seed = 44 for the default shape).
    """
    total = sum(additions)
    corpus_path = root / "problems.jsonl"
    script_path = root / "script.jsonl"
    n_corpus = 158  # floor(0.40 * 158) = 63 train; 63 - 19 seed = 44 adapt
    ids = write_corpus(corpus_path, n_corpus, n_tests=1)
    offsets = {pid: offset_for(i) for i, pid in enumerate(ids)}

    cfg = base_config(
        corpus_path,
        script_path,
        max_iterations=len(additions),
        k_samples=2,
        n_revision_samples=2,
        workers=4,
    )
    _, manifest = computed_manifest(cfg)
    adapt = sorted(manifest.adapt_ids)
    if len(adapt) != total:
        raise AssertionError(f"fixture sizing drifted: {len(adapt)} adapt ids for {total} groups")

    group_of: dict[str, int] = {}
    cursor = 0
    for group, size in enumerate(additions, start=1):
        for pid in adapt[cursor : cursor + size]:
            group_of[pid] = group
        cursor += size

    script = ScriptWriter()
    for pid in adapt:
        k = offsets[pid]
        group = group_of[pid]
        bad = failing_code(pid, k)
        good_rev = revised_variant(pid, k, variant=0)
        bad_rev = failing_code(pid, k)
        for iteration in range(1, len(additions) + 1):
            if iteration <= group:
                script.add(
                    pid,
                    "generate",
                    [(bad, [-0.5]), (bad, [-1.2])],
                    iteration=iteration,
                )
                if iteration < group:
                    script.add(pid, "revise", [bad_rev, bad_rev], iteration=iteration)
                else:
                    script.add(pid, "revise", [good_rev, bad_rev], iteration=iteration)
            else:
                solution = solution_code(pid, k)
                script.add(pid, "generate", [solution, solution], iteration=iteration)
    script.write(script_path)
    return cfg, corpus_path, script_path


def dir_snapshot(root: Path) -> dict[str, bytes]:
    """Relative path -> content map for byte-level directory comparison."""
    snapshot = {}
    for path in sorted(root.rglob("*")):
        if path.is_file():
            snapshot[str(path.relative_to(root))] = path.read_bytes()
    return snapshot


def write_config(cfg: RunConfig, path: Path) -> Path:
    path.write_text(cfg.dumps(), encoding="utf-8")
    return path
