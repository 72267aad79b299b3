"""Problem corpora: loading, validation, deterministic splits, and the
trainer exchange format.

A corpus file is line-delimited JSON, one problem per line:

    {"id": "p1", "requirement": "...", "solution": "...",
     "tests": ["assert f(1) == 2", ...] | [{"test_id": "t0", "snippet": "..."}],
     "entry_point": "f"}       # entry_point optional

Plain-string tests receive synthesized ids ``t0, t1, ...``. Validation
failures abort the load (a silently skipped problem would bias every
pass-rate denominator downstream).
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from . import ioutil
from .errors import CorpusError


class Origin(str, Enum):
    """Provenance of a training pair."""

    DATASET_SAMPLE = "dataset_sample"
    REVISION = "revision"
    REVISE_SEED = "revise_seed"


@dataclass(frozen=True)
class TestCase:
    __test__ = False  # not a pytest class

    test_id: str
    snippet: str


@dataclass(frozen=True)
class Problem:
    id: str
    requirement: str
    solution: str
    tests: tuple[TestCase, ...]
    entry_point: str | None = None


@dataclass
class ProblemSet:
    """Problems in corpus order with O(1) lookup by id."""

    problems: list[Problem]
    _by_id: dict[str, Problem] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self._by_id = {p.id: p for p in self.problems}

    def __len__(self) -> int:
        return len(self.problems)

    def __iter__(self):
        return iter(self.problems)

    def ids(self) -> list[str]:
        return [p.id for p in self.problems]

    def get(self, problem_id: str) -> Problem:
        try:
            return self._by_id[problem_id]
        except KeyError:
            raise CorpusError(f"unknown problem id {problem_id!r}") from None

    def subset(self, ids: list[str]) -> list[Problem]:
        """Problems for ``ids`` in corpus order."""
        wanted = set(ids)
        missing = wanted - self._by_id.keys()
        if missing:
            raise CorpusError(f"unknown problem ids: {sorted(missing)}")
        return [p for p in self.problems if p.id in wanted]


@dataclass(frozen=True)
class TrainPair:
    """One (prompt, completion) record of the trainer exchange format."""

    prompt: str
    completion: str
    origin: Origin
    problem_id: str
    iteration: int

    def __post_init__(self) -> None:
        if not self.prompt:
            raise CorpusError(f"train pair for {self.problem_id!r} has an empty prompt")
        if not self.completion:
            raise CorpusError(f"train pair for {self.problem_id!r} has an empty completion")
        if self.iteration < 0:
            raise CorpusError("train pair iteration must be >= 0")

    def to_dict(self) -> dict:
        return {
            "prompt": self.prompt,
            "completion": self.completion,
            "origin": self.origin.value,
            "problem_id": self.problem_id,
            "iteration": self.iteration,
        }

    @classmethod
    def from_dict(cls, rec: dict) -> "TrainPair":
        try:
            return cls(
                prompt=rec["prompt"],
                completion=rec["completion"],
                origin=Origin(rec["origin"]),
                problem_id=rec["problem_id"],
                iteration=int(rec["iteration"]),
            )
        except (KeyError, ValueError) as exc:
            raise CorpusError(f"invalid train pair record: {exc}") from exc


@dataclass
class SplitManifest:
    """Train/test partition plus the revise-seed/adapt partition of train.

    Until ``split_revise_seed`` runs, the whole train set sits in
    ``adapt_ids`` so the coverage invariant holds from construction on.
    """

    train_ids: list[str]
    test_ids: list[str]
    revise_seed_ids: list[str]
    adapt_ids: list[str]
    rng_seed: int
    revise_rng_seed: int | None = None

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        train, test = set(self.train_ids), set(self.test_ids)
        seed, adapt = set(self.revise_seed_ids), set(self.adapt_ids)
        if train & test:
            raise CorpusError(f"train/test overlap: {sorted(train & test)}")
        if seed & adapt:
            raise CorpusError(f"revise-seed/adapt overlap: {sorted(seed & adapt)}")
        if seed | adapt != train:
            raise CorpusError("revise-seed and adapt ids must partition the train ids")

    def to_dict(self) -> dict:
        return {
            "train_ids": list(self.train_ids),
            "test_ids": list(self.test_ids),
            "revise_seed_ids": list(self.revise_seed_ids),
            "adapt_ids": list(self.adapt_ids),
            "rng_seed": self.rng_seed,
            "revise_rng_seed": self.revise_rng_seed,
        }

    @classmethod
    def from_dict(cls, rec: dict) -> "SplitManifest":
        try:
            return cls(
                train_ids=list(rec["train_ids"]),
                test_ids=list(rec["test_ids"]),
                revise_seed_ids=list(rec["revise_seed_ids"]),
                adapt_ids=list(rec["adapt_ids"]),
                rng_seed=int(rec["rng_seed"]),
                revise_rng_seed=rec.get("revise_rng_seed"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise CorpusError(f"invalid split manifest: {exc}") from exc

    def save(self, path: str | Path) -> None:
        ioutil.write_json_atomic(path, self.to_dict())

    @classmethod
    def load(cls, path: str | Path) -> "SplitManifest":
        path = Path(path)
        if not path.exists():
            raise CorpusError(f"split manifest not found: {path}")
        import json

        return cls.from_dict(json.loads(path.read_text(encoding="utf-8")))


def _parse_tests(raw, lineno: int, problem_id: str) -> tuple[TestCase, ...]:
    if not isinstance(raw, list) or not raw:
        raise CorpusError(f"line {lineno}: problem {problem_id!r} needs a non-empty 'tests' array")
    tests: list[TestCase] = []
    seen: set[str] = set()
    for i, item in enumerate(raw):
        if isinstance(item, str):
            test_id, snippet = f"t{i}", item
        elif isinstance(item, dict):
            test_id, snippet = item.get("test_id"), item.get("snippet")
            if not isinstance(test_id, str) or not test_id:
                raise CorpusError(f"line {lineno}: test #{i} of {problem_id!r} lacks a test_id")
        else:
            raise CorpusError(f"line {lineno}: test #{i} of {problem_id!r} must be a string or object")
        if not isinstance(snippet, str) or not snippet.strip():
            raise CorpusError(f"line {lineno}: test {test_id!r} of {problem_id!r} has an empty snippet")
        if test_id in seen:
            raise CorpusError(f"line {lineno}: duplicate test id {test_id!r} in {problem_id!r}")
        seen.add(test_id)
        tests.append(TestCase(test_id=test_id, snippet=snippet))
    return tuple(tests)


def _parse_problem(rec: dict, lineno: int) -> Problem:
    for key in ("id", "requirement", "solution", "tests"):
        if key not in rec:
            raise CorpusError(f"line {lineno}: missing field {key!r}")
    pid = rec["id"]
    if not isinstance(pid, str) or not pid:
        raise CorpusError(f"line {lineno}: 'id' must be a non-empty string")
    for key in ("requirement", "solution"):
        if not isinstance(rec[key], str) or not rec[key].strip():
            raise CorpusError(f"line {lineno}: problem {pid!r} has an empty {key!r}")
    entry_point = rec.get("entry_point")
    if entry_point is not None and not isinstance(entry_point, str):
        raise CorpusError(f"line {lineno}: 'entry_point' of {pid!r} must be a string")
    return Problem(
        id=pid,
        requirement=rec["requirement"],
        solution=rec["solution"],
        tests=_parse_tests(rec["tests"], lineno, pid),
        entry_point=entry_point,
    )


def load_problems(path: str | Path) -> ProblemSet:
    """Load and validate a corpus file; any invalid record aborts the load."""
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"corpus file not found: {path}")
    problems: list[Problem] = []
    seen: dict[str, int] = {}
    try:
        for lineno, rec in ioutil.iter_jsonl(path):
            problem = _parse_problem(rec, lineno)
            if problem.id in seen:
                raise CorpusError(
                    f"line {lineno}: duplicate problem id {problem.id!r}"
                    f" (first seen on line {seen[problem.id]})"
                )
            seen[problem.id] = lineno
            problems.append(problem)
    except ValueError as exc:
        raise CorpusError(str(exc)) from exc
    if not problems:
        raise CorpusError(f"corpus file is empty: {path}")
    return ProblemSet(problems)


def split_train_test(problems: ProblemSet, rng_seed: int) -> SplitManifest:
    """Sample min(200, floor(40% of the corpus)) problem ids into train.

    Uniform, without replacement, fully determined by ``rng_seed``. The
    fresh manifest carries the whole train set as its adapt set.
    """
    if len(problems) < 2:
        raise CorpusError("corpus must contain at least 2 problems to split")
    n_train = min(200, (2 * len(problems)) // 5)  # floor(0.40 * |D|), integer-exact
    if n_train < 1:
        raise CorpusError(f"corpus of {len(problems)} problems leaves an empty train split")
    if n_train >= len(problems):
        raise CorpusError(f"corpus of {len(problems)} problems leaves an empty test split")
    ids = problems.ids()
    train = sorted(random.Random(rng_seed).sample(ids, n_train))
    train_set = set(train)
    test = sorted(pid for pid in ids if pid not in train_set)
    return SplitManifest(
        train_ids=train,
        test_ids=test,
        revise_seed_ids=[],
        adapt_ids=list(train),
        rng_seed=rng_seed,
    )


def split_revise_seed(manifest: SplitManifest, fraction: float, rng_seed: int) -> SplitManifest:
    """Partition the train ids into a revise-seed set and an adapt set.

    The seed set holds round-half-up(fraction * |train|) ids, sampled
    uniformly per ``rng_seed``; the rest become the adapt set.
    """
    if not 0.0 < fraction < 1.0:
        raise CorpusError(f"revise-seed fraction must lie in (0, 1), got {fraction}")
    train = list(manifest.train_ids)
    n_seed = math.floor(fraction * len(train) + 0.5)
    if n_seed == 0 or n_seed == len(train):
        raise CorpusError(
            f"fraction {fraction} of {len(train)} train problems leaves a degenerate split"
        )
    seed_ids = sorted(random.Random(rng_seed).sample(train, n_seed))
    seed_set = set(seed_ids)
    adapt_ids = sorted(pid for pid in train if pid not in seed_set)
    return SplitManifest(
        train_ids=list(manifest.train_ids),
        test_ids=list(manifest.test_ids),
        revise_seed_ids=seed_ids,
        adapt_ids=adapt_ids,
        rng_seed=manifest.rng_seed,
        revise_rng_seed=rng_seed,
    )


def emit_training_file(pairs: list[TrainPair], path: str | Path) -> int:
    """Write pairs in the exchange format, atomically; returns the count."""
    return ioutil.dump_jsonl_atomic(path, (pair.to_dict() for pair in pairs))


def load_training_file(path: str | Path) -> list[TrainPair]:
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"training file not found: {path}")
    pairs: list[TrainPair] = []
    try:
        for lineno, rec in ioutil.iter_jsonl(path):
            try:
                pairs.append(TrainPair.from_dict(rec))
            except CorpusError as exc:
                raise CorpusError(f"line {lineno}: {exc}") from exc
    except ValueError as exc:
        raise CorpusError(str(exc)) from exc
    return pairs
