"""Revision prompts, acceptance sampling, edit-distance selection, seeds."""

import logging

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deed.collector import ErrorRecord
from deed.corpus import Origin, load_problems
from deed.gateway import MockBackend
from deed.reviser import (
    build_fsp_prompt,
    build_revise_training_set,
    build_revision_prompt,
    build_seed_prompt,
    collect_revisions,
    levenshtein,
    normalize_code,
)
from deed.sandbox import Sandbox, SandboxConfig, test_eval

from helpers import (
    ScriptWriter,
    failing_code,
    offset_for,
    revised_variant,
    solution_code,
    write_corpus,
)

INSTRUCTION = (
    "I've encountered an error code. I will show you the correct code snippet and "
    "ask for your assistance in fixing the error based on that correct code with "
    "minimal necessary revisions."
)


def oracle_levenshtein(a: str, b: str) -> int:
    """Textbook full-matrix dynamic program; the independent reference."""
    rows, cols = len(a) + 1, len(b) + 1
    table = [[0] * cols for _ in range(rows)]
    for i in range(rows):
        table[i][0] = i
    for j in range(cols):
        table[0][j] = j
    for i in range(1, rows):
        for j in range(1, cols):
            cost = 0 if a[i - 1] == b[j - 1] else 1
            table[i][j] = min(
                table[i - 1][j] + 1, table[i][j - 1] + 1, table[i - 1][j - 1] + cost
            )
    return table[-1][-1]


@pytest.fixture(scope="module")
def sandbox():
    return Sandbox(SandboxConfig(timeout=5.0))


def make_error(problems, pid, code, failed=None, message="AssertionError"):
    problem = problems.get(pid)
    return ErrorRecord(
        problem_id=pid,
        code=code,
        avg_logprob=-0.5,
        error_message=message,
        failed_tests=failed if failed is not None else [t.test_id for t in problem.tests],
        iteration=1,
    )


class TestRevisionPrompt:
    def build(self, tmp_path, failed=None):
        corpus = tmp_path / "c.jsonl"
        write_corpus(corpus, 1, n_tests=2)
        problems = load_problems(corpus)
        error = make_error(problems, "p000", failing_code("p000", offset_for(0)), failed)
        return problems, error, build_revision_prompt(problems.get("p000"), error)

    def test_instruction_header_is_verbatim(self, tmp_path):
        _, _, prompt = self.build(tmp_path)
        assert prompt.text.startswith(INSTRUCTION)
        assert "minimal necessary revisions" in prompt.text

    def test_sections_in_fixed_order(self, tmp_path):
        problems, error, prompt = self.build(tmp_path)
        positions = [
            prompt.text.index("### Requirement:"),
            prompt.text.index("### Correct Solution:"),
            prompt.text.index("### Error Code:"),
            prompt.text.index("### Error Messages:"),
            prompt.text.index("### Failed Test Cases:"),
            prompt.text.index("### Revised Code:"),
        ]
        assert positions == sorted(positions)
        assert prompt.parts["error_code"] == error.code

    def test_failed_test_snippets_in_test_order(self, tmp_path):
        problems, error, prompt = self.build(tmp_path, failed=["t1", "t0"])
        problem = problems.get("p000")
        section = prompt.text.split("### Failed Test Cases:")[1]
        assert section.index(problem.tests[0].snippet) < section.index(problem.tests[1].snippet)

    def test_rendering_is_deterministic(self, tmp_path):
        _, _, first = self.build(tmp_path)
        _, _, second = self.build(tmp_path)
        assert first.text == second.text

    def test_braces_in_code_survive(self, tmp_path):
        corpus = tmp_path / "c.jsonl"
        write_corpus(corpus, 1)
        problems = load_problems(corpus)
        error = make_error(problems, "p000", "def f():\n    return {'a': 1}\n")
        prompt = build_revision_prompt(problems.get("p000"), error)
        assert "{'a': 1}" in prompt.text

    def test_mismatched_problem_rejected(self, tmp_path):
        corpus = tmp_path / "c.jsonl"
        write_corpus(corpus, 2)
        problems = load_problems(corpus)
        error = make_error(problems, "p001", "x = 1")
        with pytest.raises(ValueError, match="belong"):
            build_revision_prompt(problems.get("p000"), error)


class TestFspPrompt:
    def examples(self, tmp_path, count):
        corpus = tmp_path / "c.jsonl"
        write_corpus(corpus, count)
        problems = load_problems(corpus)
        result = []
        for i, problem in enumerate(problems):
            error = make_error(problems, problem.id, failing_code(problem.id, offset_for(i)))
            result.append((build_revision_prompt(problem, error), f"revised {i}"))
        return result

    def test_four_examples_precede_target(self, tmp_path):
        examples = self.examples(tmp_path, 5)
        target = examples[4][0]
        text = build_fsp_prompt(examples[:4], target, k=4)
        positions = [text.index(f"revised {i}") for i in range(4)]
        assert positions == sorted(positions)
        assert text.endswith(target.text)
        assert positions[-1] < len(text) - len(target.text)

    def test_k_zero_is_target_alone(self, tmp_path):
        examples = self.examples(tmp_path, 1)
        assert build_fsp_prompt([], examples[0][0], k=0) == examples[0][0].text

    def test_insufficient_examples(self, tmp_path):
        examples = self.examples(tmp_path, 3)
        with pytest.raises(ValueError, match="4"):
            build_fsp_prompt(examples, examples[0][0], k=4)


class TestLevenshtein:
    @pytest.mark.parametrize(
        "a,b,expected",
        [("kitten", "sitting", 3), ("same", "same", 0), ("", "abc", 3), ("abc", "", 3)],
    )
    def test_known_values(self, a, b, expected):
        assert levenshtein(a, b) == expected
        assert oracle_levenshtein(a, b) == expected

    strings = st.text(alphabet="abcXY \n", max_size=24)

    @settings(max_examples=150, deadline=None)
    @given(a=strings, b=strings)
    def test_matches_oracle(self, a, b):
        assert levenshtein(a, b) == oracle_levenshtein(a, b)

    @settings(max_examples=100, deadline=None)
    @given(a=strings, b=strings, c=strings)
    def test_metric_axioms(self, a, b, c):
        assert levenshtein(a, b) >= 0
        assert (levenshtein(a, b) == 0) == (a == b)
        assert levenshtein(a, b) == levenshtein(b, a)
        assert levenshtein(a, c) <= levenshtein(a, b) + levenshtein(b, c)


class TestNormalizeCode:
    def test_trailing_spaces_and_crlf(self):
        assert normalize_code("def f():  \r\n    return 1\r\n") == "def f():\n    return 1"

    def test_blank_edges_dropped(self):
        assert normalize_code("\n\nx = 1\n\n") == "x = 1"


def revision_fixture(tmp_path, candidates, n_problems=1):
    corpus = tmp_path / "c.jsonl"
    ids = write_corpus(corpus, n_problems, n_tests=1)
    problems = load_problems(corpus)
    writer = ScriptWriter()
    for pid, cands in candidates.items():
        writer.add(pid, "revise", cands)
    backend = MockBackend.from_file(writer.write(tmp_path / "script.jsonl"))
    return problems, backend, ids


class TestCollectRevisions:
    def test_min_distance_after_excluding_solution_copy(self, tmp_path, sandbox):
        k = offset_for(0)
        error_code = failing_code("p000", k)
        # one trailing space: normalizes equal to g, and sits closest to the error
        solution_copy = solution_code("p000", k).replace(f"+ {k}\n", f"+ {k} \n")
        near = revised_variant("p000", k, 0)
        far = revised_variant("p000", k, 2)
        problems, backend, _ = revision_fixture(
            tmp_path, {"p000": [solution_copy, far, near, failing_code("p000", k)]}
        )
        errors = [make_error(problems, "p000", error_code)]
        records = collect_revisions(errors, problems, backend, sandbox, n_samples=4)
        assert len(records) == 1
        record = records[0]
        d_near = oracle_levenshtein(error_code, near)
        d_far = oracle_levenshtein(error_code, far)
        d_copy = oracle_levenshtein(error_code, solution_copy)
        assert d_copy < d_near < d_far  # the excluded copy would have won
        assert record.revised_code == near
        assert record.edit_distance == d_near
        assert record.error_code == error_code

    def test_all_failing_samples_yield_nothing(self, tmp_path, sandbox):
        k = offset_for(0)
        problems, backend, _ = revision_fixture(
            tmp_path, {"p000": [failing_code("p000", k)] * 3}
        )
        errors = [make_error(problems, "p000", failing_code("p000", k))]
        assert collect_revisions(errors, problems, backend, sandbox, n_samples=3) == []

    def test_distance_tie_breaks_to_earlier_index(self, tmp_path, sandbox):
        corpus = tmp_path / "c.jsonl"
        write_corpus(corpus, 1, n_tests=1)
        problems = load_problems(corpus)
        k = offset_for(0)  # 1: target is x + 1, single-digit arithmetic below
        error_code = f"def sol_p000(x):\n    return x - {k} + 0\n"
        tie_a = f"def sol_p000(x):\n    return x + {k} + 0\n"  # '-' -> '+'
        tie_b = f"def sol_p000(x):\n    return x - {k} + {2 * k}\n"  # '0' -> '2'
        writer = ScriptWriter().add("p000", "revise", [tie_a, tie_b])
        backend = MockBackend.from_file(writer.write(tmp_path / "script.jsonl"))
        errors = [make_error(problems, "p000", error_code)]
        records = collect_revisions(errors, problems, backend, sandbox, n_samples=2)
        d_a = oracle_levenshtein(error_code, tie_a)
        d_b = oracle_levenshtein(error_code, tie_b)
        assert d_a == d_b  # genuine tie
        verdicts = [
            sandbox.run_tests(c, problems.get("p000")).verdict for c in (tie_a, tie_b)
        ]
        assert verdicts == ["pass", "pass"]
        assert records[0].revised_code == tie_a

    def test_replay_soundness_and_exclusion(self, tmp_path, sandbox):
        corpus = tmp_path / "c.jsonl"
        ids = write_corpus(corpus, 3, n_tests=1)
        problems = load_problems(corpus)
        writer = ScriptWriter()
        errors = []
        for i, pid in enumerate(ids):
            k = offset_for(i)
            errors.append(make_error(problems, pid, failing_code(pid, k)))
            writer.add(
                pid, "revise",
                [revised_variant(pid, k, 1), solution_code(pid, k), failing_code(pid, k)],
            )
        backend = MockBackend.from_file(writer.write(tmp_path / "script.jsonl"))
        records = collect_revisions(errors, problems, backend, sandbox, n_samples=3, workers=2)
        assert [r.problem_id for r in records] == sorted(ids)
        for record in records:
            problem = problems.get(record.problem_id)
            assert test_eval(sandbox.run_tests(record.revised_code, problem)) == 1
            assert normalize_code(record.revised_code) != normalize_code(problem.solution)

    def test_generation_failure_skips_record(self, tmp_path, sandbox, caplog):
        corpus = tmp_path / "c.jsonl"
        write_corpus(corpus, 2, n_tests=1)
        problems = load_problems(corpus)
        writer = ScriptWriter().add(
            "p000", "revise", [revised_variant("p000", offset_for(0), 0)]
        )
        backend = MockBackend.from_file(writer.write(tmp_path / "script.jsonl"))
        errors = [
            make_error(problems, "p000", failing_code("p000", offset_for(0))),
            make_error(problems, "p001", failing_code("p001", offset_for(1))),
        ]
        with caplog.at_level(logging.WARNING):
            records = collect_revisions(errors, problems, backend, sandbox, n_samples=1)
        assert [r.problem_id for r in records] == ["p000"]
        assert any("p001" in message for message in caplog.messages)


class TestSeedTrainingSet:
    def test_valid_seeds_become_pairs(self, tmp_path, sandbox):
        corpus = tmp_path / "c.jsonl"
        ids = write_corpus(corpus, 3, n_tests=2)
        problems = load_problems(corpus)
        seed_problems = [problems.get(pid) for pid in ids]
        seed_errors = [
            (failing_code(pid, offset_for(i)), revised_variant(pid, offset_for(i), i))
            for i, pid in enumerate(ids)
        ]
        pairs = build_revise_training_set(seed_problems, seed_errors, sandbox)
        assert len(pairs) == 3
        for pair, (error_code, revised) in zip(pairs, seed_errors):
            assert pair.origin is Origin.REVISE_SEED
            assert pair.completion == revised
            assert pair.iteration == 0
            assert error_code in pair.prompt
            assert "AssertionError" in pair.prompt  # replay evidence rendered

    def test_corrupt_seed_rejected_with_warning(self, tmp_path, sandbox, caplog):
        corpus = tmp_path / "c.jsonl"
        ids = write_corpus(corpus, 2, n_tests=1)
        problems = load_problems(corpus)
        seed_problems = [problems.get(pid) for pid in ids]
        seed_errors = [
            (failing_code(ids[0], offset_for(0)), failing_code(ids[0], offset_for(0))),
            (failing_code(ids[1], offset_for(1)), revised_variant(ids[1], offset_for(1), 0)),
        ]
        with caplog.at_level(logging.WARNING):
            pairs = build_revise_training_set(seed_problems, seed_errors, sandbox)
        assert [p.problem_id for p in pairs] == [ids[1]]
        assert any("corrupt seed" in message for message in caplog.messages)

    def test_zero_distance_seed_is_legal(self, tmp_path, sandbox):
        corpus = tmp_path / "c.jsonl"
        write_corpus(corpus, 1, n_tests=1)
        problems = load_problems(corpus)
        revised = revised_variant("p000", offset_for(0), 0)
        pairs = build_revise_training_set(
            [problems.get("p000")], [(revised, revised)], sandbox
        )
        assert len(pairs) == 1  # seed "error" that already passes is accepted

    def test_passing_error_code_renders_empty_evidence(self, tmp_path, sandbox):
        corpus = tmp_path / "c.jsonl"
        write_corpus(corpus, 1, n_tests=1)
        problems = load_problems(corpus)
        prompt = build_seed_prompt(
            problems.get("p000"), solution_code("p000", offset_for(0)), sandbox
        )
        assert prompt.parts["error_messages"] == ""
        assert prompt.parts["failed_tests"] == ""

    def test_length_mismatch(self, tmp_path, sandbox):
        corpus = tmp_path / "c.jsonl"
        write_corpus(corpus, 1)
        problems = load_problems(corpus)
        with pytest.raises(ValueError, match="seed"):
            build_revise_training_set([problems.get("p000")], [], sandbox)
