"""Isolated execution of candidate programs against a problem's test suite.

Each test snippet is appended to the candidate source and run in its own
fresh subprocess inside a throwaway scratch directory, so failures can be
attributed to individual tests and no state leaks between candidates.
Verdicts: ``pass`` (all tests green), ``crash`` (candidate does not even
compile), ``timeout`` (some test exceeded its wall-clock budget), ``fail``
otherwise.
"""

from __future__ import annotations

import json
import os
import shlex
import shutil
import signal
import subprocess
import sys
import tempfile
import threading
import time
from dataclasses import dataclass
from pathlib import Path

from .corpus import Problem
from .errors import SandboxError

# Runs before the candidate inside the child process. setrlimit may be
# refused on exotic kernels; a weaker sandbox beats a broken one.
_GUARD = """\
def _sandbox_guard():
    {mem_line}
    {net_line}
_sandbox_guard()
del _sandbox_guard
"""

_MEM_LINE = (
    "import resource\n"
    "    try:\n"
    "        resource.setrlimit(resource.RLIMIT_AS, ({limit}, {limit}))\n"
    "    except (ValueError, OSError):\n"
    "        pass"
)

_NET_LINE = (
    "import socket\n"
    "    def _no_net(*_a, **_k):\n"
    "        raise OSError('network access is disabled in the sandbox')\n"
    "    socket.socket = _no_net\n"
    "    socket.create_connection = _no_net"
)


@dataclass
class SandboxConfig:
    """Runner configuration.

    ``command_template`` is the interpreter invocation with a ``{file}``
    placeholder; empty means the current Python interpreter. The guard
    prelude (memory cap, network block) is only injected for Python
    runners.
    """

    command_template: str = ""
    timeout: float = 10.0
    memory_mb: int | None = 512
    block_network: bool = True
    scratch_root: str | None = None
    stderr_cap: int = 2048
    message_cap: int = 512


@dataclass
class ExecutionOutcome:
    verdict: str  # pass | fail | timeout | crash
    failed_tests: list[tuple[str, str]]
    duration: float
    stderr_excerpt: str


def test_eval(outcome: ExecutionOutcome) -> int:
    """0/1 correctness criterion: 1 iff every test passed."""
    return 1 if outcome.verdict == "pass" else 0


test_eval.__test__ = False  # keep pytest from collecting it on import


def _last_line(stderr: str) -> str:
    for line in reversed(stderr.splitlines()):
        if line.strip():
            return line.strip()
    return ""


class Sandbox:
    """Blocking per-candidate runner; safe to call from multiple threads."""

    def __init__(self, config: SandboxConfig | None = None, audit_path: str | Path | None = None):
        self.config = config or SandboxConfig()
        if self.config.timeout <= 0:
            raise SandboxError("per-test timeout must be positive")
        template = self.config.command_template or f"{sys.executable} {{file}}"
        self._argv_template = shlex.split(template)
        if "{file}" not in self._argv_template:
            raise SandboxError(f"runner command {template!r} lacks a {{file}} placeholder")
        runner = self._argv_template[0]
        if shutil.which(runner) is None and not os.path.exists(runner):
            raise SandboxError(f"runner binary not found: {runner!r}")
        self._is_python = "python" in Path(runner).name
        self._audit_path = Path(audit_path) if audit_path else None
        self._audit_lock = threading.Lock()

    def _guard_prelude(self) -> str:
        if not self._is_python:
            return ""
        mem_line = "pass"
        if self.config.memory_mb:
            mem_line = _MEM_LINE.format(limit=self.config.memory_mb * 1024 * 1024)
        net_line = _NET_LINE if self.config.block_network else "pass"
        return _GUARD.format(mem_line=mem_line, net_line=net_line) + "\n"

    def _child_env(self, scratch: str) -> dict[str, str]:
        return {
            "PATH": os.environ.get("PATH", "/usr/bin:/bin"),
            "HOME": scratch,
            "TMPDIR": scratch,
            "LANG": "C.UTF-8",
            "LC_ALL": "C.UTF-8",
            "PYTHONHASHSEED": "0",
            "PYTHONDONTWRITEBYTECODE": "1",
            "PYTHONIOENCODING": "utf-8",
        }

    def _run_one(self, test_file: Path, scratch: str, timeout: float) -> tuple[bool, bool, str]:
        """Run one test file; returns (passed, timed_out, stderr_text)."""
        argv = [test_file.name if tok == "{file}" else tok for tok in self._argv_template]
        try:
            proc = subprocess.Popen(
                argv,
                cwd=scratch,
                env=self._child_env(scratch),
                stdout=subprocess.DEVNULL,
                stderr=subprocess.PIPE,
                start_new_session=True,
            )
        except OSError as exc:
            raise SandboxError(f"failed to spawn runner {argv[0]!r}: {exc}") from exc
        try:
            _, err = proc.communicate(timeout=timeout)
        except subprocess.TimeoutExpired:
            try:
                os.killpg(proc.pid, signal.SIGKILL)
            except (ProcessLookupError, PermissionError):
                proc.kill()
            proc.communicate()
            return False, True, ""
        stderr = (err or b"").decode("utf-8", errors="replace")
        if proc.returncode == 0:
            return True, False, stderr
        return False, False, stderr

    def run_tests(self, code: str, problem: Problem, timeout: float | None = None) -> ExecutionOutcome:
        """Execute ``code`` against every test of ``problem``, one process per test."""
        per_test_timeout = self.config.timeout if timeout is None else timeout
        if per_test_timeout <= 0:
            raise SandboxError("per-test timeout must be positive")
        start = time.monotonic()
        outcome = self._execute(code, problem, per_test_timeout)
        outcome.duration = time.monotonic() - start
        self._audit(problem, outcome)
        return outcome

    def _execute(self, code: str, problem: Problem, timeout: float) -> ExecutionOutcome:
        if self._is_python:
            try:
                compile(code, "candidate.py", "exec")
            except (SyntaxError, ValueError) as exc:
                msg = f"{type(exc).__name__}: {getattr(exc, 'msg', exc)}"
                msg = msg[: self.config.message_cap]
                return ExecutionOutcome(
                    verdict="crash", failed_tests=[], duration=0.0, stderr_excerpt=msg
                )

        try:
            scratch = tempfile.mkdtemp(prefix="deed-sbx-", dir=self.config.scratch_root)
        except OSError as exc:
            raise SandboxError(f"cannot create scratch directory: {exc}") from exc

        prelude = self._guard_prelude()
        failed: list[tuple[str, str]] = []
        stderr_tail = ""
        timed_out = False
        try:
            for i, test in enumerate(problem.tests):
                test_file = Path(scratch) / f"t{i}.py"
                test_file.write_text(
                    prelude + code + "\n\n" + test.snippet + "\n", encoding="utf-8"
                )
                passed, hit_timeout, stderr = self._run_one(test_file, scratch, timeout)
                if passed:
                    continue
                if hit_timeout:
                    timed_out = True
                    failed.append((test.test_id, "timeout"))
                    continue
                message = _last_line(stderr)[: self.config.message_cap] or "nonzero exit status"
                failed.append((test.test_id, message))
                stderr_tail = stderr[-self.config.stderr_cap :]
        finally:
            shutil.rmtree(scratch, ignore_errors=True)

        if not failed:
            verdict = "pass"
        elif timed_out:
            verdict = "timeout"
        else:
            verdict = "fail"
        return ExecutionOutcome(
            verdict=verdict, failed_tests=failed, duration=0.0, stderr_excerpt=stderr_tail
        )

    def _audit(self, problem: Problem, outcome: ExecutionOutcome) -> None:
        if self._audit_path is None:
            return
        record = {
            "problem_id": problem.id,
            "verdict": outcome.verdict,
            "failed_tests": [list(item) for item in outcome.failed_tests],
            "duration_ms": round(outcome.duration * 1000, 3),
        }
        line = json.dumps(record, ensure_ascii=False) + "\n"
        with self._audit_lock:
            self._audit_path.parent.mkdir(parents=True, exist_ok=True)
            with open(self._audit_path, "a", encoding="utf-8") as fh:
                fh.write(line)


def check_solutions(problems, sandbox: Sandbox) -> list[tuple[str, ExecutionOutcome]]:
    """Corpus sanity: return (problem_id, outcome) for solutions that fail."""
    failures = []
    for problem in problems:
        outcome = sandbox.run_tests(problem.solution, problem)
        if test_eval(outcome) != 1:
            failures.append((problem.id, outcome))
    return failures
