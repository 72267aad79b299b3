"""Generation backends behind one interface.

Two backends ship: an OpenAI-compatible completions client (bearer token
from an environment variable, per-token log-probabilities requested) and a
deterministic scripted mock for tests and dry runs. Mock lookups key on
(problem_id, stage[, iteration]) rather than the prompt text, so prompt
template changes never invalidate fixtures.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass
from pathlib import Path

import requests

from . import ioutil
from .errors import GatewayError, MockScriptError

STAGES = ("generate", "revise", "eval")


@dataclass
class GenerationRequest:
    prompt: str
    n: int = 1
    temperature: float = 0.8
    max_tokens: int = 1024
    stop: list[str] | None = None
    model_ref: str = ""
    # Routing metadata for the scripted mock; HTTP backends ignore these.
    problem_id: str | None = None
    stage: str | None = None
    iteration: int | None = None

    def __post_init__(self) -> None:
        if self.n < 1:
            raise GatewayError(f"n must be >= 1, got {self.n}")
        if self.max_tokens < 1:
            raise GatewayError(f"max_tokens must be >= 1, got {self.max_tokens}")
        if self.temperature < 0:
            raise GatewayError(f"temperature must be >= 0, got {self.temperature}")


@dataclass
class Candidate:
    text: str
    token_logprobs: list[float]
    backend_index: int


def avg_logprob(candidate: Candidate) -> float:
    """Mean per-token log-probability of a candidate."""
    if not candidate.token_logprobs:
        raise GatewayError(
            f"candidate {candidate.backend_index} has no token log-probabilities"
        )
    return sum(candidate.token_logprobs) / len(candidate.token_logprobs)


def candidate_score(candidate: Candidate) -> float:
    """avg_logprob, or -inf when the backend reported no log-probabilities.

    Scoreless candidates must never win a confidence comparison.
    """
    if not candidate.token_logprobs:
        return float("-inf")
    return avg_logprob(candidate)


class _ModelRegistry:
    def __init__(self) -> None:
        self.known_models: set[str] = set()

    def register_model(self, model_ref: str) -> None:
        self.known_models.add(model_ref)


class MockBackend(_ModelRegistry):
    """Pure scripted backend: (problem_id, stage[, iteration]) -> candidates.

    Script files are line-delimited JSON records::

        {"problem_id": "p1", "stage": "generate", "iteration": 1,
         "candidates": [{"text": "...", "token_logprobs": [-0.1, -0.2]}, ...]}

    ``iteration`` is optional; an entry without it answers any iteration
    that has no iteration-specific entry.
    """

    def __init__(self, script: dict[tuple[str, str, int | None], list[dict]]):
        super().__init__()
        self._script = script
        self.calls: list[tuple[str | None, str | None, int | None]] = []

    @classmethod
    def from_file(cls, path: str | Path) -> "MockBackend":
        path = Path(path)
        if not path.exists():
            raise MockScriptError(f"mock script not found: {path}")
        script: dict[tuple[str, str, int | None], list[dict]] = {}
        try:
            for lineno, rec in ioutil.iter_jsonl(path):
                key, candidates = cls._parse_entry(rec, lineno)
                if key in script:
                    raise MockScriptError(f"line {lineno}: duplicate script key {key}")
                script[key] = candidates
        except ValueError as exc:
            raise MockScriptError(str(exc)) from exc
        return cls(script)

    @staticmethod
    def _parse_entry(rec: dict, lineno: int) -> tuple[tuple[str, str, int | None], list[dict]]:
        problem_id = rec.get("problem_id")
        stage = rec.get("stage")
        iteration = rec.get("iteration")
        if not isinstance(problem_id, str) or not problem_id:
            raise MockScriptError(f"line {lineno}: missing problem_id")
        if stage not in STAGES:
            raise MockScriptError(f"line {lineno}: stage must be one of {STAGES}, got {stage!r}")
        if iteration is not None and (not isinstance(iteration, int) or iteration < 1):
            raise MockScriptError(f"line {lineno}: iteration must be a positive integer")
        raw = rec.get("candidates")
        if not isinstance(raw, list) or not raw:
            raise MockScriptError(f"line {lineno}: 'candidates' must be a non-empty array")
        candidates = []
        for i, cand in enumerate(raw):
            text = cand.get("text") if isinstance(cand, dict) else None
            if not isinstance(text, str):
                raise MockScriptError(f"line {lineno}: candidate #{i} lacks 'text'")
            logprobs = cand.get("token_logprobs", [])
            if not isinstance(logprobs, list) or any(
                not isinstance(v, (int, float)) or v > 0 for v in logprobs
            ):
                raise MockScriptError(
                    f"line {lineno}: candidate #{i} token_logprobs must be numbers <= 0"
                )
            candidates.append({"text": text, "token_logprobs": [float(v) for v in logprobs]})
        return (problem_id, stage, iteration), candidates

    def entries(self):
        """Full script contents: iterable of (key, candidate dicts)."""
        return self._script.items()

    def generate(self, req: GenerationRequest) -> list[Candidate]:
        if req.problem_id is None or req.stage is None:
            raise MockScriptError("mock backend needs problem_id and stage on the request")
        self.calls.append((req.problem_id, req.stage, req.iteration))
        entry = self._script.get((req.problem_id, req.stage, req.iteration))
        if entry is None:
            entry = self._script.get((req.problem_id, req.stage, None))
        key = (req.problem_id, req.stage, req.iteration)
        if entry is None:
            raise MockScriptError(f"no mock script entry for key {key}")
        if len(entry) < req.n:
            raise MockScriptError(
                f"mock script entry {key} holds {len(entry)} candidates but {req.n} requested"
            )
        return [
            Candidate(text=c["text"], token_logprobs=list(c["token_logprobs"]), backend_index=i)
            for i, c in enumerate(entry[: req.n])
        ]


class HttpCompletionsBackend(_ModelRegistry):
    """OpenAI-compatible /completions client with retries and backoff."""

    RETRYABLE_STATUSES = frozenset({408, 429, 500, 502, 503, 504})

    def __init__(
        self,
        base_url: str,
        api_key_env: str = "DEED_API_KEY",
        request_timeout: float = 60.0,
        max_retries: int = 3,
        backoff: float = 0.5,
        post=requests.post,
        sleep=time.sleep,
    ):
        super().__init__()
        if not base_url:
            raise GatewayError("backend base_url is required")
        self._url = base_url.rstrip("/") + "/completions"
        self._api_key_env = api_key_env
        self._timeout = request_timeout
        self._max_retries = max_retries
        self._backoff = backoff
        self._post = post
        self._sleep = sleep
        self.last_retries = 0
        self.total_retries = 0

    def _headers(self) -> dict[str, str]:
        token = os.environ.get(self._api_key_env, "")
        if not token:
            raise GatewayError(
                f"no API token: set the {self._api_key_env} environment variable"
            )
        return {"Authorization": f"Bearer {token}", "Content-Type": "application/json"}

    def _body(self, req: GenerationRequest) -> dict:
        body = {
            "model": req.model_ref,
            "prompt": req.prompt,
            "n": req.n,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
            "logprobs": 1,
        }
        if req.stop:
            body["stop"] = list(req.stop)
        return body

    def generate(self, req: GenerationRequest) -> list[Candidate]:
        headers = self._headers()
        body = self._body(req)
        self.last_retries = 0
        last_error: str = ""
        for attempt in range(self._max_retries + 1):
            if attempt:
                self.last_retries = attempt
                self.total_retries += 1
                self._sleep(self._backoff * (2 ** (attempt - 1)))
            try:
                resp = self._post(
                    self._url, json=body, headers=headers, timeout=self._timeout
                )
            except requests.RequestException as exc:
                last_error = f"transport failure: {exc}"
                continue
            if resp.status_code in self.RETRYABLE_STATUSES:
                last_error = f"HTTP {resp.status_code}"
                continue
            if resp.status_code != 200:
                raise GatewayError(f"backend returned HTTP {resp.status_code}: {resp.text[:200]}")
            candidates = self._parse(resp, req)
            if len(candidates) < req.n:
                last_error = f"backend returned {len(candidates)} of {req.n} candidates"
                continue
            return candidates[: req.n]
        raise GatewayError(
            f"generation failed after {self._max_retries} retries ({last_error})"
        )

    @staticmethod
    def _parse(resp, req: GenerationRequest) -> list[Candidate]:
        try:
            payload = resp.json()
            choices = payload["choices"]
        except (ValueError, KeyError) as exc:
            raise GatewayError(f"malformed backend response: {exc}") from exc
        candidates = []
        for i, choice in enumerate(choices):
            text = choice.get("text")
            if not isinstance(text, str):
                raise GatewayError(f"malformed backend response: choice {i} lacks text")
            logprobs = (choice.get("logprobs") or {}).get("token_logprobs") or []
            # Some servers emit null for the first token; keep the numeric tail,
            # clamping stray tiny positives to zero.
            cleaned = [min(0.0, float(v)) for v in logprobs if isinstance(v, (int, float))]
            candidates.append(Candidate(text=text, token_logprobs=cleaned, backend_index=i))
        return candidates
