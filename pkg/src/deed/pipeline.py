"""Iteration controller: collect failing samples, revise them, train on
the replay union, repeat. State persists at every phase boundary so an
aborted run resumes without repeating any sampling.

Run directory layout::

    config            frozen copy of the effective run configuration
    state             resumable controller state (JSON)
    split.manifest    train/test and revise-seed/adapt id partition
    revise/           revise-model seed training (FT mode)
    iterN/errors      collected error records for iteration N
    iterN/revisions   accepted revision records for iteration N
    iterN/train.pairs replay union fed to the trainer
    iterN/trainer/    trainer hparams + result manifest
    eval/report       evaluation report
"""

from __future__ import annotations

import json
import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

from . import ioutil
from .collector import ErrorRecord, collect_errors
from .config import RunConfig
from .corpus import (
    Origin,
    Problem,
    ProblemSet,
    SplitManifest,
    TrainPair,
    emit_training_file,
    load_problems,
    split_revise_seed,
    split_train_test,
)
from .errors import ConfigError, CorpusError, DeedError, StateError
from .evaluator import EvalReport, evaluate_model
from .gateway import HttpCompletionsBackend, MockBackend
from .reviser import (
    RevisionPrompt,
    RevisionRecord,
    build_revise_training_set,
    build_seed_prompt,
    collect_revisions,
)
from .sandbox import Sandbox, SandboxConfig
from .trainer import ReplayBuffer, TrainerJob, assemble_replay, launch_training

log = logging.getLogger(__name__)

CONFIG_FILE = "config"
STATE_FILE = "state"
MANIFEST_FILE = "split.manifest"

PHASES = ("collected", "revised")


@dataclass
class IterationStats:
    iteration: int
    n_errors: int
    n_revisions: int
    cumulative_revisions: int
    trained: bool
    final_loss: float | None
    base_model_ref: str
    model_ref: str

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "n_errors": self.n_errors,
            "n_revisions": self.n_revisions,
            "cumulative_revisions": self.cumulative_revisions,
            "trained": self.trained,
            "final_loss": self.final_loss,
            "base_model_ref": self.base_model_ref,
            "model_ref": self.model_ref,
        }

    @classmethod
    def from_dict(cls, rec: dict) -> "IterationStats":
        return cls(**rec)


@dataclass
class PendingPhase:
    iteration: int
    phase: str  # collected | revised

    def to_dict(self) -> dict:
        return {"iteration": self.iteration, "phase": self.phase}


@dataclass
class PipelineState:
    iteration: int
    current_model_ref: str
    revise_model_ref: str | None
    buffer: ReplayBuffer
    history: list[IterationStats]
    rng_seed: int
    config_digest: str
    pending: PendingPhase | None = None
    finished: bool = False

    def validate(self) -> None:
        if len(self.history) != self.iteration:
            raise StateError(
                f"history holds {len(self.history)} entries for iteration {self.iteration}"
            )
        expected = list(range(1, self.iteration + 1))
        if self.buffer.iterations() != expected:
            raise StateError(
                f"buffer iterations {self.buffer.iterations()} do not match 1..{self.iteration}"
            )
        if self.pending is not None:
            if self.pending.phase not in PHASES:
                raise StateError(f"unknown pending phase {self.pending.phase!r}")
            if self.pending.iteration != self.iteration + 1:
                raise StateError(
                    f"pending iteration {self.pending.iteration} does not follow {self.iteration}"
                )

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "current_model_ref": self.current_model_ref,
            "revise_model_ref": self.revise_model_ref,
            "buffer": self.buffer.to_dict(),
            "history": [h.to_dict() for h in self.history],
            "rng_seed": self.rng_seed,
            "config_digest": self.config_digest,
            "pending": self.pending.to_dict() if self.pending else None,
            "finished": self.finished,
        }

    @classmethod
    def from_dict(cls, rec: dict) -> "PipelineState":
        try:
            pending = rec.get("pending")
            state = cls(
                iteration=int(rec["iteration"]),
                current_model_ref=rec["current_model_ref"],
                revise_model_ref=rec.get("revise_model_ref"),
                buffer=ReplayBuffer.from_dict(rec.get("buffer", {})),
                history=[IterationStats.from_dict(h) for h in rec.get("history", [])],
                rng_seed=int(rec["rng_seed"]),
                config_digest=rec["config_digest"],
                pending=PendingPhase(**pending) if pending else None,
                finished=bool(rec.get("finished", False)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise StateError(f"corrupt pipeline state: {exc}") from exc
        state.validate()
        return state


@contextmanager
def _phase(name: str):
    """Tag escaping pipeline errors with the phase they broke in."""
    try:
        yield
    except DeedError as exc:
        if not getattr(exc, "phase", None):
            exc.phase = name
        raise


def build_gateway(cfg: RunConfig):
    if cfg.backend.kind == "mock":
        return MockBackend.from_file(cfg.backend.script)
    return HttpCompletionsBackend(
        base_url=cfg.backend.base_url,
        api_key_env=cfg.backend.api_key_env,
        request_timeout=cfg.backend.request_timeout,
        max_retries=cfg.backend.max_retries,
        backoff=cfg.backend.backoff,
    )


def build_sandbox(cfg: RunConfig) -> Sandbox:
    return Sandbox(
        SandboxConfig(
            command_template=cfg.sandbox.command_template,
            timeout=cfg.sandbox.timeout,
            memory_mb=cfg.sandbox.memory_mb,
            block_network=cfg.sandbox.block_network,
        ),
        audit_path=cfg.sandbox.audit_log,
    )


class Pipeline:
    """One adaptation run bound to a run directory."""

    def __init__(
        self,
        cfg: RunConfig,
        run_dir: str | Path,
        state: PipelineState,
        problems: ProblemSet,
        manifest: SplitManifest,
        gateway=None,
        clock=time.time,
    ):
        self.cfg = cfg
        self.run_dir = Path(run_dir)
        self.state = state
        self.problems = problems
        self.manifest = manifest
        self.gateway = gateway if gateway is not None else build_gateway(cfg)
        self.sandbox = build_sandbox(cfg)
        self.clock = clock
        self._fsp_cache: list[tuple[RevisionPrompt, str]] | None = None

    # -- construction --------------------------------------------------

    @classmethod
    def prepare(cls, cfg: RunConfig, run_dir: str | Path, gateway=None) -> "Pipeline":
        """Initialize a fresh run directory: validate, load, split, persist."""
        cfg.validate()
        run_dir = Path(run_dir)
        if (run_dir / STATE_FILE).exists():
            raise StateError(f"{run_dir} already holds a run; resume it instead")
        run_dir.mkdir(parents=True, exist_ok=True)
        with _phase("split"):
            problems = load_problems(cfg.corpus)
            manifest = split_train_test(problems, cfg.split.seed)
            manifest = split_revise_seed(
                manifest, cfg.split.revise_fraction, cfg.split.revise_seed
            )
        ioutil.write_text_atomic(run_dir / CONFIG_FILE, cfg.dumps())
        manifest.save(run_dir / MANIFEST_FILE)
        state = PipelineState(
            iteration=0,
            current_model_ref=cfg.base_model_ref,
            revise_model_ref=None,
            buffer=ReplayBuffer(),
            history=[],
            rng_seed=cfg.split.seed,
            config_digest=cfg.digest(),
        )
        pipeline = cls(cfg, run_dir, state, problems, manifest, gateway=gateway)
        pipeline._persist()
        return pipeline

    @classmethod
    def resume(cls, run_dir: str | Path, gateway=None) -> "Pipeline":
        """Rebuild a pipeline from its run directory, refusing config drift."""
        run_dir = Path(run_dir)
        state_path = run_dir / STATE_FILE
        if not state_path.exists():
            raise StateError(f"no pipeline state under {run_dir}")
        cfg = RunConfig.load(run_dir / CONFIG_FILE)
        cfg.validate()
        try:
            state = PipelineState.from_dict(
                json.loads(state_path.read_text(encoding="utf-8"))
            )
        except json.JSONDecodeError as exc:
            raise StateError(f"corrupt state file {state_path}: {exc}") from exc
        if state.config_digest != cfg.digest():
            raise StateError(
                "config digest mismatch: the run directory's config no longer matches "
                "the one this run started with; refusing to resume"
            )
        problems = load_problems(cfg.corpus)
        manifest = SplitManifest.load(run_dir / MANIFEST_FILE)
        return cls(cfg, run_dir, state, problems, manifest, gateway=gateway)

    # -- persistence ---------------------------------------------------

    def _persist(self) -> None:
        ioutil.write_json_atomic(self.run_dir / STATE_FILE, self.state.to_dict())

    def _iter_dir(self, iteration: int) -> Path:
        path = self.run_dir / f"iter{iteration}"
        path.mkdir(parents=True, exist_ok=True)
        return path

    def _load_errors(self, iteration: int) -> list[ErrorRecord]:
        path = self._iter_dir(iteration) / "errors"
        if not path.exists():
            raise StateError(f"missing errors file for iteration {iteration}")
        return [ErrorRecord.from_dict(rec) for _, rec in ioutil.iter_jsonl(path)]

    def _load_revisions(self, iteration: int) -> list[RevisionRecord]:
        path = self._iter_dir(iteration) / "revisions"
        if not path.exists():
            raise StateError(f"missing revisions file for iteration {iteration}")
        return [RevisionRecord.from_dict(rec) for _, rec in ioutil.iter_jsonl(path)]

    # -- revise-model setup ---------------------------------------------

    def _load_seeds(self) -> list[tuple[Problem, str, str]]:
        path = self.cfg.revise.seed_file
        if not path:
            raise ConfigError(
                "revise.seed_file is required (or set revise.model_ref to reuse a model)"
            )
        path = Path(path)
        if not path.exists():
            raise CorpusError(f"seed file not found: {path}")
        wanted = set(self.manifest.revise_seed_ids)
        seeds: list[tuple[Problem, str, str]] = []
        try:
            for lineno, rec in ioutil.iter_jsonl(path):
                for key in ("problem_id", "error_code", "revised_code"):
                    if not rec.get(key):
                        raise CorpusError(f"seed line {lineno}: missing field {key!r}")
                if rec["problem_id"] not in wanted:
                    continue  # seeds outside the revise-seed split are ignored
                seeds.append(
                    (self.problems.get(rec["problem_id"]), rec["error_code"], rec["revised_code"])
                )
        except ValueError as exc:
            raise CorpusError(str(exc)) from exc
        seeds.sort(key=lambda item: item[0].id)
        return seeds

    def _fsp_examples(self) -> list[tuple[RevisionPrompt, str]]:
        if self._fsp_cache is None:
            seeds = self._load_seeds()
            k = self.cfg.revise.fsp_k
            if len(seeds) < k:
                raise ConfigError(
                    f"fsp mode needs at least {k} seed examples, found {len(seeds)}"
                )
            self._fsp_cache = [
                (build_seed_prompt(problem, error_code, self.sandbox), revised_code)
                for problem, error_code, revised_code in seeds[:k]
            ]
        return self._fsp_cache

    def ensure_revise_model(self) -> None:
        """FT mode trains the revise model once, before iteration 1, and
        freezes its reference; a configured override skips the training."""
        state, cfg = self.state, self.cfg
        if cfg.revise.model_ref:
            if state.revise_model_ref != cfg.revise.model_ref:
                state.revise_model_ref = cfg.revise.model_ref
                self._persist()
            return
        if cfg.revise.mode == "fsp" or state.revise_model_ref:
            return
        with _phase("revise-model"):
            seeds = self._load_seeds()
            if not seeds:
                raise ConfigError("no usable seeds in the revise-seed split")
            pairs = build_revise_training_set(
                [problem for problem, _, _ in seeds],
                [(error, revised) for _, error, revised in seeds],
                self.sandbox,
            )
            if not pairs:
                raise ConfigError("every revise seed was rejected; cannot train the revise model")
            revise_dir = self.run_dir / "revise"
            train_file = revise_dir / "train.pairs"
            emit_training_file(pairs, train_file)
            job = TrainerJob(
                train_file=train_file,
                base_model_ref=cfg.base_model_ref,
                mode=cfg.trainer.mode,
                hparams=cfg.trainer.build_hparams(),
                output_dir=revise_dir / "trainer",
            )
            result = launch_training(job, cfg.trainer.command, self.gateway)
            state.revise_model_ref = result.model_ref
            self._persist()
            log.info("revise model trained: %s (loss %.6f)", result.model_ref, result.final_loss)

    # -- phases ----------------------------------------------------------

    def _collect_phase(self, iteration: int) -> list[ErrorRecord]:
        cfg, state = self.cfg, self.state
        with _phase("collect"):
            adapt = self.problems.subset(self.manifest.adapt_ids)
            records = collect_errors(
                adapt,
                self.gateway,
                self.sandbox,
                k_samples=cfg.sampling.k_samples,
                temperature=cfg.sampling.temperature,
                max_tokens=cfg.sampling.max_tokens,
                stop=cfg.sampling.stop,
                iteration=iteration,
                model_ref=state.current_model_ref,
                prompt_template=cfg.sampling.prompt_template,
                workers=cfg.workers,
            )
            ioutil.dump_jsonl_atomic(
                self._iter_dir(iteration) / "errors", (r.to_dict() for r in records)
            )
        state.pending = PendingPhase(iteration=iteration, phase="collected")
        self._persist()
        log.info("iteration %d: collected %d error records", iteration, len(records))
        return records

    def _revise_phase(self, iteration: int, errors: list[ErrorRecord]) -> list[RevisionRecord]:
        cfg, state = self.cfg, self.state
        with _phase("revise"):
            if cfg.revise.mode == "fsp":
                model_ref = cfg.revise.model_ref or state.current_model_ref
                fsp_examples = self._fsp_examples()
            else:
                model_ref = state.revise_model_ref
                fsp_examples = None
                if not model_ref:
                    raise StateError("revise model not initialized; run ensure_revise_model first")
            records = collect_revisions(
                errors,
                self.problems,
                self.gateway,
                self.sandbox,
                n_samples=cfg.sampling.n_revision_samples,
                temperature=cfg.sampling.temperature,
                max_tokens=cfg.sampling.max_tokens,
                stop=cfg.sampling.stop,
                iteration=iteration,
                model_ref=model_ref,
                fsp_examples=fsp_examples,
                fsp_k=cfg.revise.fsp_k,
                workers=cfg.workers,
            )
            ioutil.dump_jsonl_atomic(
                self._iter_dir(iteration) / "revisions", (r.to_dict() for r in records)
            )
        state.pending = PendingPhase(iteration=iteration, phase="revised")
        self._persist()
        log.info("iteration %d: accepted %d revisions", iteration, len(records))
        return records

    def _train_phase(self, iteration: int, revisions: list[RevisionRecord]) -> None:
        cfg, state = self.cfg, self.state
        base_ref = state.current_model_ref
        with _phase("train"):
            pairs = [
                TrainPair(
                    prompt=cfg.sampling.prompt_template.format(
                        requirement=self.problems.get(r.problem_id).requirement
                    ),
                    completion=r.revised_code,
                    origin=Origin.REVISION,
                    problem_id=r.problem_id,
                    iteration=iteration,
                )
                for r in revisions
            ]
            previous = len(assemble_replay(state.buffer, iteration - 1))
            state.buffer.add(iteration, pairs)
            union = assemble_replay(state.buffer, iteration)
            final_loss: float | None = None
            trained = False
            if len(union) > previous:
                iter_dir = self._iter_dir(iteration)
                train_file = iter_dir / "train.pairs"
                emit_training_file(union, train_file)
                job = TrainerJob(
                    train_file=train_file,
                    base_model_ref=base_ref,
                    mode=cfg.trainer.mode,
                    hparams=cfg.trainer.build_hparams(),
                    output_dir=iter_dir / "trainer",
                )
                result = launch_training(job, cfg.trainer.command, self.gateway)
                state.current_model_ref = result.model_ref
                final_loss = result.final_loss
                trained = True
            else:
                log.info("iteration %d added no new revised codes; training skipped", iteration)
        state.history.append(
            IterationStats(
                iteration=iteration,
                n_errors=len(self._load_errors(iteration)),
                n_revisions=len(revisions),
                cumulative_revisions=len(union),
                trained=trained,
                final_loss=final_loss,
                base_model_ref=base_ref,
                model_ref=state.current_model_ref,
            )
        )
        state.iteration = iteration
        state.pending = None
        self._persist()

    # -- iteration drivers -----------------------------------------------

    def run_iteration(self) -> PipelineState:
        """Run (or finish) one iteration: collect, revise, train."""
        state = self.state
        if state.finished:
            raise StateError("run already finished")
        if state.pending is None and state.iteration >= self.cfg.max_iterations:
            raise StateError(
                f"iteration budget exhausted ({state.iteration}/{self.cfg.max_iterations})"
            )
        if state.pending is None:
            iteration = state.iteration + 1
            self._collect_phase(iteration)

        iteration = state.pending.iteration
        if state.pending.phase == "collected":
            errors = self._load_errors(iteration)
            self._revise_phase(iteration, errors)

        if state.pending.phase == "revised":
            revisions = self._load_revisions(iteration)
            self._train_phase(iteration, revisions)
        return state

    def _stopped_by_rule(self) -> bool:
        history = self.state.history
        if not history:
            return False
        previous = history[-2].cumulative_revisions if len(history) > 1 else 0
        return history[-1].cumulative_revisions <= previous

    def run(self) -> PipelineState:
        """Iterate until the budget is spent or revisions stop growing."""
        state = self.state
        if state.finished:
            return state
        self.ensure_revise_model()
        if state.pending is not None:
            self.run_iteration()
        while (
            state.iteration < self.cfg.max_iterations
            and not self._stopped_by_rule()
            and not state.finished
        ):
            self.run_iteration()
        state.finished = True
        self._persist()
        return state

    # -- standalone phase steps (CLI) -------------------------------------

    def step_collect(self) -> int:
        state = self.state
        if state.finished:
            raise StateError("run already finished")
        if state.pending is not None:
            raise StateError(f"iteration {state.pending.iteration} already has a pending phase")
        if state.iteration >= self.cfg.max_iterations:
            raise StateError("iteration budget exhausted")
        return len(self._collect_phase(state.iteration + 1))

    def step_revise(self) -> int:
        state = self.state
        if state.pending is None or state.pending.phase != "collected":
            raise StateError("no collected errors pending; run `deed collect` first")
        self.ensure_revise_model()
        iteration = state.pending.iteration
        return len(self._revise_phase(iteration, self._load_errors(iteration)))

    def step_train(self) -> IterationStats:
        state = self.state
        if state.pending is None or state.pending.phase != "revised":
            raise StateError("no revisions pending; run `deed revise` first")
        iteration = state.pending.iteration
        self._train_phase(iteration, self._load_revisions(iteration))
        return state.history[-1]

    # -- evaluation --------------------------------------------------------

    def evaluate(
        self,
        model_ref: str | None = None,
        n: int | None = None,
        ks: list[int] | None = None,
        repeats: int | None = None,
        out_path: str | Path | None = None,
    ) -> EvalReport:
        cfg = self.cfg
        with _phase("eval"):
            test_problems = self.problems.subset(self.manifest.test_ids)
            report = evaluate_model(
                test_problems,
                self.gateway,
                self.sandbox,
                n=n if n is not None else cfg.eval.n,
                ks=ks if ks is not None else cfg.eval.ks,
                temperature=cfg.eval.temperature,
                max_tokens=cfg.sampling.max_tokens,
                stop=cfg.sampling.stop,
                model_ref=model_ref or self.state.current_model_ref,
                prompt_template=cfg.sampling.prompt_template,
                repeats=repeats if repeats is not None else cfg.eval.repeats,
                workers=cfg.workers,
                clock=self.clock,
            )
            out_path = Path(out_path) if out_path else self.run_dir / "eval" / "report"
            report.save(out_path)
        return report
