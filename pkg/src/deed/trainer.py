"""Experience replay and the out-of-process trainer contract.

Training never happens in this process. A trainer is any command honoring:

    <trainer_cmd> --train-file F --base-model M --mode {full|lora} \
                  --hparams H --output-dir O

where F is an exchange-format file, H a JSON file of hyperparameters, and
the trainer must write ``O/result`` as JSON {model_ref, final_loss,
epochs_run} and exit 0 on success. ``deed.mock_trainer`` ships as a
deterministic stand-in.
"""

from __future__ import annotations

import json
import shlex
import subprocess
from dataclasses import dataclass
from pathlib import Path

from . import ioutil
from .corpus import Origin, TrainPair
from .errors import TrainerError

MODES = ("full", "lora")


@dataclass
class HyperParams:
    learning_rate: float = 5e-6
    batch_size: int = 1
    grad_accum_steps: int = 32
    epochs: int = 10
    beta1: float = 0.9
    beta2: float = 0.9
    schedule: str = "linear"
    lora_rank: int | None = None
    lora_alpha: float | None = None

    @classmethod
    def full_defaults(cls) -> "HyperParams":
        return cls()

    @classmethod
    def lora_defaults(cls) -> "HyperParams":
        return cls(learning_rate=2e-4, lora_rank=128, lora_alpha=8.0)

    def validate(self, mode: str) -> None:
        if mode not in MODES:
            raise TrainerError(f"mode must be one of {MODES}, got {mode!r}")
        for name in ("learning_rate", "batch_size", "grad_accum_steps", "epochs"):
            value = getattr(self, name)
            if value is None or value <= 0:
                raise TrainerError(f"hyperparameter {name} must be positive, got {value}")
        if self.schedule != "linear":
            raise TrainerError(f"unsupported schedule {self.schedule!r}")
        has_lora = self.lora_rank is not None or self.lora_alpha is not None
        if mode == "lora":
            if self.lora_rank is None or self.lora_alpha is None:
                raise TrainerError("lora mode requires lora_rank and lora_alpha")
            if self.lora_rank <= 0 or self.lora_alpha <= 0:
                raise TrainerError("lora_rank and lora_alpha must be positive")
        elif has_lora:
            raise TrainerError("lora_rank/lora_alpha set but mode is not lora")

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "grad_accum_steps": self.grad_accum_steps,
            "epochs": self.epochs,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "schedule": self.schedule,
            "lora_rank": self.lora_rank,
            "lora_alpha": self.lora_alpha,
        }

    @classmethod
    def from_dict(cls, rec: dict) -> "HyperParams":
        known = {f: rec[f] for f in cls().to_dict() if f in rec}
        return cls(**known)


class ReplayBuffer:
    """Per-iteration sets of revision pairs, unique by (problem_id, completion).

    Iterations stay contiguous from 1: adding iteration l materializes any
    missing earlier iterations as empty sets.
    """

    def __init__(self) -> None:
        self._iters: dict[int, dict[tuple[str, str], TrainPair]] = {}

    def add(self, iteration: int, pairs: list[TrainPair]) -> None:
        if iteration < 1:
            raise ValueError(f"buffer iterations start at 1, got {iteration}")
        for l in range(1, iteration + 1):
            self._iters.setdefault(l, {})
        bucket = self._iters[iteration]
        for pair in pairs:
            if pair.origin is not Origin.REVISION:
                raise ValueError(
                    f"replay buffer holds revision pairs only, got origin {pair.origin.value!r}"
                )
            bucket.setdefault((pair.problem_id, pair.completion), pair)

    def iterations(self) -> list[int]:
        return sorted(self._iters)

    def pairs(self, iteration: int) -> list[TrainPair]:
        bucket = self._iters.get(iteration)
        if bucket is None:
            raise ValueError(f"iteration {iteration} not present in buffer")
        return sorted(bucket.values(), key=lambda p: (p.problem_id, p.completion))

    def to_dict(self) -> dict:
        return {
            str(l): [p.to_dict() for p in self.pairs(l)] for l in self.iterations()
        }

    @classmethod
    def from_dict(cls, rec: dict) -> "ReplayBuffer":
        buffer = cls()
        for key in sorted(rec, key=int):
            buffer.add(int(key), [TrainPair.from_dict(p) for p in rec[key]])
        return buffer


def assemble_replay(buffer: ReplayBuffer, upto: int) -> list[TrainPair]:
    """Union of all revision pairs for iterations 1..upto.

    Byte-identical duplicates (same problem_id and completion) collapse to
    their earliest occurrence; output is ordered by (iteration,
    problem_id, completion) and independent of insertion order.
    """
    if upto < 0:
        raise ValueError(f"upto must be >= 0, got {upto}")
    present = set(buffer.iterations())
    missing = [l for l in range(1, upto + 1) if l not in present]
    if missing:
        raise ValueError(f"buffer lacks iterations {missing}")
    seen: dict[tuple[str, str], TrainPair] = {}
    for l in range(1, upto + 1):
        for pair in buffer.pairs(l):
            seen.setdefault((pair.problem_id, pair.completion), pair)
    return sorted(seen.values(), key=lambda p: (p.iteration, p.problem_id, p.completion))


@dataclass
class TrainerJob:
    train_file: Path
    base_model_ref: str
    mode: str
    hparams: HyperParams
    output_dir: Path

    def __post_init__(self) -> None:
        self.train_file = Path(self.train_file)
        self.output_dir = Path(self.output_dir)
        self.hparams.validate(self.mode)
        if not self.base_model_ref:
            raise TrainerError("base_model_ref must be non-empty")


@dataclass
class TrainerResult:
    model_ref: str
    final_loss: float
    epochs_run: int


def _parse_manifest(path: Path) -> TrainerResult:
    if not path.exists():
        raise TrainerError(f"trainer wrote no result manifest at {path}")
    try:
        rec = json.loads(path.read_text(encoding="utf-8"))
        model_ref = rec["model_ref"]
        final_loss = float(rec["final_loss"])
        epochs_run = int(rec["epochs_run"])
    except (ValueError, KeyError, TypeError) as exc:
        raise TrainerError(f"malformed trainer manifest {path}: {exc}") from exc
    if not isinstance(model_ref, str) or not model_ref:
        raise TrainerError(f"trainer manifest {path} lacks a model_ref")
    if final_loss < 0:
        raise TrainerError(f"trainer manifest reports negative loss {final_loss}")
    return TrainerResult(model_ref=model_ref, final_loss=final_loss, epochs_run=epochs_run)


def launch_training(job: TrainerJob, command: str, gateway=None) -> TrainerResult:
    """Run the contracted trainer to completion and parse its manifest.

    The new model_ref is registered with the gateway when one is supplied.
    """
    if not command:
        raise TrainerError("no trainer command configured")
    if not job.train_file.exists() or job.train_file.stat().st_size == 0:
        raise TrainerError(f"training file missing or empty: {job.train_file}")

    job.output_dir.mkdir(parents=True, exist_ok=True)
    hparams_path = job.output_dir / "hparams.json"
    ioutil.write_json_atomic(hparams_path, job.hparams.to_dict())

    argv = shlex.split(command) + [
        "--train-file", str(job.train_file),
        "--base-model", job.base_model_ref,
        "--mode", job.mode,
        "--hparams", str(hparams_path),
        "--output-dir", str(job.output_dir),
    ]
    try:
        proc = subprocess.run(argv, capture_output=True, text=True)
    except OSError as exc:
        raise TrainerError(f"failed to spawn trainer {argv[0]!r}: {exc}") from exc
    if proc.returncode != 0:
        tail = "\n".join(proc.stderr.strip().splitlines()[-10:])
        raise TrainerError(
            f"trainer exited with status {proc.returncode}; stderr tail:\n{tail}"
        )
    result = _parse_manifest(job.output_dir / "result")
    if gateway is not None:
        gateway.register_model(result.model_ref)
    return result
