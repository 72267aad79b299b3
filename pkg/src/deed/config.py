"""Run configuration. Defaults mirror the reference setup: 5 error
samples and 30 revision samples at temperature 0.8, 1024-token budget,
2 adaptation iterations, a 40%-capped-at-200 train split with a 30%
revise-seed share, and n=50 evaluation with k in {1, 5, 10}.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .errors import ConfigError
from .trainer import MODES, HyperParams


@dataclass
class SplitSettings:
    seed: int = 1234
    revise_fraction: float = 0.30
    revise_seed: int = 1234


@dataclass
class SamplingSettings:
    k_samples: int = 5
    n_revision_samples: int = 30
    temperature: float = 0.8
    max_tokens: int = 1024
    stop: list[str] = field(default_factory=lambda: ["\nassert ", "\nif __name__"])
    prompt_template: str = "{requirement}"


@dataclass
class BackendSettings:
    kind: str = "mock"  # mock | http
    script: str | None = None
    base_url: str | None = None
    api_key_env: str = "DEED_API_KEY"
    request_timeout: float = 60.0
    max_retries: int = 3
    backoff: float = 0.5


@dataclass
class ReviseSettings:
    mode: str = "ft"  # ft | fsp
    model_ref: str | None = None  # fixed ref; skips seed training when set
    seed_file: str | None = None
    fsp_k: int = 4


@dataclass
class TrainerSettings:
    command: str = "python3 -m deed.mock_trainer"
    mode: str = "full"  # full | lora
    overrides: dict = field(default_factory=dict)

    def build_hparams(self) -> HyperParams:
        base = HyperParams.lora_defaults() if self.mode == "lora" else HyperParams.full_defaults()
        merged = base.to_dict()
        unknown = set(self.overrides) - set(merged)
        if unknown:
            raise ConfigError(f"unknown hyperparameter overrides: {sorted(unknown)}")
        merged.update(self.overrides)
        hparams = HyperParams.from_dict(merged)
        hparams.validate(self.mode)
        return hparams


@dataclass
class SandboxSettings:
    command_template: str = ""
    timeout: float = 10.0
    memory_mb: int | None = 512
    block_network: bool = True
    audit_log: str | None = None  # per-execution outcome log; off by default


@dataclass
class EvalSettings:
    n: int = 50
    ks: list[int] = field(default_factory=lambda: [1, 5, 10])
    temperature: float = 0.8
    repeats: int = 1


@dataclass
class RunConfig:
    corpus: str = "problems.jsonl"
    base_model_ref: str = "mock-v1"
    max_iterations: int = 2
    workers: int = 4
    split: SplitSettings = field(default_factory=SplitSettings)
    sampling: SamplingSettings = field(default_factory=SamplingSettings)
    backend: BackendSettings = field(default_factory=BackendSettings)
    revise: ReviseSettings = field(default_factory=ReviseSettings)
    trainer: TrainerSettings = field(default_factory=TrainerSettings)
    sandbox: SandboxSettings = field(default_factory=SandboxSettings)
    eval: EvalSettings = field(default_factory=EvalSettings)

    def validate(self) -> None:
        if self.max_iterations < 1:
            raise ConfigError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        if not self.base_model_ref:
            raise ConfigError("base_model_ref must be non-empty")
        if self.backend.kind not in ("mock", "http"):
            raise ConfigError(f"backend.kind must be mock or http, got {self.backend.kind!r}")
        if self.backend.kind == "mock" and not self.backend.script:
            raise ConfigError("mock backend requires backend.script")
        if self.backend.kind == "http" and not self.backend.base_url:
            raise ConfigError("http backend requires backend.base_url")
        if self.revise.mode not in ("ft", "fsp"):
            raise ConfigError(f"revise.mode must be ft or fsp, got {self.revise.mode!r}")
        if self.trainer.mode not in MODES:
            raise ConfigError(f"trainer.mode must be one of {MODES}")
        if not 0.0 < self.split.revise_fraction < 1.0:
            raise ConfigError("split.revise_fraction must lie in (0, 1)")
        if self.sampling.k_samples < 1 or self.sampling.n_revision_samples < 1:
            raise ConfigError("sampling counts must be >= 1")
        self.trainer.build_hparams()

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, rec: dict) -> "RunConfig":
        sections = {
            "split": SplitSettings,
            "sampling": SamplingSettings,
            "backend": BackendSettings,
            "revise": ReviseSettings,
            "trainer": TrainerSettings,
            "sandbox": SandboxSettings,
            "eval": EvalSettings,
        }
        kwargs: dict = {}
        try:
            for key, value in rec.items():
                if key in sections:
                    kwargs[key] = sections[key](**value)
                else:
                    kwargs[key] = value
            cfg = cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(f"invalid config: {exc}") from exc
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            rec = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(rec)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.dumps().encode("utf-8")).hexdigest()


def scaffold_config() -> RunConfig:
    """Starting-point config written by ``deed init``."""
    cfg = RunConfig()
    cfg.backend.script = "mock_script.jsonl"
    return cfg
