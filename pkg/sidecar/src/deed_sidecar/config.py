"""Sidecar configuration: the contract's hyperparameters plus local knobs.

The hparams JSON written by the pipeline carries only the shared
hyperparameter fields; the sidecar-specific extras (device, seed,
max_seq_len, target_modules, model_cache) may be added to that file by
hand and otherwise take defaults.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path


class SidecarError(Exception):
    pass


DEFAULT_LORA_TARGETS = ["q_proj", "k_proj", "v_proj", "o_proj", "c_attn", "c_proj"]


@dataclass
class SidecarConfig:
    learning_rate: float = 5e-6
    batch_size: int = 1
    grad_accum_steps: int = 32
    epochs: int = 10
    beta1: float = 0.9
    beta2: float = 0.9
    schedule: str = "linear"
    lora_rank: int | None = None
    lora_alpha: float | None = None
    device: str = "cpu"
    seed: int = 0
    max_seq_len: int = 1024
    target_modules: list[str] = field(default_factory=lambda: list(DEFAULT_LORA_TARGETS))
    model_cache: str | None = None

    @classmethod
    def load(cls, hparams_path: str | Path, mode: str) -> "SidecarConfig":
        path = Path(hparams_path)
        if not path.exists():
            raise SidecarError(f"hparams file not found: {path}")
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise SidecarError(f"hparams file {path} is not valid JSON: {exc}") from exc
        known = {f for f in cls.__dataclass_fields__}
        kwargs = {k: v for k, v in raw.items() if k in known and v is not None}
        config = cls(**kwargs)
        config.validate(mode)
        return config

    def validate(self, mode: str) -> None:
        if mode not in ("full", "lora"):
            raise SidecarError(f"mode must be full or lora, got {mode!r}")
        for name in ("learning_rate", "batch_size", "grad_accum_steps", "epochs"):
            if getattr(self, name) <= 0:
                raise SidecarError(f"{name} must be positive")
        if self.schedule != "linear":
            raise SidecarError(f"unsupported schedule {self.schedule!r}")
        if self.max_seq_len < 8:
            raise SidecarError("max_seq_len too small")
        if mode == "lora":
            if not self.lora_rank or not self.lora_alpha:
                raise SidecarError("lora mode requires lora_rank and lora_alpha")
            if self.lora_rank <= 0 or self.lora_alpha <= 0:
                raise SidecarError("lora_rank and lora_alpha must be positive")
