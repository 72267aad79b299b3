"""Exchange-format loading and completion-masked encoding.

A training example concatenates prompt and completion token ids; labels
copy the input but hold -100 over the prompt span, so cross-entropy is
computed on completion tokens only. When an example exceeds the length
budget the prompt is truncated from the left, never the completion.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import torch

from .config import SidecarError

IGNORE_INDEX = -100


def load_pairs(path: str | Path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise SidecarError(f"training file not found: {path}")
    pairs = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SidecarError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
        if not isinstance(rec, dict) or not rec.get("prompt") or not rec.get("completion"):
            raise SidecarError(f"{path}:{lineno}: record needs non-empty prompt and completion")
        pairs.append(rec)
    if not pairs:
        raise SidecarError(f"training file is empty: {path}")
    return pairs


@dataclass
class EncodedExample:
    input_ids: list[int]
    labels: list[int]


def encode_pair(tokenizer, prompt: str, completion: str, max_seq_len: int) -> EncodedExample:
    prompt_ids = tokenizer(prompt, add_special_tokens=False)["input_ids"]
    completion_ids = tokenizer(completion, add_special_tokens=False)["input_ids"]
    if tokenizer.eos_token_id is not None:
        completion_ids = completion_ids + [tokenizer.eos_token_id]
    if len(completion_ids) >= max_seq_len:
        completion_ids = completion_ids[: max_seq_len - 1]
        prompt_ids = prompt_ids[:1]
    room = max_seq_len - len(completion_ids)
    if len(prompt_ids) > room:
        prompt_ids = prompt_ids[-room:]
    input_ids = prompt_ids + completion_ids
    labels = [IGNORE_INDEX] * len(prompt_ids) + list(completion_ids)
    return EncodedExample(input_ids=input_ids, labels=labels)


def collate(batch: list[EncodedExample], pad_id: int):
    width = max(len(ex.input_ids) for ex in batch)
    input_ids = torch.full((len(batch), width), pad_id, dtype=torch.long)
    attention_mask = torch.zeros((len(batch), width), dtype=torch.long)
    labels = torch.full((len(batch), width), IGNORE_INDEX, dtype=torch.long)
    for row, ex in enumerate(batch):
        n = len(ex.input_ids)
        input_ids[row, :n] = torch.tensor(ex.input_ids, dtype=torch.long)
        attention_mask[row, :n] = 1
        labels[row, :n] = torch.tensor(ex.labels, dtype=torch.long)
    return input_ids, attention_mask, labels
