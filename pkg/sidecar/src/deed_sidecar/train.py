"""Trainer-contract entry point: fine-tune a causal LM on exchange pairs.

Writes ``<output-dir>/result`` as {model_ref, final_loss, epochs_run},
``<output-dir>/epochs`` with the per-epoch mean losses, and the trained
model (tokenizer included) under ``<output-dir>/model``. In lora mode the
learned delta is merged into the saved weights and the adapter itself is
kept alongside as ``adapter_model.pt`` + ``adapter_config.json``.
"""

from __future__ import annotations

import argparse
import json
import math
import random
import sys
from pathlib import Path

from .config import SidecarConfig, SidecarError
from .data import collate, encode_pair, load_pairs
from .lora import adapter_state, apply_lora, merge_lora


def _linear_schedule(optimizer, total_steps: int):
    import torch

    def factor(step: int) -> float:
        if total_steps <= 1:
            return 1.0
        return max(0.0, 1.0 - step / total_steps)

    return torch.optim.lr_scheduler.LambdaLR(optimizer, factor)


def train(
    train_file: str | Path,
    base_model_ref: str,
    mode: str,
    hparams_path: str | Path,
    output_dir: str | Path,
) -> dict:
    import torch
    from transformers import AutoModelForCausalLM, AutoTokenizer

    config = SidecarConfig.load(hparams_path, mode)
    torch.manual_seed(config.seed)
    device = torch.device(config.device)

    pairs = load_pairs(train_file)
    try:
        tokenizer = AutoTokenizer.from_pretrained(base_model_ref, cache_dir=config.model_cache)
        model = AutoModelForCausalLM.from_pretrained(base_model_ref, cache_dir=config.model_cache)
    except (OSError, ValueError) as exc:
        raise SidecarError(f"cannot load base model {base_model_ref!r}: {exc}") from exc
    model.to(device)
    model.train()

    examples = [
        encode_pair(tokenizer, rec["prompt"], rec["completion"], config.max_seq_len)
        for rec in pairs
    ]
    pad_id = tokenizer.pad_token_id
    if pad_id is None:
        pad_id = tokenizer.eos_token_id if tokenizer.eos_token_id is not None else 0

    adapted: list[str] = []
    if mode == "lora":
        adapted = apply_lora(model, config.lora_rank, config.lora_alpha, config.target_modules)
    trainable = [p for p in model.parameters() if p.requires_grad]
    optimizer = torch.optim.AdamW(
        trainable, lr=config.learning_rate, betas=(config.beta1, config.beta2)
    )
    batches_per_epoch = math.ceil(len(examples) / config.batch_size)
    steps_per_epoch = math.ceil(batches_per_epoch / config.grad_accum_steps)
    scheduler = _linear_schedule(optimizer, max(1, steps_per_epoch * config.epochs))

    rng = random.Random(config.seed)
    epoch_losses: list[float] = []
    for _epoch in range(config.epochs):
        order = list(range(len(examples)))
        rng.shuffle(order)
        optimizer.zero_grad()
        losses: list[float] = []
        for batch_idx in range(batches_per_epoch):
            rows = order[batch_idx * config.batch_size : (batch_idx + 1) * config.batch_size]
            input_ids, attention_mask, labels = collate([examples[r] for r in rows], pad_id)
            output = model(
                input_ids=input_ids.to(device),
                attention_mask=attention_mask.to(device),
                labels=labels.to(device),
            )
            loss = output.loss
            losses.append(float(loss.detach()))
            (loss / config.grad_accum_steps).backward()
            last_batch = batch_idx == batches_per_epoch - 1
            if (batch_idx + 1) % config.grad_accum_steps == 0 or last_batch:
                optimizer.step()
                scheduler.step()
                optimizer.zero_grad()
        epoch_losses.append(sum(losses) / len(losses))

    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    model_dir = output_dir / "model"
    if mode == "lora":
        torch.save(adapter_state(model), output_dir / "adapter_model.pt")
        model_dir.mkdir(parents=True, exist_ok=True)
        (model_dir / "adapter_config.json").write_text(
            json.dumps(
                {
                    "mode": "lora",
                    "lora_rank": config.lora_rank,
                    "lora_alpha": config.lora_alpha,
                    "scaling": "alpha / rank",
                    "target_modules": adapted,
                },
                indent=2,
            )
            + "\n",
            encoding="utf-8",
        )
        merge_lora(model)
    model.save_pretrained(model_dir)
    tokenizer.save_pretrained(model_dir)

    (output_dir / "epochs").write_text(json.dumps(epoch_losses) + "\n", encoding="utf-8")
    manifest = {
        "model_ref": str(model_dir),
        "final_loss": epoch_losses[-1],
        "epochs_run": config.epochs,
    }
    (output_dir / "result").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return manifest


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="deed-sidecar")
    parser.add_argument("--train-file", required=True)
    parser.add_argument("--base-model", required=True)
    parser.add_argument("--mode", required=True, choices=("full", "lora"))
    parser.add_argument("--hparams", required=True)
    parser.add_argument("--output-dir", required=True)
    args = parser.parse_args(argv)
    try:
        manifest = train(
            args.train_file, args.base_model, args.mode, args.hparams, args.output_dir
        )
    except SidecarError as exc:
        print(f"deed-sidecar: error: {exc}", file=sys.stderr)
        return 2
    except MemoryError:
        print("deed-sidecar: error: out of memory", file=sys.stderr)
        return 3
    print(f"trained {args.base_model} -> {manifest['model_ref']} "
          f"(final loss {manifest['final_loss']:.6f})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
