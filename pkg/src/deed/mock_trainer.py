"""Deterministic stand-in for the trainer contract.

Performs no learning: it validates its inputs, fabricates a loss that
shrinks as the training set grows, derives the next model reference from
the base one (``mock-v1`` -> ``mock-v2``), and writes the result manifest.
Useful for tests and fully reproducible dry runs.
"""

from __future__ import annotations

import argparse
import json
import re
import sys
from pathlib import Path


def next_model_ref(base: str) -> str:
    match = re.fullmatch(r"(.*-v)(\d+)", base)
    if match:
        return f"{match.group(1)}{int(match.group(2)) + 1}"
    return f"{base}-v2"


def fabricated_loss(n_pairs: int) -> float:
    # Shrinks as the training set grows, mimicking a run that keeps improving.
    return round(1.0 / (1.0 + n_pairs), 6)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="deed-mock-trainer")
    parser.add_argument("--train-file", required=True)
    parser.add_argument("--base-model", required=True)
    parser.add_argument("--mode", required=True, choices=("full", "lora"))
    parser.add_argument("--hparams", required=True)
    parser.add_argument("--output-dir", required=True)
    args = parser.parse_args(argv)

    train_file = Path(args.train_file)
    if not train_file.exists():
        print(f"training file not found: {train_file}", file=sys.stderr)
        return 2
    n_pairs = 0
    for lineno, line in enumerate(train_file.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError:
            print(f"{train_file}:{lineno}: invalid JSON", file=sys.stderr)
            return 2
        if not rec.get("prompt") or not rec.get("completion"):
            print(f"{train_file}:{lineno}: empty prompt or completion", file=sys.stderr)
            return 2
        n_pairs += 1
    if n_pairs == 0:
        print(f"training file is empty: {train_file}", file=sys.stderr)
        return 2

    try:
        hparams = json.loads(Path(args.hparams).read_text(encoding="utf-8"))
        epochs = int(hparams["epochs"])
    except (OSError, ValueError, KeyError) as exc:
        print(f"invalid hparams file {args.hparams}: {exc}", file=sys.stderr)
        return 2

    output_dir = Path(args.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    result = {
        "model_ref": next_model_ref(args.base_model),
        "final_loss": fabricated_loss(n_pairs),
        "epochs_run": epochs,
    }
    (output_dir / "result").write_text(json.dumps(result, indent=2) + "\n", encoding="utf-8")
    return 0


if __name__ == "__main__":
    sys.exit(main())
