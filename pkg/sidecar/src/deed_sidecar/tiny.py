"""Build a tiny byte-level causal LM entirely offline.

Useful as a test fixture and for smoke-running the trainer contract
without downloading anything: a 2-layer GPT-2 over the 256 byte alphabet
plus an end-of-text token.
"""

from __future__ import annotations

from pathlib import Path

EOT = "<|endoftext|>"


def build_tiny_model(
    target_dir: str | Path,
    n_layer: int = 2,
    n_head: int = 2,
    n_embd: int = 32,
    n_positions: int = 512,
    seed: int = 0,
) -> Path:
    import torch
    from tokenizers import Tokenizer, decoders
    from tokenizers.models import BPE
    from tokenizers.pre_tokenizers import ByteLevel
    from transformers import GPT2Config, GPT2LMHeadModel, PreTrainedTokenizerFast

    target_dir = Path(target_dir)
    target_dir.mkdir(parents=True, exist_ok=True)

    alphabet = sorted(ByteLevel.alphabet())
    vocab = {ch: i for i, ch in enumerate(alphabet)}
    vocab[EOT] = len(vocab)
    tokenizer = Tokenizer(BPE(vocab=vocab, merges=[]))
    tokenizer.pre_tokenizer = ByteLevel(add_prefix_space=False, use_regex=True)
    tokenizer.decoder = decoders.ByteLevel()
    fast = PreTrainedTokenizerFast(
        tokenizer_object=tokenizer, eos_token=EOT, pad_token=EOT
    )
    fast.save_pretrained(target_dir)

    torch.manual_seed(seed)
    config = GPT2Config(
        vocab_size=len(vocab),
        n_positions=n_positions,
        n_embd=n_embd,
        n_layer=n_layer,
        n_head=n_head,
        bos_token_id=vocab[EOT],
        eos_token_id=vocab[EOT],
    )
    GPT2LMHeadModel(config).save_pretrained(target_dir)
    return target_dir


def main() -> int:
    import argparse

    parser = argparse.ArgumentParser(description="write a tiny offline causal LM")
    parser.add_argument("target_dir")
    args = parser.parse_args()
    path = build_tiny_model(args.target_dir)
    print(f"tiny model written to {path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
