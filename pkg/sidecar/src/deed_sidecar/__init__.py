"""Reference implementation of the deed trainer contract.

Invoked as::

    deed-sidecar --train-file F --base-model M --mode {full|lora} \
                 --hparams H --output-dir O

Reads prompt/completion pairs from the exchange file, fine-tunes the base
causal language model with the loss masked to completion tokens, saves the
resulting model under O/model, and writes the O/result manifest.
"""

from .config import SidecarConfig
from .data import collate, encode_pair, load_pairs
from .lora import apply_lora, merge_lora

__version__ = "0.1.0"
