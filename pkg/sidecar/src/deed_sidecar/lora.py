"""Hand-rolled low-rank adaptation for Linear and GPT-style Conv1D layers.

The effective weight becomes W + (alpha / rank) * (up @ down); ``down``
projects the input to the rank-r space and starts Gaussian, ``up`` starts
at zero so training begins exactly at the base model. ``merge_lora`` folds
the learned delta back into W so the saved model needs no adapter code.
"""

from __future__ import annotations

import torch
from torch import nn

try:  # GPT-2 style fused projections store weight as [in, out]
    from transformers.pytorch_utils import Conv1D
except ImportError:  # pragma: no cover - very old transformers
    Conv1D = ()


class LoRAWrapper(nn.Module):
    def __init__(self, base: nn.Module, rank: int, alpha: float):
        super().__init__()
        if isinstance(base, nn.Linear):
            in_features, out_features = base.in_features, base.out_features
        elif Conv1D and isinstance(base, Conv1D):
            in_features, out_features = base.weight.shape[0], base.weight.shape[1]
        else:
            raise TypeError(f"cannot adapt module of type {type(base).__name__}")
        self.base = base
        for param in self.base.parameters():
            param.requires_grad_(False)
        self.rank = rank
        self.alpha = float(alpha)
        self.scaling = self.alpha / rank
        dtype = base.weight.dtype
        self.lora_down = nn.Parameter(torch.randn(rank, in_features, dtype=dtype) * 0.02)
        self.lora_up = nn.Parameter(torch.zeros(out_features, rank, dtype=dtype))

    def delta_weight(self) -> torch.Tensor:
        """[out, in] low-rank update, already scaled."""
        return self.scaling * (self.lora_up @ self.lora_down)

    def forward(self, x):
        hidden = torch.nn.functional.linear(x, self.lora_down)
        delta = torch.nn.functional.linear(hidden, self.lora_up) * self.scaling
        return self.base(x) + delta

    def merge(self) -> nn.Module:
        """Fold the delta into the base weight and return the base module."""
        with torch.no_grad():
            delta = self.delta_weight()
            if isinstance(self.base, nn.Linear):
                self.base.weight += delta
            else:  # Conv1D stores [in, out]
                self.base.weight += delta.T
        for param in self.base.parameters():
            param.requires_grad_(True)
        return self.base


def _set_submodule(model: nn.Module, dotted: str, replacement: nn.Module) -> None:
    parent = model
    parts = dotted.split(".")
    for part in parts[:-1]:
        parent = getattr(parent, part)
    setattr(parent, parts[-1], replacement)


def apply_lora(
    model: nn.Module, rank: int, alpha: float, target_modules: list[str]
) -> list[str]:
    """Freeze the model and wrap every matching projection; returns the
    dotted names that were adapted."""
    for param in model.parameters():
        param.requires_grad_(False)
    targets = set(target_modules)
    adapted: list[str] = []
    for name, module in list(model.named_modules()):
        leaf = name.rsplit(".", 1)[-1]
        if leaf in targets and (isinstance(module, nn.Linear) or (Conv1D and isinstance(module, Conv1D))):
            _set_submodule(model, name, LoRAWrapper(module, rank, alpha))
            adapted.append(name)
    if not adapted:
        raise ValueError(f"no modules matched LoRA targets {sorted(targets)}")
    return adapted


def adapter_state(model: nn.Module) -> dict[str, torch.Tensor]:
    state = {}
    for name, module in model.named_modules():
        if isinstance(module, LoRAWrapper):
            state[f"{name}.lora_down"] = module.lora_down.detach().clone()
            state[f"{name}.lora_up"] = module.lora_up.detach().clone()
    return state


def merge_lora(model: nn.Module) -> nn.Module:
    """Replace every wrapper with its merged base module, in place."""
    for name, module in list(model.named_modules()):
        if isinstance(module, LoRAWrapper):
            _set_submodule(model, name, module.merge())
    return model
