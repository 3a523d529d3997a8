from __future__ import annotations

import json
from dataclasses import dataclass


@dataclass
class ServiceConfig:
    """Serving and fine-tuning configuration.

    ``model_id`` selects the backbone: the default ``builtin:tiny`` is a
    small byte-level causal LM pretrained in-process on a deterministic
    synthetic corpus (no downloads); any other id is treated as a
    transformers model name and loaded from the local cache if present.
    """

    model_id: str = "builtin:tiny"
    lora_rank: int = 16
    lora_alpha: float = 16.0
    lora_dropout: float = 0.05
    quantized_storage: bool = True
    host: str = "127.0.0.1"
    port: int = 8731
    max_context_tokens: int = 1024
    seed: int = 0
    pretrain_steps: int = 1200
    weights_path: str | None = None  # load/save bootstrap weights here
    adapters_path: str | None = None  # apply fine-tuned adapters at startup
    adapter_targets: str = "all"  # "all" | "attention"
    finetune_lr: float = 2e-3
    finetune_batch: int = 4
    finetune_passes: int = 16

    def __post_init__(self):
        if self.lora_rank <= 0 or self.lora_alpha <= 0:
            raise ValueError("rank and scaling must be positive")
        if not (0.0 <= self.lora_dropout < 1.0):
            raise ValueError("dropout must be in [0, 1)")

    @staticmethod
    def load(path) -> "ServiceConfig":
        with open(path, "r", encoding="utf-8") as f:
            return ServiceConfig(**json.load(f))
