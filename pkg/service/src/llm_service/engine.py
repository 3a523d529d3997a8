"""Inference engine: generation with temperature / nucleus sampling (plus a
greedy extension flag for deterministic fixtures), response-only perplexity,
and mean-pooled text embeddings. Requests are serialized through one lock;
the model is small enough that queueing beats sharing."""

from __future__ import annotations

import math
import threading

import torch
import torch.nn.functional as F

from .config import ServiceConfig
from .model import (
    BOS,
    EOS,
    ModelConfig,
    TinyCausalLM,
    apply_adapters,
    decode_bytes,
    encode_bytes,
    load_adapter_state,
    quantize_base,
)
from .pretrain import pretrain


class Engine:
    def __init__(self, model: TinyCausalLM, name: str, seed: int = 0):
        self.model = model.eval()
        self.name = name
        self.lock = threading.Lock()
        self.sample_rng = torch.Generator().manual_seed(seed)

    def _context(self, text: str, reserve: int) -> list[int]:
        ids = [BOS] + encode_bytes(text)
        limit = self.model.cfg.block_size - reserve
        return ids[-limit:]

    @torch.no_grad()
    def generate(
        self,
        prompt: str,
        max_new_tokens: int = 64,
        temperature: float = 0.05,
        top_p: float = 0.95,
        greedy: bool = False,
    ) -> str:
        with self.lock:
            ids = self._context(prompt, reserve=max_new_tokens + 1)
            out = []
            for _ in range(max_new_tokens):
                logits = self.model(torch.tensor([ids]))[0, -1]
                if greedy:
                    nxt = int(logits.argmax())
                else:
                    probs = F.softmax(logits / max(temperature, 1e-6), dim=-1)
                    sorted_p, order = torch.sort(probs, descending=True)
                    keep = torch.cumsum(sorted_p, 0) - sorted_p < top_p
                    keep[0] = True
                    trimmed = sorted_p * keep
                    choice = torch.multinomial(
                        trimmed / trimmed.sum(), 1, generator=self.sample_rng
                    )
                    nxt = int(order[choice])
                if nxt == EOS:
                    break
                ids.append(nxt)
                out.append(nxt)
            return decode_bytes(out)

    @torch.no_grad()
    def perplexity(self, prompt: str, response: str) -> float:
        """exp(mean NLL per response byte); the prompt is context only."""
        resp_ids = encode_bytes(response)
        if not resp_ids:
            raise ValueError("response must be non-empty")
        with self.lock:
            ctx = self._context(prompt, reserve=len(resp_ids) + 1)
            ids = torch.tensor([ctx + resp_ids])
            logits = self.model(ids)[0]
            logp = F.log_softmax(logits, dim=-1)
            start = len(ctx)
            nll = 0.0
            for i, tok in enumerate(resp_ids):
                nll -= float(logp[start + i - 1, tok])
            return math.exp(nll / len(resp_ids))

    @torch.no_grad()
    def embed(self, texts: list[str]) -> list[list[float]]:
        """Mean-pooled final-layer states, L2-normalized."""
        out = []
        with self.lock:
            for text in texts:
                ids = torch.tensor([self._context(text, reserve=1)])
                h = self.model.hidden_states(ids)[0].mean(dim=0)
                h = h / h.norm().clamp(min=1e-12)
                out.append([float(x) for x in h])
        return out


def build_engine(config: ServiceConfig) -> Engine:
    """Construct the configured backbone, bootstrapping (or loading) weights
    and applying adapters; fails with a diagnostic when the model cannot be
    made available."""
    if config.model_id == "builtin:tiny":
        model = TinyCausalLM(
            ModelConfig(block_size=min(1024, config.max_context_tokens)), seed=config.seed
        )
        loaded = False
        if config.weights_path:
            try:
                model.load_state_dict(torch.load(config.weights_path, weights_only=True))
                loaded = True
            except FileNotFoundError:
                pass
        if not loaded:
            pretrain(model, steps=config.pretrain_steps, seed=config.seed)
            if config.weights_path:
                torch.save(model.state_dict(), config.weights_path)
        if config.quantized_storage:
            quantize_base(model)
        apply_adapters(
            model, config.lora_rank, config.lora_alpha, config.lora_dropout,
            seed=config.seed, targets=config.adapter_targets,
        )
        if config.adapters_path:
            state = torch.load(config.adapters_path, weights_only=True)
            load_adapter_state(model, state)
        name = f"builtin-tiny-{model.num_parameters() // 1000}k"
        return Engine(model, name=name, seed=config.seed)

    raise RuntimeError(
        f"cannot load model {config.model_id!r}: this environment has no model-hub "
        "access, so only the self-bootstrapping 'builtin:tiny' backbone is available"
    )
