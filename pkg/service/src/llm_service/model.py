"""Byte-level causal transformer with hand-rolled low-rank adapters and
optional int8 weight storage.

The adapter recipe: every attention query/value projection gets a trainable
delta (alpha / rank) * B @ A with A ~ N(0, 1/rank), B = 0, and dropout on
the adapter input, so fine-tuning starts exactly at the base model. Base
weights stay frozen; with quantized storage enabled they are kept as int8
with per-output-channel scales and dequantized to float32 inside forward,
so storage and compute dtypes stay distinct.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

PAD, BOS, EOS = 256, 257, 258
VOCAB = 259


def encode_bytes(text: str) -> list[int]:
    return list(text.encode("utf-8", errors="replace"))


def decode_bytes(ids) -> str:
    data = bytes(i for i in ids if 0 <= i < 256)
    return data.decode("utf-8", errors="replace")


@dataclass
class ModelConfig:
    d_model: int = 128
    n_layer: int = 3
    n_head: int = 4
    d_ff: int = 512
    block_size: int = 512
    dropout: float = 0.0


class QuantLinear(nn.Module):
    """Frozen linear layer stored as int8 + per-row float scales."""

    def __init__(self, linear: nn.Linear):
        super().__init__()
        w = linear.weight.detach()
        scale = w.abs().amax(dim=1, keepdim=True).clamp(min=1e-8) / 127.0
        self.register_buffer("weight_q", torch.round(w / scale).to(torch.int8))
        self.register_buffer("scale", scale)
        self.register_buffer(
            "bias", linear.bias.detach().clone() if linear.bias is not None else None
        )
        self.out_features = linear.out_features
        self.in_features = linear.in_features

    def forward(self, x):
        w = self.weight_q.to(torch.float32) * self.scale  # dequantize for compute
        return F.linear(x, w, self.bias)


class LoRAAdapter(nn.Module):
    def __init__(self, base: nn.Module, in_features: int, out_features: int,
                 rank: int, alpha: float, dropout: float):
        super().__init__()
        self.base = base
        self.rank = rank
        self.scaling = alpha / rank
        self.dropout = nn.Dropout(dropout)
        self.lora_a = nn.Parameter(torch.randn(rank, in_features) / rank)
        self.lora_b = nn.Parameter(torch.zeros(out_features, rank))

    def forward(self, x):
        delta = self.dropout(x) @ self.lora_a.T @ self.lora_b.T
        return self.base(x) + self.scaling * delta


class Block(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.ln1 = nn.LayerNorm(cfg.d_model)
        self.ln2 = nn.LayerNorm(cfg.d_model)
        self.n_head = cfg.n_head
        self.q_proj = nn.Linear(cfg.d_model, cfg.d_model)
        self.k_proj = nn.Linear(cfg.d_model, cfg.d_model)
        self.v_proj = nn.Linear(cfg.d_model, cfg.d_model)
        self.o_proj = nn.Linear(cfg.d_model, cfg.d_model)
        self.mlp = nn.Sequential(
            nn.Linear(cfg.d_model, cfg.d_ff), nn.GELU(), nn.Linear(cfg.d_ff, cfg.d_model)
        )

    def forward(self, x):
        h = self.ln1(x)
        B, T, C = h.shape
        hd = C // self.n_head

        def split(t):
            return t.view(B, T, self.n_head, hd).transpose(1, 2)

        q, k, v = split(self.q_proj(h)), split(self.k_proj(h)), split(self.v_proj(h))
        att = F.scaled_dot_product_attention(q, k, v, is_causal=True)
        x = x + self.o_proj(att.transpose(1, 2).contiguous().view(B, T, C))
        return x + self.mlp(self.ln2(x))


def _sinusoidal_positions(block_size: int, d_model: int) -> torch.Tensor:
    # fixed encoding so short-block pretraining transfers to longer prompts
    pos = torch.arange(block_size, dtype=torch.float32)[:, None]
    div = torch.exp(torch.arange(0, d_model, 2, dtype=torch.float32)
                    * (-math.log(10000.0) / d_model))
    enc = torch.zeros(block_size, d_model)
    enc[:, 0::2] = torch.sin(pos * div)
    enc[:, 1::2] = torch.cos(pos * div)
    return enc


class TinyCausalLM(nn.Module):
    """Small decoder-only byte LM; the head is tied to the token table."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        super().__init__()
        torch.manual_seed(seed)
        self.cfg = cfg
        self.tok_emb = nn.Embedding(VOCAB, cfg.d_model)
        self.register_buffer("pos_enc", _sinusoidal_positions(cfg.block_size, cfg.d_model))
        self.blocks = nn.ModuleList(Block(cfg) for _ in range(cfg.n_layer))
        self.ln_f = nn.LayerNorm(cfg.d_model)

    def hidden_states(self, idx):
        B, T = idx.shape
        if T > self.cfg.block_size:
            raise ValueError(f"sequence length {T} exceeds block size {self.cfg.block_size}")
        x = self.tok_emb(idx) + self.pos_enc[:T][None]
        for block in self.blocks:
            x = block(x)
        return self.ln_f(x)

    def forward(self, idx):
        return self.hidden_states(idx) @ self.tok_emb.weight.T  # tied head

    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())


def quantize_base(model: TinyCausalLM) -> None:
    """Swap frozen attention/MLP linears for int8-storage equivalents."""
    for block in model.blocks:
        for name in ("q_proj", "k_proj", "v_proj", "o_proj"):
            setattr(block, name, QuantLinear(getattr(block, name)))
        block.mlp = nn.Sequential(
            QuantLinear(block.mlp[0]), block.mlp[1], QuantLinear(block.mlp[2])
        )


def apply_adapters(model: TinyCausalLM, rank: int, alpha: float, dropout: float,
                   seed: int = 0, targets: str = "all") -> list[nn.Parameter]:
    """Attach adapters and freeze everything else; returns the trainables.

    ``targets="attention"`` adapts only the q/v projections (the common
    default for large pretrained models); ``"all"`` additionally adapts
    k/o and both MLP maps, which a from-scratch byte model needs before
    fine-tuning can steer its output distribution.
    """
    torch.manual_seed(seed)
    for p in model.parameters():
        p.requires_grad_(False)
    trainable = []
    d, d_ff = model.cfg.d_model, model.cfg.d_ff

    def wrap(parent, name, in_f, out_f):
        adapter = LoRAAdapter(getattr(parent, name), in_f, out_f, rank, alpha, dropout)
        setattr(parent, name, adapter)
        trainable.extend([adapter.lora_a, adapter.lora_b])

    attn_names = ("q_proj", "v_proj") if targets == "attention" else (
        "q_proj", "k_proj", "v_proj", "o_proj")
    for block in model.blocks:
        for name in attn_names:
            wrap(block, name, d, d)
        if targets == "all":
            wrap(block.mlp, "0", d, d_ff)
            wrap(block.mlp, "2", d_ff, d)
    return trainable


def adapter_state(model: TinyCausalLM) -> dict:
    return {
        k: v.detach().clone()
        for k, v in model.state_dict().items()
        if "lora_a" in k or "lora_b" in k
    }


def load_adapter_state(model: TinyCausalLM, state: dict) -> None:
    missing = model.load_state_dict(state, strict=False)
    unexpected = [k for k in missing.unexpected_keys]
    if unexpected:
        raise ValueError(f"adapter state has unknown keys: {unexpected[:4]}")
