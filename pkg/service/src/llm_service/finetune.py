"""Parameter-efficient fine-tuning on exported prompt JSONL.

Each prompt row carries instruction/input/response (+prompt_id); the
curriculum schedule assigns per-prompt epoch multiplicity, so a prompt
scheduled for 3 epochs appears three times per pass through the sample
stream. Only the adapter matrices train (the base stays frozen, int8-stored
when quantization is on, dequantized to float32 for forward/backward); the
loss covers response bytes plus the end marker only.

    python3 -m llm_service.finetune --prompts prompts.jsonl \
        --schedule schedule.json --out adapters.pt
"""

from __future__ import annotations

import argparse
import json

import numpy as np
import torch
import torch.nn.functional as F

from .config import ServiceConfig
from .engine import Engine, build_engine
from .model import BOS, EOS, adapter_state, encode_bytes

PROMPT_TEMPLATE = "{instruction}\n\n### Input:\n{input}\n\n### Response:\n"


def load_prompt_rows(path) -> list[dict]:
    rows = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    for i, row in enumerate(rows):
        if not row.get("response"):
            raise ValueError(f"prompt row {i} has no response segment")
    return rows


def load_schedule(path) -> dict[str, int]:
    with open(path, "r", encoding="utf-8") as f:
        raw = json.load(f)
    return {pid: int(epochs) for pid, epochs in raw["entries"]}


def render_prompt(row: dict) -> str:
    return PROMPT_TEMPLATE.format(instruction=row["instruction"], input=row["input"])


def _example(row: dict, block_size: int):
    """(token ids, number of leading context tokens) for one prompt."""
    resp = encode_bytes(row["response"]) + [EOS]
    ctx = [BOS] + encode_bytes(render_prompt(row))
    ctx = ctx[-(block_size - len(resp)):]
    return ctx + resp, len(ctx)


def build_stream(rows: list[dict], schedule: dict[str, int], block_size: int):
    """Expand prompts by their scheduled epoch multiplicity: a prompt with 3
    epochs appears three times per pass through the stream."""
    ids = {row.get("prompt_id") for row in rows}
    missing = {pid for pid in schedule if pid not in ids}
    if missing:
        raise ValueError(f"schedule references unknown prompt_ids: {sorted(missing)[:4]}")
    stream = []
    for row in rows:
        epochs = schedule.get(row.get("prompt_id"), 1)
        stream.extend([(row.get("prompt_id"), _example(row, block_size))] * epochs)
    return stream


def finetune(
    engine: Engine,
    rows: list[dict],
    schedule: dict[str, int],
    lr: float = 2e-3,
    batch_size: int = 8,
    passes: int = 8,
    seed: int = 0,
    log_every: int = 0,
) -> dict:
    """Train the adapters; returns their state dict.

    The schedule sets per-prompt multiplicity within one pass (a 3-epoch
    prompt appears three times as often as a 1-epoch one); ``passes``
    repeats the whole stream, which a small from-scratch backbone needs
    where a large pretrained one would converge in a single pass.
    """
    model = engine.model
    stream = [ex for _, ex in build_stream(rows, schedule, model.cfg.block_size)]

    trainable = [p for p in model.parameters() if p.requires_grad]
    if not trainable:
        raise ValueError("no trainable adapter parameters on the model")
    opt = torch.optim.AdamW(trainable, lr=lr)
    rng = np.random.Generator(np.random.PCG64(seed))

    model.train()
    step = 0
    for _ in range(passes):
        order = rng.permutation(len(stream))
        for start in range(0, len(stream), batch_size):
            chunk = [stream[i] for i in order[start : start + batch_size]]
            width = max(len(ids_) for ids_, _ in chunk)
            x = torch.full((len(chunk), width), 0, dtype=torch.long)
            mask = torch.zeros((len(chunk), width), dtype=torch.bool)
            for b, (ids_, ctx_len) in enumerate(chunk):
                x[b, : len(ids_)] = torch.tensor(ids_)
                mask[b, ctx_len : len(ids_)] = True  # response positions only
            logits = model(x)
            # next-token prediction: position t predicts t+1
            loss = F.cross_entropy(logits[:, :-1][mask[:, 1:]], x[:, 1:][mask[:, 1:]])
            opt.zero_grad()
            loss.backward()
            opt.step()
            step += 1
            if log_every and step % log_every == 0:
                print(f"step {step}: loss {float(loss.detach()):.3f}")
    model.eval()
    return adapter_state(model)


def mean_perplexity(engine: Engine, rows: list[dict]) -> float:
    values = [engine.perplexity(render_prompt(r), r["response"]) for r in rows]
    return float(np.mean(values))


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--prompts", required=True)
    ap.add_argument("--schedule", required=True)
    ap.add_argument("--out", required=True, help="adapter weights output path")
    ap.add_argument("--config", help="ServiceConfig JSON file")
    args = ap.parse_args(argv)

    config = ServiceConfig.load(args.config) if args.config else ServiceConfig()
    engine = build_engine(config)
    rows = load_prompt_rows(args.prompts)
    schedule = load_schedule(args.schedule)

    before = mean_perplexity(engine, rows[:32])
    state = finetune(
        engine, rows, schedule,
        lr=config.finetune_lr, batch_size=config.finetune_batch,
        passes=config.finetune_passes, seed=config.seed,
        log_every=50,
    )
    after = mean_perplexity(engine, rows[:32])
    torch.save(state, args.out)
    print(
        f"adapters saved to {args.out} ({sum(v.numel() for v in state.values())} params); "
        f"held-in perplexity {before:.2f} -> {after:.2f}"
    )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
