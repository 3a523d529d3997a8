"""Bootstrap pretraining for the built-in byte model on a deterministic
synthetic text corpus: plain English-like sentences plus generic structured
blocks ("### Response:" followed by a labelled ``KEY: value | KEY2: words``
line with random labels), so the base model knows byte-level English
statistics and the instruction-block genre without ever seeing the serving
grammar's actual labels."""

from __future__ import annotations

import argparse
import time

import numpy as np
import torch

from .model import BOS, EOS, ModelConfig, TinyCausalLM, encode_bytes

ARTICLES = ("the", "a", "this", "that", "every", "another")
NOUNS = (
    "river", "bridge", "market", "garden", "winter", "morning", "teacher",
    "letter", "window", "journey", "village", "harbor", "story", "dinner",
    "mountain", "library", "ticket", "garden", "signal", "engine", "painter",
    "forest", "island", "mirror", "bottle", "summer", "evening", "student",
)
VERBS = (
    "crosses", "follows", "remembers", "opens", "carries", "describes",
    "finds", "watches", "repairs", "welcomes", "measures", "paints",
    "collects", "reaches", "answers", "borrows", "delivers", "explains",
)
ADJECTIVES = (
    "quiet", "old", "bright", "narrow", "gentle", "busy", "distant",
    "warm", "simple", "heavy", "curious", "early", "green", "small",
)
ADVERBS = ("slowly", "often", "carefully", "again", "together", "quietly", "soon")


def _sentence(rng) -> str:
    words = [
        ARTICLES[rng.integers(len(ARTICLES))],
        ADJECTIVES[rng.integers(len(ADJECTIVES))],
        NOUNS[rng.integers(len(NOUNS))],
        VERBS[rng.integers(len(VERBS))],
        ARTICLES[rng.integers(len(ARTICLES))],
        NOUNS[rng.integers(len(NOUNS))],
    ]
    if rng.random() < 0.4:
        words.append(ADVERBS[rng.integers(len(ADVERBS))])
    return " ".join(words) + "."


def _label(rng) -> str:
    letters = "ABCDEFGHIJKLMNOPQRSTUVWXYZ"
    return "".join(letters[rng.integers(26)] for _ in range(int(rng.integers(2, 6))))


def _token(rng) -> str:
    letters = "abcdefghijklmnopqrstuvwxyz"
    digits = "0123456789"
    out = [letters[rng.integers(26)].upper()]
    for _ in range(int(rng.integers(3, 7))):
        pool = digits if rng.random() < 0.5 else letters
        out.append(pool[rng.integers(len(pool))])
    return "".join(out)


def _words(rng, lo=2, hi=5) -> str:
    return " ".join(NOUNS[rng.integers(len(NOUNS))] for _ in range(int(rng.integers(lo, hi))))


def _kv_line(rng) -> str:
    """Bracketed event line with random keys, like the serving inputs."""
    tag = NOUNS[rng.integers(len(NOUNS))]
    if rng.random() < 0.3:
        return f'[{tag}] "{_words(rng)}"'
    key1 = NOUNS[rng.integers(len(NOUNS))][:5]
    key2 = NOUNS[rng.integers(len(NOUNS))][:5]
    return f"[{tag}] {key1}={_token(rng)} | {key2}={_words(rng)}"


def _response_line(rng) -> str:
    return f"{_label(rng)}: {_token(rng)} | {_label(rng)}: {_words(rng)}"


def _structured_block(rng) -> str:
    lines = [_sentence(rng) for _ in range(int(rng.integers(1, 3)))]
    lines.append("### Response:")
    lines.append(_response_line(rng))
    return "\n".join(lines)


def _instruction_block(rng) -> str:
    """Instruction/input/response document shaped like the serving prompts,
    with entirely random labels, keys, tokens, and words."""
    lines = [_sentence(rng)]
    lines.append("### Input:")
    for _ in range(int(rng.integers(1, 5))):
        lines.append(_kv_line(rng))
    lines.append("### Response:")
    lines.append(_response_line(rng))
    return "\n".join(lines)


def build_corpus(seed: int = 0, n_docs: int = 1600) -> list[str]:
    rng = np.random.Generator(np.random.PCG64(seed))
    docs = []
    for _ in range(n_docs):
        roll = rng.random()
        if roll < 0.45:
            docs.append(_instruction_block(rng))
        elif roll < 0.6:
            docs.append(_structured_block(rng))
        else:
            docs.append(" ".join(_sentence(rng) for _ in range(int(rng.integers(2, 5)))))
    return docs


def pretrain(
    model: TinyCausalLM,
    steps: int = 1200,
    batch: int = 16,
    lr: float = 2e-3,
    seed: int = 0,
    log_every: int = 0,
    anneal: bool = True,
) -> list[float]:
    """Next-byte training on the synthetic corpus; returns the loss trace.

    With ``anneal`` a second phase of 2/3 the steps runs at half the
    learning rate on a fresh corpus sample, which polishes the base enough
    for adapter fine-tuning to reach clean greedy decoding.
    """
    trace = _pretrain_phase(model, steps, batch, lr, seed, log_every)
    if anneal:
        trace += _pretrain_phase(
            model, (2 * steps) // 3, batch, lr / 2, seed + 7, log_every
        )
    return trace


def _pretrain_phase(
    model: TinyCausalLM,
    steps: int,
    batch: int,
    lr: float,
    seed: int,
    log_every: int = 0,
) -> list[float]:
    docs = build_corpus(seed=seed)
    stream: list[int] = []
    for doc in docs:
        stream.append(BOS)
        stream.extend(encode_bytes(doc))
        stream.append(EOS)
    data = torch.tensor(stream, dtype=torch.long)

    block = min(256, model.cfg.block_size)
    rng = np.random.Generator(np.random.PCG64(seed + 1))
    opt = torch.optim.AdamW(model.parameters(), lr=lr)
    losses = []
    model.train()
    for step in range(steps):
        starts = rng.integers(0, len(data) - block - 1, size=batch)
        x = torch.stack([data[s : s + block] for s in starts])
        y = torch.stack([data[s + 1 : s + block + 1] for s in starts])
        logits = model(x)
        loss = torch.nn.functional.cross_entropy(logits.view(-1, logits.size(-1)), y.view(-1))
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(float(loss.detach()))
        if log_every and (step + 1) % log_every == 0:
            print(f"step {step + 1}/{steps} loss {losses[-1]:.3f}")
    model.eval()
    return losses


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", required=True, help="path for the weights file")
    ap.add_argument("--steps", type=int, default=1200)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    model = TinyCausalLM(ModelConfig(), seed=args.seed)
    start = time.monotonic()
    losses = pretrain(model, steps=args.steps, seed=args.seed, log_every=100)
    torch.save(model.state_dict(), args.out)
    print(
        f"pretrained {model.num_parameters()} params in {time.monotonic() - start:.0f}s, "
        f"final loss {losses[-1]:.3f}, saved to {args.out}"
    )


if __name__ == "__main__":
    main()
