"""Secondary acceptance: wire-protocol conformance via the shared golden
fixtures (exercised in test_protocol.py), and the fine-tuning criterion:
after training adapters on 200 synthetic prompts under a 20%/3-epoch
curriculum schedule, at least 90% of probe generations parse as Strict, and
held-in perplexity decreases. Also: the saved adapter file loads back into a
fresh service whose /generate still emits Strict lines."""

import json
import re
import time

import pytest
import torch
from fastapi.testclient import TestClient

from conftest import make_prompt_rows
from llm_service.app import make_app
from llm_service.config import ServiceConfig
from llm_service.engine import build_engine
from llm_service.finetune import (
    finetune,
    load_prompt_rows,
    load_schedule,
    mean_perplexity,
    render_prompt,
)

STRICT_RE = re.compile(r"^ID:\s*([^|]+?)\s*\|\s*TITLE:\s*(.+?)\s*$")


def parses_strict(text: str) -> bool:
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    return bool(lines) and STRICT_RE.match(lines[0].strip()) is not None


def report(ac, ok, detail):
    print(f"{ac} {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, f"{ac}: {detail}"


@pytest.fixture(scope="module")
def finetuned(base_config, tmp_path_factory):
    """Fine-tune on 200 exported-format prompts through the file interfaces
    and return everything AC-9 needs."""
    tmp = tmp_path_factory.mktemp("finetune")
    rows = make_prompt_rows(200)
    prompts_path = tmp / "prompts.jsonl"
    with open(prompts_path, "w") as f:
        for row in rows:
            f.write(json.dumps(row) + "\n")
    # top 20% by unigram-entropy proxy: declared here as the first 40 ids
    schedule_path = tmp / "schedule.json"
    with open(schedule_path, "w") as f:
        json.dump(
            {
                "threshold_fraction": 0.2,
                "entries": [[f"p{i:03d}", 3 if i < 40 else 1] for i in range(200)],
            },
            f,
        )

    config = ServiceConfig(**{**base_config.__dict__})
    engine = build_engine(config)  # reuses the session bootstrap weights
    loaded_rows = load_prompt_rows(prompts_path)
    schedule = load_schedule(schedule_path)

    ppl_before = mean_perplexity(engine, loaded_rows[:32])
    start = time.monotonic()
    state = finetune(
        engine, loaded_rows, schedule,
        lr=config.finetune_lr, batch_size=config.finetune_batch,
        passes=config.finetune_passes, seed=config.seed,
    )
    train_seconds = time.monotonic() - start
    ppl_after = mean_perplexity(engine, loaded_rows[:32])
    adapters_path = tmp / "adapters.pt"
    torch.save(state, adapters_path)
    return {
        "engine": engine,
        "rows": loaded_rows,
        "ppl_before": ppl_before,
        "ppl_after": ppl_after,
        "adapters_path": adapters_path,
        "train_seconds": train_seconds,
    }


def test_ac9_perplexity_decreases(finetuned):
    ok = finetuned["ppl_after"] < finetuned["ppl_before"]
    report(
        "AC-9a", ok,
        f"held-in perplexity {finetuned['ppl_before']:.1f} -> {finetuned['ppl_after']:.2f} "
        f"({finetuned['train_seconds']:.0f}s fine-tune)",
    )


def test_ac9_strict_rate(finetuned):
    engine = finetuned["engine"]
    probes = finetuned["rows"][:50]
    ok_count = 0
    for row in probes:
        out = engine.generate(render_prompt(row), max_new_tokens=64, greedy=True)
        ok_count += parses_strict(out)
    rate = ok_count / len(probes)
    report("AC-9b", rate >= 0.9, f"{ok_count}/{len(probes)} probe generations Strict (>= 90%)")


def test_ac9_adapter_file_round_trip(finetuned, base_config):
    config = ServiceConfig(**{**base_config.__dict__})
    config.adapters_path = str(finetuned["adapters_path"])
    served = build_engine(config)
    client = TestClient(make_app(served))
    probes = finetuned["rows"][:10]
    ok_count = 0
    for row in probes:
        body = {"prompt": render_prompt(row), "max_new_tokens": 64, "greedy": True}
        text = client.post("/generate", json=body).json()["text"]
        ok_count += parses_strict(text)
    report(
        "AC-9c", ok_count >= 9,
        f"reloaded adapters serve Strict outputs ({ok_count}/10 via /generate)",
    )


def test_ac9_fluent_vs_hex(engine):
    fluent = engine.perplexity("", "the quiet river crosses the old bridge again.")
    hexjunk = engine.perplexity("", "9f3a07c1be44d2e8a05b17f6c9d0423e")
    report("AC-9d", fluent < hexjunk, f"perplexity fluent {fluent:.1f} < hex {hexjunk:.1f}")
