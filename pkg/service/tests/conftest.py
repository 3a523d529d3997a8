import numpy as np
import pytest

from llm_service.config import ServiceConfig
from llm_service.engine import build_engine

STEMS = ["boot", "sandal", "heel", "mule", "loafer", "sneaker", "clog", "wedge", "pump", "flat"]
BRANDS = ["northpeak", "veloria", "stridemark", "calzado", "urbanist"]
ADJECTIVES = ["leather", "suede", "canvas", "quilted", "classic", "woven"]
COLORS = ["black", "brown", "red", "navy", "tan"]

INSTRUCTION = (
    "You are a fashion shopping assistant. Recommend the next purchase.\n"
    "Answer with exactly one line of the form: ID: <product id> | TITLE: <product title>"
)


def make_prompt_rows(n: int, seed: int = 31) -> list[dict]:
    """Synthetic prompt rows in the exporter's JSONL schema."""
    rng = np.random.Generator(np.random.PCG64(seed))

    def title():
        return (
            f"{BRANDS[int(rng.integers(len(BRANDS)))]} "
            f"{ADJECTIVES[int(rng.integers(len(ADJECTIVES)))]} "
            f"{COLORS[int(rng.integers(len(COLORS)))]} "
        )

    rows = []
    for i in range(n):
        stem = STEMS[int(rng.integers(len(STEMS)))]
        lines = [f'[search] "womens {stem}"']
        for _ in range(int(rng.integers(1, 4))):
            lines.append(
                f"[purchase] id=I{int(rng.integers(10000)):04d} | title={title()}{stem}"
            )
        rows.append(
            {
                "prompt_id": f"p{i:03d}",
                "instruction": INSTRUCTION,
                "input": "\n".join(lines),
                "response": f"ID: I{int(rng.integers(10000)):04d} | TITLE: {title()}{stem}",
            }
        )
    return rows


@pytest.fixture(scope="session")
def base_config(tmp_path_factory) -> ServiceConfig:
    weights = tmp_path_factory.mktemp("weights") / "bootstrap.pt"
    return ServiceConfig(weights_path=str(weights))


@pytest.fixture(scope="session")
def engine(base_config):
    """Bootstrap-pretrained engine; the weight file caches the pretraining
    so every other fixture/engine in the session reuses it."""
    return build_engine(base_config)
