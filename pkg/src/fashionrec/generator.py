"""Text-generation abstraction: the generate/perplexity interfaces, local
mocks for testing, the perplexity-ranked training curriculum, and an HTTP
client for real generation servers.

Wire protocol (HTTP+JSON), shared with the serving side:

    POST /generate   {"prompt", "max_new_tokens", "temperature", "top_p",
                      "request_id"}                       -> {"text": str}
    POST /perplexity {"prompt", "response"}               -> {"perplexity": float}
    POST /embed      {"texts": [str, ...]}                -> {"vectors": [[float]]}
    GET  /health                                          -> {"status": "ok", "model": str}
"""

from __future__ import annotations

import hashlib
import math
import uuid
from collections import Counter
from dataclasses import dataclass

import numpy as np
import requests

from .corpus import Item
from .memory import TextEncoder
from .promptgen import Prompt, render_for_generation, render_response


class TransportError(RuntimeError):
    pass


@dataclass(frozen=True)
class GenerationParams:
    max_new_tokens: int = 64
    temperature: float = 0.05
    top_p: float = 0.95

    def __post_init__(self):
        if self.max_new_tokens < 1:
            raise ValueError("max_new_tokens must be >= 1")
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if not (0.0 < self.top_p <= 1.0):
            raise ValueError("top_p must be in (0, 1]")


class Generator:
    """Interface: produce raw text for ``parse_generation``."""

    def generate(self, prompt: Prompt, params: GenerationParams) -> str:
        raise NotImplementedError


class PerplexitySource:
    """Interface: perplexity of a prompt's response segment,
    exp(mean negative log-likelihood per response token)."""

    def perplexity(self, prompt: Prompt) -> float:
        raise NotImplementedError


# ---------------------------------------------------------------------------
# Mocks


class OracleMock(Generator):
    """Emits the canonical output line for the truth mapped to prompt_id."""

    def __init__(self, truths: dict[str, Item]):
        self.truths = dict(truths)

    def generate(self, prompt: Prompt, params: GenerationParams) -> str:
        if prompt.prompt_id not in self.truths:
            raise KeyError(f"oracle has no truth for prompt {prompt.prompt_id!r}")
        return render_response(self.truths[prompt.prompt_id])


def _unit_hash(*parts: str) -> float:
    """Deterministic uniform-ish value in [0, 1) from string parts."""
    h = hashlib.blake2b("\x1f".join(parts).encode("utf-8"), digest_size=8)
    return int.from_bytes(h.digest(), "little") / 2**64


class NoisyMock(Generator):
    """Oracle whose emitted ID is corrupted (to an id absent from any
    catalog) with probability ``corrupt_prob``; the title stays intact.
    Corruption is a deterministic function of (prompt_id, seed)."""

    def __init__(self, truths: dict[str, Item], corrupt_prob: float, seed: int = 0):
        self.truths = dict(truths)
        self.corrupt_prob = corrupt_prob
        self.seed = seed

    def generate(self, prompt: Prompt, params: GenerationParams) -> str:
        truth = self.truths[prompt.prompt_id]
        item_id = truth.item_id
        if _unit_hash(str(self.seed), prompt.prompt_id or "") < self.corrupt_prob:
            item_id = f"zz-missing-{item_id}"
        return f"ID: {item_id} | TITLE: {truth.title}"


class StaticMock(Generator):
    """Always returns the same text; handy for failed-parse paths."""

    def __init__(self, text: str):
        self.text = text

    def generate(self, prompt: Prompt, params: GenerationParams) -> str:
        return self.text


class TablePerplexity(PerplexitySource):
    """Perplexities declared per prompt_id."""

    def __init__(self, values: dict[str, float]):
        self.values = dict(values)

    def perplexity(self, prompt: Prompt) -> float:
        return float(self.values[prompt.prompt_id])


class UnigramPerplexity(PerplexitySource):
    """Character-frequency unigram model: exp(mean -ln P(char)) over the
    response. With no distribution given, P is estimated from the response
    itself, making the perplexity the exponential of its character entropy."""

    def __init__(self, dist: dict[str, float] | None = None):
        self.dist = dict(dist) if dist is not None else None

    def perplexity(self, prompt: Prompt) -> float:
        if not prompt.response:
            raise ValueError("perplexity needs a response segment")
        chars = list(prompt.response)
        if self.dist is None:
            counts = Counter(chars)
            total = len(chars)
            dist = {c: n / total for c, n in counts.items()}
        else:
            dist = self.dist
        nll = [-math.log(dist[c]) for c in chars]
        return math.exp(sum(nll) / len(nll))


# ---------------------------------------------------------------------------
# Curriculum


@dataclass(frozen=True)
class CurriculumSchedule:
    entries: tuple[tuple[str, int], ...]  # (prompt_id, epochs), input order
    threshold_fraction: float

    def epochs_for(self, prompt_id: str) -> int:
        for pid, ep in self.entries:
            if pid == prompt_id:
                return ep
        raise KeyError(prompt_id)


def build_curriculum(
    prompts,
    ppl: PerplexitySource,
    fraction: float = 0.2,
    high_epochs: int = 3,
    base_epochs: int = 1,
) -> CurriculumSchedule:
    """Rank prompts by descending perplexity (ties by prompt_id ascending);
    the top ceil(fraction * n) train for ``high_epochs``, the rest for
    ``base_epochs``."""
    if not (0.0 < fraction < 1.0):
        raise ValueError("fraction must be in (0, 1)")
    if not (high_epochs >= base_epochs >= 1):
        raise ValueError("need high_epochs >= base_epochs >= 1")
    prompts = list(prompts)
    if any(p.prompt_id is None for p in prompts):
        raise ValueError("curriculum prompts need prompt_ids")
    scores = {p.prompt_id: ppl.perplexity(p) for p in prompts}
    ranked = sorted(scores, key=lambda pid: (-scores[pid], pid))
    n_high = math.ceil(fraction * len(ranked))
    high = set(ranked[:n_high])
    entries = tuple(
        (p.prompt_id, high_epochs if p.prompt_id in high else base_epochs) for p in prompts
    )
    return CurriculumSchedule(entries=entries, threshold_fraction=fraction)


# ---------------------------------------------------------------------------
# Remote client


class RemoteGenerator(Generator, PerplexitySource):
    """HTTP client for the wire protocol. Retries are bounded and idempotent:
    every generation request carries a client-chosen request id that stays
    fixed across retries."""

    def __init__(self, base_url: str, timeout: float = 60.0, retries: int = 2, session=None):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.retries = retries
        self.session = session or requests.Session()

    def _post(self, path: str, body: dict) -> dict:
        last_error = None
        for _ in range(self.retries + 1):
            try:
                resp = self.session.post(
                    f"{self.base_url}{path}", json=body, timeout=self.timeout
                )
                if resp.status_code >= 500:  # transient; retry
                    last_error = TransportError(f"{path}: server error {resp.status_code}")
                    continue
                if resp.status_code >= 400:  # client error; retrying cannot help
                    raise TransportError(f"{path}: rejected with {resp.status_code}: {resp.text}")
                return resp.json()
            except (requests.Timeout, requests.ConnectionError) as e:
                last_error = e
        raise TransportError(f"POST {path} failed after {self.retries + 1} attempts") from last_error

    def generate(self, prompt: Prompt, params: GenerationParams) -> str:
        body = {
            "prompt": render_for_generation(prompt),
            "max_new_tokens": params.max_new_tokens,
            "temperature": params.temperature,
            "top_p": params.top_p,
            "request_id": uuid.uuid4().hex,
        }
        return self._post("/generate", body)["text"]

    def perplexity(self, prompt: Prompt) -> float:
        if prompt.response is None:
            raise ValueError("perplexity needs a response segment")
        body = {"prompt": render_for_generation(prompt), "response": prompt.response}
        return float(self._post("/perplexity", body)["perplexity"])

    def embed(self, texts: list[str]) -> np.ndarray:
        vectors = self._post("/embed", {"texts": list(texts)})["vectors"]
        return np.asarray(vectors, dtype=np.float64)

    def health(self) -> dict:
        try:
            resp = self.session.get(f"{self.base_url}/health", timeout=self.timeout)
            resp.raise_for_status()
            return resp.json()
        except requests.RequestException as e:
            raise TransportError(f"GET /health failed: {e}") from e


class RemoteEncoder(TextEncoder):
    """Memory-key encoder backed by a remote /embed endpoint."""

    def __init__(self, client: RemoteGenerator):
        self.client = client
        self.encoder_id = f"remote:{client.health().get('model', 'unknown')}"

    def encode(self, text: str) -> np.ndarray:
        return self.client.embed([text])[0]
