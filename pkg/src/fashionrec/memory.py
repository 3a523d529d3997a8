"""Query-product memory: embedded-query keys mapped to organically ranked
product lists. At recommendation time the current query is embedded, the
nearest stored queries are found by cosine, and their top products are
returned for prompt enrichment.

Snapshot format: the ``embedcore`` index snapshot for the keys plus a JSON
sidecar ``<path>.values.json`` with ``{"encoder_id": ..., "values": {query:
[item_id, ...]}}``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .corpus import Catalog, UnknownItemError
from .embedcore import VectorIndex, baseline_encode, load_index, nn_search, save_index


class EncoderMismatchError(ValueError):
    pass


class TextEncoder:
    """Anything with .encode(text) -> vector and a stable .encoder_id."""

    encoder_id: str

    def encode(self, text: str) -> np.ndarray:
        raise NotImplementedError


class BaselineEncoder(TextEncoder):
    """Deterministic hashed-3-gram encoder; the default memory key encoder."""

    def __init__(self, dim: int = 256, seed: int = 0):
        self.dim = dim
        self.seed = seed
        self.encoder_id = f"baseline3g-d{dim}-s{seed}"

    def encode(self, text: str) -> np.ndarray:
        return baseline_encode(text, dim=self.dim, seed=self.seed)


def normalize_query(query: str) -> str:
    return " ".join(query.lower().split())


@dataclass(frozen=True)
class MemoryLookupParams:
    num_queries: int = 3  # nearest stored queries to match
    num_products: int = 5  # products taken from each match

    def __post_init__(self):
        if self.num_queries < 1 or self.num_products < 1:
            raise ValueError("num_queries and num_products must be >= 1")


@dataclass(frozen=True)
class QueryProductMemory:
    keys: VectorIndex
    values: dict[str, list[str]]  # stored query -> item ids, organic order
    encoder_id: str


def build_memory(records, catalog: Catalog, encoder: TextEncoder) -> QueryProductMemory:
    """Group the query log by normalized query, sort products by organic
    position ascending; duplicate (query, item) pairs keep the best position."""
    records = list(records)
    if not records:
        raise ValueError("empty query log")
    best_pos: dict[str, dict[str, int]] = {}
    for rec in records:
        if rec.item_id not in catalog:
            raise UnknownItemError(f"query log references unknown item {rec.item_id!r}")
        q = normalize_query(rec.query)
        pos = best_pos.setdefault(q, {})
        if rec.item_id not in pos or rec.organic_position < pos[rec.item_id]:
            pos[rec.item_id] = rec.organic_position
    values = {
        q: [item for item, _ in sorted(pos.items(), key=lambda kv: (kv[1], kv[0]))]
        for q, pos in best_pos.items()
    }
    keys = VectorIndex.build((q, encoder.encode(q)) for q in values)
    return QueryProductMemory(keys=keys, values=values, encoder_id=encoder.encoder_id)


def lookup(
    mem: QueryProductMemory,
    query: str,
    params: MemoryLookupParams,
    encoder: TextEncoder,
) -> list[str]:
    """Top products of the nearest stored queries, deduped keeping first."""
    if encoder.encoder_id != mem.encoder_id:
        raise EncoderMismatchError(
            f"memory was built with {mem.encoder_id!r}, lookup uses {encoder.encoder_id!r}"
        )
    vec = encoder.encode(normalize_query(query))
    matches = nn_search(mem.keys, vec, k=params.num_queries)
    out: list[str] = []
    seen = set()
    for stored_query, _ in matches:
        for item_id in mem.values[stored_query][: params.num_products]:
            if item_id not in seen:
                seen.add(item_id)
                out.append(item_id)
    return out


def save_memory(mem: QueryProductMemory, path) -> None:
    save_index(mem.keys, path)
    with open(f"{path}.values.json", "w", encoding="utf-8") as f:
        json.dump({"encoder_id": mem.encoder_id, "values": mem.values}, f, sort_keys=True)


def load_memory(path) -> QueryProductMemory:
    keys = load_index(path)
    with open(f"{path}.values.json", "r", encoding="utf-8") as f:
        sidecar = json.load(f)
    return QueryProductMemory(
        keys=keys, values=sidecar["values"], encoder_id=sidecar["encoder_id"]
    )
