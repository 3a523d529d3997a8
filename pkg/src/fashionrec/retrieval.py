"""Retrieval and ranking: convert parsed generator output into candidates in
two embedding spaces (ID and title) and merge them positionally.

The mixup merge never compares scores across spaces. Candidates are consumed
in the order: id list head (first ``n_head``), title list from position
``n_head + 1`` on, remaining id entries, and finally the skipped leading
title entries as a last resort, deduplicating throughout, so the result
always reaches ``k_total`` items whenever the union of both lists allows.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum

from .corpus import Catalog
from .embedcore import VectorIndex, nn_search
from .generator import GenerationParams, Generator
from .id_embedder import ItemEmbeddingTable, _safe_normalize
from .memory import MemoryLookupParams, QueryProductMemory, TextEncoder
from .promptgen import (
    GenerationOutput,
    ParseStatus,
    Prompt,
    PromptTemplate,
    build_prompt,
    parse_generation,
)
from .title_embedder import TitleEncoderModel


class Source(str, Enum):
    ID_SPACE = "id_space"
    TITLE_SPACE = "title_space"
    MIXUP = "mixup"


@dataclass(frozen=True)
class RankedList:
    entries: tuple[tuple[str, float], ...]  # (item_id, score)
    source: Source

    def __post_init__(self):
        ids = [i for i, _ in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("ranked list contains duplicate item ids")

    def ids(self) -> list[str]:
        return [i for i, _ in self.entries]


@dataclass(frozen=True)
class MixupParams:
    n_head: int = 1  # items taken from the top of the ID-based list
    k_total: int = 10

    def __post_init__(self):
        if self.k_total < 1 or not (0 <= self.n_head <= self.k_total):
            raise ValueError("need 0 <= n_head <= k_total and k_total >= 1")


def _id_index(table: ItemEmbeddingTable) -> VectorIndex:
    cached = getattr(table, "_nn_index", None)
    if cached is None:
        cached = VectorIndex.build(zip(table.item_ids, table.matrix))
        table._nn_index = cached
    return cached


def retrieve_by_id(gen: GenerationOutput, table: ItemEmbeddingTable, k: int) -> RankedList:
    """Exact top-k items by cosine to the generated id's embedding; unknown
    ids fall back to the cold vector instead of erroring."""
    query = _safe_normalize(table.vector(gen.item_id))
    hits = nn_search(_id_index(table), query, k)
    return RankedList(entries=tuple(hits), source=Source.ID_SPACE)


def build_title_index(catalog: Catalog, model: TitleEncoderModel) -> VectorIndex:
    """Index of all catalog titles under the trained title encoder."""
    return VectorIndex.build(
        (it.item_id, model.encode_title(it.title)) for it in catalog.items
    )


def retrieve_by_title(
    gen: GenerationOutput, model: TitleEncoderModel, title_index: VectorIndex, k: int
) -> RankedList:
    if not gen.title:
        raise ValueError("cannot retrieve by an empty title (failed parse)")
    hits = nn_search(title_index, model.encode_title(gen.title), k)
    return RankedList(entries=tuple(hits), source=Source.TITLE_SPACE)


def mixup_merge(id_list: RankedList, title_list: RankedList, params: MixupParams) -> RankedList:
    """Positional merge: top-N of the ID list, then title-list positions
    N+1..K, with dedup and backfill (title tail, id tail, skipped title
    head) until k_total or exhaustion."""
    chosen: list[tuple[str, float]] = []
    seen: set[str] = set()

    def take(entries):
        for item_id, score in entries:
            if len(chosen) >= params.k_total:
                return
            if item_id not in seen:
                seen.add(item_id)
                chosen.append((item_id, score))

    take(id_list.entries[: params.n_head])
    take(title_list.entries[params.n_head :])
    take(id_list.entries[params.n_head :])
    take(title_list.entries[: params.n_head])
    return RankedList(entries=tuple(chosen), source=Source.MIXUP)


@dataclass(frozen=True)
class RecommendResult:
    ranked: RankedList
    parse_status: ParseStatus
    id_ids: tuple[str, ...]  # the ID-space list, for run records/ablation
    title_ids: tuple[str, ...]


@dataclass
class Pipeline:
    """Frozen state for end-to-end recommendation over one catalog.

    ``id_table=None`` disables the ID path entirely (zero-shot evaluation),
    yielding title-only results; ``mem=None`` disables memory enrichment.
    """

    catalog: Catalog
    template: PromptTemplate
    generator: Generator
    title_model: TitleEncoderModel
    title_index: VectorIndex
    id_table: ItemEmbeddingTable | None
    mem: QueryProductMemory | None = None
    mem_encoder: TextEncoder | None = None
    mem_params: MemoryLookupParams = MemoryLookupParams()
    gen_params: GenerationParams = GenerationParams()
    mixup: MixupParams = MixupParams()
    tokenizer: object | None = None

    def build(self, history, prompt_id: str | None = None) -> Prompt:
        return build_prompt(
            history,
            self.catalog,
            self.mem,
            self.template,
            params=self.mem_params,
            encoder=self.mem_encoder,
            prompt_id=prompt_id,
            tokenizer=self.tokenizer,
        )

    def recommend(self, history, prompt_id: str | None = None) -> RecommendResult:
        """build_prompt -> generate -> parse -> retrieve both spaces -> merge.

        A failed parse retries generation once, then falls back to title
        retrieval over the raw generation text.
        """
        prompt = self.build(history, prompt_id=prompt_id)
        raw = self.generator.generate(prompt, self.gen_params)
        gen = parse_generation(raw)
        if gen.parse_status is ParseStatus.FAILED:
            raw = self.generator.generate(prompt, self.gen_params)
            gen = parse_generation(raw)
        if gen.parse_status is ParseStatus.FAILED:
            fallback = GenerationOutput(
                item_id="", title=raw if raw.strip() else "unparseable output",
                parse_status=ParseStatus.FAILED,
            )
            ranked = retrieve_by_title(
                fallback, self.title_model, self.title_index, self.mixup.k_total
            )
            return RecommendResult(
                ranked=ranked, parse_status=ParseStatus.FAILED,
                id_ids=(), title_ids=tuple(ranked.ids()),
            )

        title_list = retrieve_by_title(
            gen, self.title_model, self.title_index, self.mixup.k_total
        )
        if self.id_table is None:
            trimmed = RankedList(
                entries=title_list.entries[: self.mixup.k_total], source=Source.TITLE_SPACE
            )
            return RecommendResult(
                ranked=trimmed, parse_status=gen.parse_status,
                id_ids=(), title_ids=tuple(title_list.ids()),
            )
        id_list = retrieve_by_id(gen, self.id_table, self.mixup.k_total)
        merged = mixup_merge(id_list, title_list, self.mixup)
        return RecommendResult(
            ranked=merged, parse_status=gen.parse_status,
            id_ids=tuple(id_list.ids()), title_ids=tuple(title_list.ids()),
        )


def write_run_records(records, path) -> None:
    """Run output JSONL, one object per evaluated test pair."""
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec, sort_keys=True) + "\n")


def load_run_records(path) -> list[dict]:
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records
