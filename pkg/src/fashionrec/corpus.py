"""Data model for users, items, queries, and interaction sequences, plus
ingestion, dataset splits, and synthetic corpus generation.

File formats (one JSON object per line):

    catalog.jsonl       {"item_id": str, "attributes": {str: str, ...}}
                        ``attributes.title`` is mandatory.
    interactions.jsonl  {"user_id": str, "events": [
                            {"action": "search", "t": int, "query": str} |
                            {"action": "click"|"purchase", "t": int, "item_id": str}]}
    querylog.jsonl      {"query": str, "item_id": str,
                         "organic_position": int, "purchased": bool}

Item ids may not contain ``|`` or newlines (the output grammar reserves
``|``); attribute values are stripped and may not contain newlines, so every
event renders on a single line.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

SEARCH_TOKENS = (
    "boot", "sandal", "loafer", "sneaker", "heel", "mule", "clog", "wedge",
    "pump", "flat", "slipper", "moccasin", "oxford", "brogue", "espadrille",
    "trainer", "slide", "galosh", "bootie", "platform", "stiletto", "skate",
    "cleat", "moonboot", "flipflop", "jelly", "creeper", "monkstrap",
    "chukka", "derby", "gladiator", "huarache", "jodhpur", "kitten",
    "maryjane", "peeptoe", "lug", "riding", "saddle", "slingback", "sockboot",
    "tassel", "topsider", "trek", "waders", "wingtip", "zori", "ballerina",
    "chelsea", "combat",
)

ADJECTIVES = (
    "leather", "suede", "canvas", "velvet", "satin", "mesh", "knit", "woven",
    "quilted", "patent", "matte", "glossy", "studded", "fringed", "classic",
    "vintage", "modern", "sport", "casual", "formal",
)

BRANDS = (
    "northpeak", "veloria", "stridemark", "calzado", "urbanist", "fenwick",
    "solstice", "harlow", "meridian", "atlasco",
)

COLORS = ("black", "brown", "white", "red", "navy", "tan", "green", "grey")
SIZES = ("xs", "s", "m", "l", "xl")


class CorpusError(ValueError):
    pass


class ParseError(CorpusError):
    def __init__(self, path, line_no: int, message: str):
        super().__init__(f"{path}:{line_no}: {message}")
        self.line_no = line_no


class DuplicateIdError(CorpusError):
    pass


class MissingTitleError(CorpusError):
    pass


class UnknownItemError(CorpusError):
    pass


class Action(str, Enum):
    SEARCH = "search"
    CLICK = "click"
    PURCHASE = "purchase"


@dataclass
class Item:
    item_id: str
    attributes: dict[str, str]

    @property
    def title(self) -> str:
        return self.attributes["title"]

    def validate(self) -> None:
        if not self.item_id:
            raise CorpusError("empty item_id")
        if "|" in self.item_id or "\n" in self.item_id:
            raise CorpusError(f"item_id {self.item_id!r} contains a reserved character")
        title = self.attributes.get("title", "").strip()
        if not title:
            raise MissingTitleError(f"item {self.item_id!r} has no title attribute")
        for k, v in self.attributes.items():
            if "\n" in k or "\n" in v:
                raise CorpusError(f"item {self.item_id!r}: newline in attribute {k!r}")


@dataclass
class Catalog:
    items: list[Item]
    by_id: dict[str, Item] = field(init=False, repr=False)

    def __post_init__(self):
        self.by_id = {}
        for it in self.items:
            it.validate()
            if it.item_id in self.by_id:
                raise DuplicateIdError(f"duplicate item_id {it.item_id!r}")
            self.by_id[it.item_id] = it

    @property
    def num_items(self) -> int:
        return len(self.items)

    def __contains__(self, item_id: str) -> bool:
        return item_id in self.by_id

    def __getitem__(self, item_id: str) -> Item:
        return self.by_id[item_id]


@dataclass(frozen=True)
class InteractionEvent:
    action: Action
    t: int
    payload: str  # query text for SEARCH, item_id otherwise

    def __post_init__(self):
        if self.t < 0:
            raise CorpusError(f"negative timestamp {self.t}")

    @property
    def is_search(self) -> bool:
        return self.action is Action.SEARCH


@dataclass(frozen=True)
class InteractionSequence:
    user_id: str
    events: tuple[InteractionEvent, ...]

    def __post_init__(self):
        if not self.events:
            raise CorpusError(f"user {self.user_id!r}: empty sequence")
        ts = [e.t for e in self.events]
        if any(a > b for a, b in zip(ts, ts[1:])):
            raise CorpusError(f"user {self.user_id!r}: timestamps decrease")

    def __len__(self) -> int:
        return len(self.events)


@dataclass(frozen=True)
class TestPair:
    user_id: str
    history: tuple[InteractionEvent, ...]
    truth: str  # ground-truth item_id (a Purchase)


@dataclass(frozen=True)
class SplitMeta:
    kind: str  # leave_one_out | cold_start | zero_shot | low_resource
    ratio: float | None = None
    dropped_no_purchase: int = 0
    dropped_empty_history: int = 0

    @property
    def drop_count(self) -> int:
        return self.dropped_no_purchase + self.dropped_empty_history


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple[InteractionSequence, ...]
    test: tuple[TestPair, ...]
    meta: SplitMeta


@dataclass(frozen=True)
class QueryLogRecord:
    query: str
    item_id: str
    organic_position: int
    purchased: bool


# ---------------------------------------------------------------------------
# File IO


def _iter_jsonl(path):
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield line_no, json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(path, line_no, f"invalid JSON ({e.msg})") from e


def load_catalog(path) -> Catalog:
    """Load a catalog.jsonl file. Rejects duplicate ids and missing titles."""
    items = []
    seen = set()
    for line_no, row in _iter_jsonl(path):
        if not isinstance(row, dict) or "item_id" not in row or "attributes" not in row:
            raise ParseError(path, line_no, "expected object with item_id and attributes")
        item_id = row["item_id"]
        attrs = row["attributes"]
        if not isinstance(item_id, str) or not isinstance(attrs, dict):
            raise ParseError(path, line_no, "item_id must be str, attributes an object")
        if item_id in seen:
            raise DuplicateIdError(f"{path}:{line_no}: duplicate item_id {item_id!r}")
        seen.add(item_id)
        item = Item(item_id=item_id, attributes={str(k): str(v).strip() for k, v in attrs.items()})
        try:
            item.validate()
        except CorpusError as e:
            raise type(e)(f"{path}:{line_no}: {e}") from e
        items.append(item)
    return Catalog(items=items)


def write_catalog(catalog: Catalog, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for it in catalog.items:
            f.write(json.dumps({"item_id": it.item_id, "attributes": it.attributes}) + "\n")


def _parse_event(path, line_no, raw) -> InteractionEvent:
    try:
        action = Action(raw.get("action"))
    except ValueError:
        raise ParseError(path, line_no, f"malformed action {raw.get('action')!r}") from None
    t = raw.get("t")
    if not isinstance(t, int) or t < 0:
        raise ParseError(path, line_no, f"bad timestamp {t!r}")
    if action is Action.SEARCH:
        payload = raw.get("query")
        if not isinstance(payload, str) or not payload:
            raise ParseError(path, line_no, "search event needs a query")
    else:
        payload = raw.get("item_id")
        if not isinstance(payload, str) or not payload:
            raise ParseError(path, line_no, f"{action.value} event needs an item_id")
    return InteractionEvent(action=action, t=t, payload=payload)


def filter_purchased_clicks(events) -> tuple[InteractionEvent, ...]:
    """Drop click events on items purchased later in the same sequence."""
    events = list(events)
    kept = []
    for i, ev in enumerate(events):
        if ev.action is Action.CLICK and any(
            later.action is Action.PURCHASE and later.payload == ev.payload
            for later in events[i + 1 :]
        ):
            continue
        kept.append(ev)
    return tuple(kept)


def load_interactions(path, catalog: Catalog) -> list[InteractionSequence]:
    """Load interactions.jsonl: events sorted by timestamp (stable on ties),
    with clicks on eventually-purchased items removed."""
    seqs = []
    seen_users = set()
    for line_no, row in _iter_jsonl(path):
        user_id = row.get("user_id")
        raw_events = row.get("events")
        if not isinstance(user_id, str) or not isinstance(raw_events, list) or not raw_events:
            raise ParseError(path, line_no, "expected user_id and a non-empty events list")
        if user_id in seen_users:
            raise ParseError(path, line_no, f"duplicate user_id {user_id!r}")
        seen_users.add(user_id)
        events = [_parse_event(path, line_no, e) for e in raw_events]
        for ev in events:
            if not ev.is_search and ev.payload not in catalog:
                raise UnknownItemError(f"{path}:{line_no}: unknown item_id {ev.payload!r}")
        events.sort(key=lambda e: e.t)  # stable: input order breaks ties
        kept = filter_purchased_clicks(events)
        if kept:
            seqs.append(InteractionSequence(user_id=user_id, events=kept))
    return seqs


def write_interactions(seqs, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for seq in seqs:
            events = []
            for ev in seq.events:
                if ev.is_search:
                    events.append({"action": "search", "t": ev.t, "query": ev.payload})
                else:
                    events.append({"action": ev.action.value, "t": ev.t, "item_id": ev.payload})
            f.write(json.dumps({"user_id": seq.user_id, "events": events}) + "\n")


def load_querylog(path, catalog: Catalog | None = None) -> list[QueryLogRecord]:
    records = []
    for line_no, row in _iter_jsonl(path):
        try:
            rec = QueryLogRecord(
                query=str(row["query"]),
                item_id=str(row["item_id"]),
                organic_position=int(row["organic_position"]),
                purchased=bool(row.get("purchased", False)),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ParseError(path, line_no, f"bad query log record ({e})") from e
        if catalog is not None and rec.item_id not in catalog:
            raise UnknownItemError(f"{path}:{line_no}: unknown item_id {rec.item_id!r}")
        records.append(rec)
    return records


def write_querylog(records, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            f.write(
                json.dumps(
                    {
                        "query": r.query,
                        "item_id": r.item_id,
                        "organic_position": r.organic_position,
                        "purchased": r.purchased,
                    }
                )
                + "\n"
            )


# ---------------------------------------------------------------------------
# Splits


def leave_one_out_split(seqs) -> DatasetSplit:
    """Hold out each sequence's final purchase as ground truth.

    The test history and the training copy are both the events strictly
    before the held-out purchase; trailing events after it are discarded.
    Sequences with no purchase, or whose final purchase is their first
    event, are dropped and counted in the meta.
    """
    train, test = [], []
    no_purchase = empty_history = 0
    for seq in seqs:
        last = None
        for i, ev in enumerate(seq.events):
            if ev.action is Action.PURCHASE:
                last = i
        if last is None:
            no_purchase += 1
            continue
        if last == 0:
            empty_history += 1
            continue
        history = seq.events[:last]
        train.append(InteractionSequence(user_id=seq.user_id, events=history))
        test.append(TestPair(user_id=seq.user_id, history=history, truth=seq.events[last].payload))
    meta = SplitMeta(
        kind="leave_one_out",
        dropped_no_purchase=no_purchase,
        dropped_empty_history=empty_history,
    )
    return DatasetSplit(train=tuple(train), test=tuple(test), meta=meta)


def train_item_ids(split: DatasetSplit) -> set[str]:
    """All item ids interacted with (click or purchase) in training sequences."""
    ids = set()
    for seq in split.train:
        for ev in seq.events:
            if not ev.is_search:
                ids.add(ev.payload)
    return ids


def cold_start_filter(split: DatasetSplit) -> DatasetSplit:
    """Keep only test pairs whose ground truth never occurs in training."""
    if split.meta.kind != "leave_one_out":
        raise CorpusError(f"cold_start_filter expects a leave_one_out split, got {split.meta.kind}")
    warm = train_item_ids(split)
    test = tuple(p for p in split.test if p.truth not in warm)
    if not test:
        warnings.warn("cold-start filter produced an empty test set", stacklevel=2)
    meta = replace(split.meta, kind="cold_start")
    return DatasetSplit(train=split.train, test=test, meta=meta)


def low_resource_sample(split: DatasetSplit, ratio: float, seed: int) -> DatasetSplit:
    """Deterministic subsample of training sequences; test set unchanged."""
    if not (0.0 < ratio <= 1.0):
        raise CorpusError(f"ratio must be in (0, 1], got {ratio}")
    n = len(split.train)
    k = max(1, math.floor(ratio * n))
    rng = np.random.Generator(np.random.PCG64(seed))
    idx = sorted(rng.choice(n, size=k, replace=False).tolist())
    meta = replace(split.meta, kind="low_resource", ratio=ratio)
    return DatasetSplit(train=tuple(split.train[i] for i in idx), test=split.test, meta=meta)


# ---------------------------------------------------------------------------
# Synthetic corpus


@dataclass(frozen=True)
class SynthSpec:
    """Parameters for the planted-structure synthetic corpus.

    Items are grouped into families sharing a stem token; each family has one
    search query containing that stem, and item titles all contain it too.
    Purchases inside an episode follow the within-family successor cycle with
    probability ``markov_prob`` (else jump to a random family member), which
    plants a next-item Markov structure over the whole catalog.
    """

    num_items: int = 250
    num_users: int = 50
    num_families: int = 50
    markov_prob: float = 0.9
    mean_episodes: float = 3.0
    mean_purchases: float = 2.2
    click_rate: float = 0.3

    def validate(self) -> None:
        if self.num_families < 1 or self.num_items < self.num_families:
            raise CorpusError("need num_items >= num_families >= 1")
        if self.num_users < 1:
            raise CorpusError("need num_users >= 1")
        if not (0.0 <= self.markov_prob <= 1.0):
            raise CorpusError("markov_prob must be in [0, 1]")


def _family_stem(f: int) -> str:
    base = SEARCH_TOKENS[f % len(SEARCH_TOKENS)]
    return base if f < len(SEARCH_TOKENS) else f"{base}{f // len(SEARCH_TOKENS)}"


def synth_catalog(spec: SynthSpec, rng: np.random.Generator) -> Catalog:
    sizes = [spec.num_items // spec.num_families] * spec.num_families
    for i in range(spec.num_items % spec.num_families):
        sizes[i] += 1
    items = []
    idx = 0
    n_combo = len(BRANDS) * len(ADJECTIVES) * len(COLORS)
    for f, size in enumerate(sizes):
        stem = _family_stem(f)
        # distinct (brand, adjective, color) combos keep titles unique
        combos = rng.choice(n_combo, size=min(size, n_combo), replace=False)
        for j in range(size):
            combo = int(combos[j % len(combos)])
            brand = BRANDS[combo % len(BRANDS)]
            adj = ADJECTIVES[(combo // len(BRANDS)) % len(ADJECTIVES)]
            color = COLORS[combo // (len(BRANDS) * len(ADJECTIVES))]
            size_v = SIZES[int(rng.integers(len(SIZES)))]
            items.append(
                Item(
                    item_id=f"I{idx:04d}",
                    attributes={
                        "title": f"{brand} {adj} {color} {stem}",
                        "category": stem,
                        "brand": brand,
                        "color": color,
                        "size": size_v,
                    },
                )
            )
            idx += 1
    return Catalog(items=items)


def family_query(stem: str) -> str:
    return f"womens {stem}"


@dataclass(frozen=True)
class PlantedStructure:
    families: dict[str, list[str]]  # stem -> item ids in organic order
    family_of: dict[str, str]  # item_id -> stem
    successor: dict[str, str]  # item_id -> next item in the family cycle
    queries: dict[str, str]  # stem -> search query


def planted_structure(catalog: Catalog) -> PlantedStructure:
    """Recover the planted families/successors from a synthetic catalog."""
    families: dict[str, list[str]] = {}
    for it in catalog.items:
        families.setdefault(it.attributes["category"], []).append(it.item_id)
    successor = {}
    family_of = {}
    for stem, members in families.items():
        for i, item_id in enumerate(members):
            successor[item_id] = members[(i + 1) % len(members)]
            family_of[item_id] = stem
    queries = {stem: family_query(stem) for stem in families}
    return PlantedStructure(
        families=families, family_of=family_of, successor=successor, queries=queries
    )


def synth_corpus(spec: SynthSpec, seed: int) -> tuple[Catalog, list[InteractionSequence]]:
    """Deterministic corpus with planted query-family and next-item structure."""
    spec.validate()
    rng = np.random.Generator(np.random.PCG64(seed))
    catalog = synth_catalog(spec, rng)
    planted = planted_structure(catalog)
    stems = list(planted.families)

    seqs = []
    for u in range(spec.num_users):
        t = 1_000_000 + u
        events: list[InteractionEvent] = []
        n_episodes = max(1, int(rng.poisson(spec.mean_episodes)))
        for _ in range(n_episodes):
            stem = stems[int(rng.integers(len(stems)))]
            members = planted.families[stem]
            t += int(rng.integers(10, 500))
            events.append(InteractionEvent(Action.SEARCH, t, family_query(stem)))
            n_buy = max(1, int(rng.poisson(spec.mean_purchases)))
            current = members[int(rng.integers(len(members)))]
            for _ in range(n_buy):
                # pick the follow-up first so browse clicks can avoid it
                if rng.random() < spec.markov_prob:
                    nxt = planted.successor[current]
                else:
                    nxt = members[int(rng.integers(len(members)))]
                if rng.random() < spec.click_rate:
                    others = [m for m in members if m != current and m != nxt]
                    if others:
                        t += int(rng.integers(5, 120))
                        events.append(
                            InteractionEvent(
                                Action.CLICK, t, others[int(rng.integers(len(others)))]
                            )
                        )
                t += int(rng.integers(5, 120))
                events.append(InteractionEvent(Action.PURCHASE, t, current))
                current = nxt
        seqs.append(InteractionSequence(user_id=f"u{u:04d}", events=tuple(events)))
    return catalog, seqs


def synth_querylog(catalog: Catalog) -> list[QueryLogRecord]:
    """Query log matching the planted structure: each family query lists its
    members in organic order (first two positions flagged as purchased)."""
    planted = planted_structure(catalog)
    records = []
    for stem, members in planted.families.items():
        q = planted.queries[stem]
        for pos, item_id in enumerate(members, start=1):
            records.append(
                QueryLogRecord(query=q, item_id=item_id, organic_position=pos, purchased=pos <= 2)
            )
    return records
