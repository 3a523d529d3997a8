"""Prompt construction and generation-output parsing.

A prompt has three segments: instruction (task description + numbered
execution requirements + format indicator), input (the rendered interaction
history, enriched with memory lookups on search lines), and response (the
canonical output line for the ground-truth item, training only).

The canonical output grammar is one line::

    ID: <item_id> | TITLE: <title>

Item ids never contain ``|`` (enforced at catalog load), so the line is
unambiguous even when titles contain pipes.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from enum import Enum

from .corpus import Catalog, InteractionEvent, Item
from .memory import MemoryLookupParams, QueryProductMemory, TextEncoder, lookup


class PromptError(ValueError):
    pass


class ParseStatus(str, Enum):
    STRICT = "strict"
    RECOVERED = "recovered"
    FAILED = "failed"


DEFAULT_ATTRIBUTE_KEYS = ("title", "category", "brand", "color", "size")


@dataclass(frozen=True)
class PromptTemplate:
    task_description: str
    execution_requirements: tuple[str, ...]
    format_indicator: str
    attribute_keys: tuple[str, ...] = DEFAULT_ATTRIBUTE_KEYS
    max_tokens: int = 1024

    def __post_init__(self):
        if not self.task_description or not self.format_indicator:
            raise PromptError("template segments must be non-empty")
        if not self.execution_requirements:
            raise PromptError("template needs at least one execution requirement")
        if self.max_tokens <= 0:
            raise PromptError("max_tokens must be positive")

    def instruction(self) -> str:
        lines = [self.task_description]
        for i, req in enumerate(self.execution_requirements, start=1):
            lines.append(f"{i}. {req}")
        lines.append(self.format_indicator)
        return "\n".join(lines)


def default_template(max_tokens: int = 1024) -> PromptTemplate:
    return PromptTemplate(
        task_description=(
            "You are a fashion shopping assistant. Given a customer's recent "
            "shopping activity, recommend the single product they are most "
            "likely to purchase next."
        ),
        execution_requirements=(
            "Respect the order of events; the most recent activity matters most.",
            "Compare the items the customer interacted with and focus on how "
            "their attributes differ; the differences reveal what the customer "
            "is looking for.",
            "Weigh fashion-specific attributes such as season, occasion, and style.",
            "When a search query lists top results, prefer products ranked near "
            "the top of those results.",
        ),
        format_indicator=(
            "Answer with exactly one line of the form: ID: <product id> | "
            "TITLE: <product title>"
        ),
        max_tokens=max_tokens,
    )


@dataclass(frozen=True)
class Prompt:
    instruction: str
    input: str
    response: str | None
    token_count: int
    prompt_id: str | None = None


@dataclass(frozen=True)
class GenerationOutput:
    item_id: str
    title: str
    parse_status: ParseStatus


def count_tokens(text: str, tokenizer=None) -> int:
    """Whitespace token count by default; ``tokenizer`` may override with a
    callable returning the generator's own count."""
    if tokenizer is not None:
        return int(tokenizer(text))
    return len(text.split())


def render_response(item: Item) -> str:
    return f"ID: {item.item_id} | TITLE: {item.title}"


def render_event(
    ev: InteractionEvent,
    catalog: Catalog,
    mem: QueryProductMemory | None,
    template: PromptTemplate,
    params: MemoryLookupParams,
    encoder: TextEncoder | None,
) -> str:
    if ev.is_search:
        line = f'[search] "{ev.payload}"'
        if mem is not None and encoder is not None:
            items = lookup(mem, ev.payload, params, encoder)
            if items:
                rendered = ", ".join(
                    f"{i} ({catalog[i].title})" if i in catalog else i for i in items
                )
                line += f" | top results: {rendered}"
        return line
    item = catalog[ev.payload]
    parts = [f"[{ev.action.value}] id={item.item_id}"]
    for key in template.attribute_keys:
        if key in item.attributes:
            parts.append(f"{key}={item.attributes[key]}")
    return " | ".join(parts)


def build_prompt(
    history,
    catalog: Catalog,
    mem: QueryProductMemory | None,
    template: PromptTemplate,
    params: MemoryLookupParams = MemoryLookupParams(),
    for_training: bool = False,
    truth: Item | None = None,
    encoder: TextEncoder | None = None,
    prompt_id: str | None = None,
    tokenizer=None,
) -> Prompt:
    """Render history into a prompt, dropping whole oldest events until the
    whitespace-token budget holds. Passing ``mem=None`` disables memory
    enrichment (the "top results" suffixes) and nothing else."""
    events = list(history)
    if not events:
        raise PromptError("history must be non-empty")
    if for_training and truth is None:
        raise PromptError("training prompts need the ground-truth item")

    instruction = template.instruction()
    response = render_response(truth) if for_training else None
    lines = [render_event(ev, catalog, mem, template, params, encoder) for ev in events]

    fixed = count_tokens(instruction, tokenizer) + (
        count_tokens(response, tokenizer) if response else 0
    )
    while True:
        total = fixed + count_tokens("\n".join(lines), tokenizer)
        if total <= template.max_tokens or len(lines) == 1:
            break
        lines.pop(0)  # drop the oldest event whole; never the most recent
    if total > template.max_tokens:
        raise PromptError(
            f"token budget {template.max_tokens} cannot fit the most recent event"
        )
    return Prompt(
        instruction=instruction,
        input="\n".join(lines),
        response=response,
        token_count=total,
        prompt_id=prompt_id,
    )


def render_for_generation(prompt: Prompt, include_response: bool = False) -> str:
    """Single-string rendering sent to generators; the response segment is
    appended only for training/perplexity payloads."""
    text = f"{prompt.instruction}\n\n### Input:\n{prompt.input}\n\n### Response:\n"
    if include_response and prompt.response is not None:
        text += prompt.response
    return text


_STRICT_RE = re.compile(r"^ID:\s*(?P<id>[^|]+?)\s*\|\s*TITLE:\s*(?P<title>.+?)\s*$")
_LABEL_ID_RE = re.compile(r"\bid\b\s*[:=]\s*\"?(?P<id>[^|,\n\"]+)", re.IGNORECASE)
_LABEL_TITLE_RE = re.compile(r"\btitle\b\s*[:=]\s*\"?(?P<title>[^|\n\"]+)", re.IGNORECASE)
_ID_TOKEN_RE = re.compile(r"\b(?=[A-Za-z0-9_-]*\d)[A-Za-z][A-Za-z0-9_-]{2,}\b")

_FAILED = GenerationOutput(item_id="", title="", parse_status=ParseStatus.FAILED)


def parse_generation(text: str) -> GenerationOutput:
    """Decode generator text into (item_id, title).

    Strict when the first non-empty line matches the canonical grammar.
    Otherwise recovery: case-insensitive id/title labels anywhere in the
    text, then the first plausible id-looking token (letter-led, contains a
    digit) with the remaining text as title. Anything else is Failed.
    """
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    if not lines:
        return _FAILED
    m = _STRICT_RE.match(lines[0].strip())
    if m:
        return GenerationOutput(m.group("id"), m.group("title"), ParseStatus.STRICT)

    mid = _LABEL_ID_RE.search(text)
    mtitle = _LABEL_TITLE_RE.search(text)
    if mid and mtitle:
        item_id = mid.group("id").strip()
        title = mtitle.group("title").strip()
        if item_id and title:
            return GenerationOutput(item_id, title, ParseStatus.RECOVERED)

    mtok = _ID_TOKEN_RE.search(text)
    if mtok:
        title = (text[: mtok.start()] + " " + text[mtok.end() :]).strip(" \t\n:,|-")
        title = " ".join(title.split())
        if title:
            return GenerationOutput(mtok.group(0), title, ParseStatus.RECOVERED)
    return _FAILED


# ---------------------------------------------------------------------------
# Template and prompt file IO


def save_template(template: PromptTemplate, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(
            {
                "task_description": template.task_description,
                "execution_requirements": list(template.execution_requirements),
                "format_indicator": template.format_indicator,
                "attribute_keys": list(template.attribute_keys),
                "max_tokens": template.max_tokens,
            },
            f,
            indent=2,
        )


def load_template(path) -> PromptTemplate:
    with open(path, "r", encoding="utf-8") as f:
        raw = json.load(f)
    return PromptTemplate(
        task_description=raw["task_description"],
        execution_requirements=tuple(raw["execution_requirements"]),
        format_indicator=raw["format_indicator"],
        attribute_keys=tuple(raw.get("attribute_keys", DEFAULT_ATTRIBUTE_KEYS)),
        max_tokens=int(raw.get("max_tokens", 1024)),
    )


def export_prompts(prompts, path) -> None:
    """Write prompts as JSONL for the fine-tuning service."""
    with open(path, "w", encoding="utf-8") as f:
        for p in prompts:
            row = {"instruction": p.instruction, "input": p.input, "response": p.response}
            if p.prompt_id is not None:
                row["prompt_id"] = p.prompt_id
            f.write(json.dumps(row) + "\n")


def load_prompts(path) -> list[Prompt]:
    prompts = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            raw = json.loads(line)
            text = raw["instruction"] + "\n" + raw["input"] + (
                "\n" + raw["response"] if raw.get("response") else ""
            )
            prompts.append(
                Prompt(
                    instruction=raw["instruction"],
                    input=raw["input"],
                    response=raw.get("response"),
                    token_count=count_tokens(text),
                    prompt_id=raw.get("prompt_id"),
                )
            )
    return prompts
