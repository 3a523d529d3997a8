"""Ranking metrics (single-relevant-item Recall@N, NDCG@N, MRR) and the
evaluation drivers for leave-one-out, cold-start, zero-shot, and low-resource
settings.

MRR is computed over the full returned list (not truncated at N); the
pipeline only ever returns K items, so an absent truth scores 0 everywhere.
"""

from __future__ import annotations

import hashlib
import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

from .corpus import DatasetSplit
from .retrieval import Pipeline, RankedList


@dataclass(frozen=True)
class EvalResult:
    recall_at_n: float
    ndcg_at_n: float
    mrr: float
    n: int
    count: int
    drop_count: int = 0


def _ids(ranked) -> list[str]:
    if isinstance(ranked, RankedList):
        return ranked.ids()
    return list(ranked)


def _rank_of(ranked, truth: str) -> int | None:
    ids = _ids(ranked)
    try:
        return ids.index(truth) + 1
    except ValueError:
        return None


def recall_at(ranked, truth: str, n: int) -> int:
    """1 iff the truth appears within the first n entries."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rank = _rank_of(ranked, truth)
    return 1 if rank is not None and rank <= n else 0


def ndcg_at(ranked, truth: str, n: int) -> float:
    """1/log2(rank+1) when truth ranks within n, else 0 (ideal DCG is 1)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rank = _rank_of(ranked, truth)
    if rank is None or rank > n:
        return 0.0
    return 1.0 / math.log2(rank + 1)


def mrr(ranked, truth: str) -> float:
    """Reciprocal rank over the full returned list, 0 when absent."""
    rank = _rank_of(ranked, truth)
    return 0.0 if rank is None else 1.0 / rank


def evaluate_run(records, n: int = 10, drop_count: int = 0) -> EvalResult:
    """Arithmetic mean of per-pair metrics over run records (dicts with
    ``ranked`` id lists and ``truth``)."""
    records = list(records)
    if not records:
        raise ValueError("cannot evaluate an empty run")
    r_sum = g_sum = m_sum = 0.0
    for rec in records:
        ranked, truth = rec["ranked"], rec["truth"]
        r_sum += recall_at(ranked, truth, n)
        g_sum += ndcg_at(ranked, truth, n)
        m_sum += mrr(ranked, truth)
    c = len(records)
    return EvalResult(
        recall_at_n=r_sum / c, ndcg_at_n=g_sum / c, mrr=m_sum / c,
        n=n, count=c, drop_count=drop_count,
    )


def run_pipeline(pipeline: Pipeline, split: DatasetSplit, jobs: int = 1) -> list[dict]:
    """Recommend for every test pair; returns run records in test order.
    All pipeline state is frozen, so pairs may fan out to worker threads."""

    def one(pair):
        result = pipeline.recommend(pair.history, prompt_id=pair.user_id)
        return {
            "user_id": pair.user_id,
            "truth": pair.truth,
            "ranked": list(result.ranked.ids()),
            "parse_status": result.parse_status.value,
            "sources": {"id": list(result.id_ids), "title": list(result.title_ids)},
        }

    if jobs <= 1:
        return [one(p) for p in split.test]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(one, split.test))


def evaluate_setting(
    pipeline: Pipeline, split: DatasetSplit, n: int = 10, jobs: int = 1
) -> tuple[EvalResult, list[dict]]:
    records = run_pipeline(pipeline, split, jobs=jobs)
    return evaluate_run(records, n=n, drop_count=split.meta.drop_count), records


def zero_shot_eval(
    pipeline: Pipeline,
    split: DatasetSplit,
    source_category: str,
    target_category: str,
    n: int = 10,
    jobs: int = 1,
) -> tuple[EvalResult, list[dict]]:
    """Evaluate a pipeline carrying a foreign-category title encoder on this
    split. The ID path does not transfer across categories and is forced off
    (title-only); requesting it anyway only earns a notice."""
    if source_category == target_category:
        warnings.warn(
            f"zero-shot evaluation with identical categories ({source_category})", stacklevel=2
        )
    if pipeline.id_table is not None:
        warnings.warn("zero-shot forces the ID path off (title-only retrieval)", stacklevel=2)
        pipeline = replace(pipeline, id_table=None)
    return evaluate_setting(pipeline, split, n=n, jobs=jobs)


def config_hash(config: dict) -> str:
    """Stable hash of a JSON-serializable config mapping."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def make_report(
    setting: str, category: str, result: EvalResult, cfg_hash: str
) -> dict:
    return {
        "setting": setting,
        "category": category,
        "n": result.n,
        "recall": result.recall_at_n,
        "ndcg": result.ndcg_at_n,
        "mrr": result.mrr,
        "count": result.count,
        "drops": result.drop_count,
        "config_hash": cfg_hash,
    }


def write_report(report: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report, f, sort_keys=True, indent=2)
        f.write("\n")


def format_report_table(report: dict) -> str:
    """Human-readable summary for standard output."""
    header = f"{'setting':<14} {'category':<12} {'N':>3} {'Recall':>8} {'NDCG':>8} {'MRR':>8} {'count':>6} {'drops':>6}"
    row = (
        f"{report['setting']:<14} {report['category']:<12} {report['n']:>3} "
        f"{report['recall']:>8.4f} {report['ndcg']:>8.4f} {report['mrr']:>8.4f} "
        f"{report['count']:>6} {report['drops']:>6}"
    )
    return header + "\n" + row
