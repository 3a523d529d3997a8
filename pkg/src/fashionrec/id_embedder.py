"""Session-based next-item model; only its item embedding table survives as
the ID embedding space.

Sessions are encoded as the L2-normalized mean of their item embeddings
(mean pooling is the simplest consistent-representation variant, and keeps
gradients hand-derivable). Training minimizes mean cross-entropy of a
softmax over cos(session, item)/tau across the whole catalog. Search events
never enter contexts; purchases are the prediction targets.

The exported table includes a cold vector (the centroid of all trained item
embeddings) that unknown ids resolve to at inference, so retrieval stays
total on never-seen items.

Snapshot: the ``embedcore`` index layout for the rows plus a JSON sidecar
``<path>.meta.json`` with the cold vector and tau.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .corpus import Action, Catalog
from .embedcore import VectorIndex, load_index, save_index


class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class IdTrainConfig:
    d_id: int = 64
    tau: float = 0.07
    lr: float = 0.1  # 1e-2 is too slow to converge in 20 epochs at this scale
    epochs: int = 20
    batch: int = 128
    max_context: int = 8  # most recent item events used as context
    seed: int = 0


@dataclass
class ItemEmbeddingTable:
    item_ids: tuple[str, ...]
    matrix: np.ndarray  # (num_items, d_id)
    cold_vector: np.ndarray
    tau: float

    def __post_init__(self):
        self.index = {item_id: i for i, item_id in enumerate(self.item_ids)}

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[1])

    def vector(self, item_id: str) -> np.ndarray:
        """Row for a known id; the cold vector for anything unseen."""
        i = self.index.get(item_id)
        return self.matrix[i] if i is not None else self.cold_vector


def _safe_normalize(v: np.ndarray) -> np.ndarray:
    n = float(np.linalg.norm(v))
    if n < 1e-12:
        out = np.zeros_like(v)
        out[0] = 1.0
        return out
    return v / n


def session_encode(context, table: ItemEmbeddingTable) -> np.ndarray:
    """L2-normalized mean of the context items' embeddings (permutation
    invariant; unknown ids map to the cold vector)."""
    context = list(context)
    if not context:
        raise ValueError("context must be non-empty")
    mean = np.mean([table.vector(i) for i in context], axis=0)
    return _safe_normalize(mean)


def session_pairs(seqs, max_context: int | None = None):
    """(context item ids, purchase target) pairs from interaction sequences.
    Contexts are the prior item events (searches skipped), truncated to the
    most recent ``max_context`` when set."""
    pairs = []
    for seq in seqs:
        items_so_far: list[str] = []
        for ev in seq.events:
            if ev.is_search:
                continue
            if ev.action is Action.PURCHASE and items_so_far:
                ctx = items_so_far[-max_context:] if max_context else list(items_so_far)
                pairs.append((tuple(ctx), ev.payload))
            items_so_far.append(ev.payload)
    return pairs


def _forward(matrix: np.ndarray, contexts, target_rows, tau: float):
    ctx_means = np.stack(
        [matrix[list(ctx)].mean(axis=0) for ctx in contexts]
    )  # (B, d)
    ctx_norms = np.linalg.norm(ctx_means, axis=1, keepdims=True)
    sessions = ctx_means / np.maximum(ctx_norms, 1e-12)
    row_norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    unit_rows = matrix / np.maximum(row_norms, 1e-12)
    logits = sessions @ unit_rows.T / tau  # (B, M)
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    b = np.arange(len(contexts))
    loss = float(-np.mean(np.log(probs[b, target_rows])))
    return loss, (ctx_means, ctx_norms, sessions, unit_rows, row_norms, probs)


def loss_and_grads(matrix: np.ndarray, batch_rows, tau: float):
    """Mean softmax cross-entropy and its exact gradient w.r.t. the table.

    ``batch_rows``: list of (context row indices, target row index).
    """
    contexts = [ctx for ctx, _ in batch_rows]
    targets = np.array([t for _, t in batch_rows])
    loss, (ctx_means, ctx_norms, sessions, unit_rows, row_norms, probs) = _forward(
        matrix, contexts, targets, tau
    )
    B = len(contexts)
    d_logits = probs.copy()
    d_logits[np.arange(B), targets] -= 1.0
    d_logits /= B * tau

    grad = np.zeros_like(matrix)
    # through the normalized item rows present in every logit
    d_unit = d_logits.T @ sessions  # (M, d)
    grad += (d_unit - unit_rows * np.sum(d_unit * unit_rows, axis=1, keepdims=True)) / np.maximum(
        row_norms, 1e-12
    )
    # through the session means
    d_sessions = d_logits @ unit_rows  # (B, d)
    d_means = (
        d_sessions - sessions * np.sum(d_sessions * sessions, axis=1, keepdims=True)
    ) / np.maximum(ctx_norms, 1e-12)
    for i, ctx in enumerate(contexts):
        np.add.at(grad, list(ctx), d_means[i] / len(ctx))
    return loss, grad


def next_item_loss(batch, table: ItemEmbeddingTable, tau: float | None = None) -> float:
    """Mean cross-entropy of softmax over cos(session, item)/tau for
    (context item ids, target item id) examples."""
    if tau is None:
        tau = table.tau
    if tau <= 0:
        raise ValueError("tau must be > 0")
    batch = list(batch)
    contexts = [[table.index[i] for i in ctx] for ctx, _ in batch]
    targets = np.array([table.index[t] for _, t in batch])
    loss, _ = _forward(table.matrix, contexts, targets, tau)
    return loss


def train_id_model(
    seqs, catalog: Catalog, config: IdTrainConfig = IdTrainConfig()
) -> tuple[ItemEmbeddingTable, list[float]]:
    """SGD on the next-item loss; returns the table (with centroid cold
    vector) and the per-epoch mean-loss trace."""
    item_ids = tuple(it.item_id for it in catalog.items)
    row_of = {item_id: i for i, item_id in enumerate(item_ids)}
    pairs = session_pairs(seqs, max_context=config.max_context)
    pairs = [
        ([row_of[c] for c in ctx], row_of[target])
        for ctx, target in pairs
        if target in row_of and all(c in row_of for c in ctx)
    ]
    if not pairs:
        raise ValueError("no (context, purchase) training pairs in the sequences")

    rng = np.random.Generator(np.random.PCG64(config.seed))
    matrix = rng.normal(0.0, 0.1, size=(len(item_ids), config.d_id))

    trace = []
    for _ in range(config.epochs):
        order = rng.permutation(len(pairs))
        losses = []
        for start in range(0, len(pairs), config.batch):
            chunk = [pairs[i] for i in order[start : start + config.batch]]
            loss, grad = loss_and_grads(matrix, chunk, config.tau)
            if not np.isfinite(loss):
                raise DivergenceError(f"next-item loss became non-finite ({loss})")
            matrix -= config.lr * grad
            losses.append(loss)
        if not np.all(np.isfinite(matrix)):
            raise DivergenceError("item embeddings became non-finite")
        trace.append(float(np.mean(losses)))

    cold = matrix.mean(axis=0)
    return (
        ItemEmbeddingTable(item_ids=item_ids, matrix=matrix, cold_vector=cold, tau=config.tau),
        trace,
    )


def save_table(table: ItemEmbeddingTable, path) -> None:
    index = VectorIndex.build(zip(table.item_ids, table.matrix))
    save_index(index, path)
    with open(f"{path}.meta.json", "w", encoding="utf-8") as f:
        json.dump({"cold_vector": table.cold_vector.tolist(), "tau": table.tau}, f)


def load_table(path) -> ItemEmbeddingTable:
    index = load_index(path)
    with open(f"{path}.meta.json", "r", encoding="utf-8") as f:
        meta = json.load(f)
    return ItemEmbeddingTable(
        item_ids=index.keys,
        matrix=index.matrix,
        cold_vector=np.asarray(meta["cold_vector"], dtype=np.float64),
        tau=float(meta["tau"]),
    )
