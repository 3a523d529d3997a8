"""Title/query embedding model: a single-layer gated recurrent encoder over
token embeddings, trained with a triplet loss and in-batch hard negatives so
that items purchased under the same query land close in embedding space.

The trunk (token table + recurrent cell) is shared between queries and
titles; each side has its own output projection. Gate equations, which the
finite-difference tests pin down exactly:

    z_t = sigmoid(W_z x_t + U_z h_{t-1} + b_z)          update gate
    r_t = sigmoid(W_r x_t + U_r h_{t-1} + b_r)          reset gate
    c_t = tanh(W_c x_t + U_c (r_t * h_{t-1}) + b_c)     candidate
    h_t = (1 - z_t) * h_{t-1} + z_t * c_t

The final hidden state is projected per head and L2-normalized. Distances
are squared Euclidean on unit vectors (2 - 2 cos), so the triplet hinge is
monotone in cosine distance.

Snapshot: ``<path>`` is an npz of all weight arrays cast to little-endian
float32; ``<path>.vocab.json`` holds the token list (index order) and the
training config. Loss traces are written as two-column CSV (epoch, loss).
"""

from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass, asdict

import numpy as np


_TOKEN_SPLIT = re.compile(r"[^a-z0-9]+")
UNK = "<unk>"


class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]  # index order; tokens[0] is <unk>
    index: dict[str, int]

    @staticmethod
    def build(texts, max_size: int = 50_000) -> "Vocabulary":
        counts: dict[str, int] = {}
        for text in texts:
            for tok in _split_tokens(text):
                counts[tok] = counts.get(tok, 0) + 1
        ranked = sorted(counts, key=lambda t: (-counts[t], t))[: max_size - 1]
        tokens = (UNK, *ranked)
        return Vocabulary(tokens=tokens, index={t: i for i, t in enumerate(tokens)})

    @property
    def size(self) -> int:
        return len(self.tokens)

    @property
    def unk(self) -> int:
        return 0


def _split_tokens(text: str) -> list[str]:
    return [t for t in _TOKEN_SPLIT.split(text.lower()) if t]


def tokenize(text: str, vocab: Vocabulary) -> list[int]:
    """Lowercase, split on non-alphanumerics, map through the vocabulary
    (unknown tokens to <unk>); empty text maps to [<unk>]."""
    toks = _split_tokens(text)
    if not toks:
        return [vocab.unk]
    return [vocab.index.get(t, vocab.unk) for t in toks]


@dataclass(frozen=True)
class TrainConfig:
    d_tok: int = 64
    d_hidden: int = 128
    d_emb: int = 256
    margin: float = 0.5
    lr: float = 3e-3  # 1e-2 drives the summed loss toward embedding collapse
    epochs: int = 10
    batch: int = 32
    seed: int = 0


@dataclass
class EncoderParams:
    emb: np.ndarray  # (vocab, d_tok)
    w_z: np.ndarray
    w_r: np.ndarray
    w_c: np.ndarray  # (d_hidden, d_tok)
    u_z: np.ndarray
    u_r: np.ndarray
    u_c: np.ndarray  # (d_hidden, d_hidden)
    b_z: np.ndarray
    b_r: np.ndarray
    b_c: np.ndarray  # (d_hidden,)
    p_query: np.ndarray  # (d_emb, d_hidden)
    p_title: np.ndarray
    b_query: np.ndarray  # (d_emb,)
    b_title: np.ndarray

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    def check_finite(self) -> None:
        for name, a in self.arrays().items():
            if not np.all(np.isfinite(a)):
                raise DivergenceError(f"non-finite values in parameter {name!r}")


def init_params(vocab_size: int, config: TrainConfig, rng: np.random.Generator) -> EncoderParams:
    def mat(rows, cols, fan_in):
        return rng.uniform(-1.0, 1.0, size=(rows, cols)) / np.sqrt(fan_in)

    d_t, d_h, d_e = config.d_tok, config.d_hidden, config.d_emb
    return EncoderParams(
        emb=rng.normal(0.0, 0.1, size=(vocab_size, d_t)),
        w_z=mat(d_h, d_t, d_t), w_r=mat(d_h, d_t, d_t), w_c=mat(d_h, d_t, d_t),
        u_z=mat(d_h, d_h, d_h), u_r=mat(d_h, d_h, d_h), u_c=mat(d_h, d_h, d_h),
        b_z=np.zeros(d_h), b_r=np.zeros(d_h), b_c=np.zeros(d_h),
        p_query=mat(d_e, d_h, d_h), p_title=mat(d_e, d_h, d_h),
        b_query=np.zeros(d_e), b_title=np.zeros(d_e),
    )


def zero_grads(params: EncoderParams) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(a) for k, a in params.arrays().items()}


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _forward(text: str, params: EncoderParams, vocab: Vocabulary, head: str):
    idx = tokenize(text, vocab)
    d_h = params.b_z.shape[0]
    h = np.zeros(d_h)
    hs, zs, rs, cs = [h], [], [], []
    for i in idx:
        x = params.emb[i]
        z = _sigmoid(params.w_z @ x + params.u_z @ h + params.b_z)
        r = _sigmoid(params.w_r @ x + params.u_r @ h + params.b_r)
        c = np.tanh(params.w_c @ x + params.u_c @ (r * h) + params.b_c)
        h = (1.0 - z) * h + z * c
        hs.append(h)
        zs.append(z)
        rs.append(r)
        cs.append(c)
    proj, bias = (params.p_query, params.b_query) if head == "query" else (
        params.p_title, params.b_title)
    v = proj @ h + bias
    nv = float(np.linalg.norm(v))
    y = v / nv
    cache = {"idx": idx, "hs": hs, "zs": zs, "rs": rs, "cs": cs,
             "v": v, "nv": nv, "y": y, "head": head}
    return y, cache


def _backward(cache, dy, params: EncoderParams, grads: dict[str, np.ndarray]) -> None:
    y, nv = cache["y"], cache["nv"]
    dv = (dy - y * float(y @ dy)) / nv
    if cache["head"] == "query":
        proj, pname, bname = params.p_query, "p_query", "b_query"
    else:
        proj, pname, bname = params.p_title, "p_title", "b_title"
    h_last = cache["hs"][-1]
    grads[pname] += np.outer(dv, h_last)
    grads[bname] += dv
    dh = proj.T @ dv
    for t in range(len(cache["idx"]) - 1, -1, -1):
        z, r, c = cache["zs"][t], cache["rs"][t], cache["cs"][t]
        h_prev = cache["hs"][t]
        x = params.emb[cache["idx"][t]]
        da_z = dh * (c - h_prev) * z * (1.0 - z)
        da_c = dh * z * (1.0 - c * c)
        dh_prev = dh * (1.0 - z)
        drh = params.u_c.T @ da_c  # gradient into r * h_prev
        dr = drh * h_prev
        dh_prev = dh_prev + drh * r
        da_r = dr * r * (1.0 - r)
        grads["w_z"] += np.outer(da_z, x)
        grads["w_r"] += np.outer(da_r, x)
        grads["w_c"] += np.outer(da_c, x)
        grads["u_z"] += np.outer(da_z, h_prev)
        grads["u_r"] += np.outer(da_r, h_prev)
        grads["u_c"] += np.outer(da_c, r * h_prev)
        grads["b_z"] += da_z
        grads["b_r"] += da_r
        grads["b_c"] += da_c
        dx = params.w_z.T @ da_z + params.w_r.T @ da_r + params.w_c.T @ da_c
        grads["emb"][cache["idx"][t]] += dx
        dh = dh_prev + params.u_z.T @ da_z + params.u_r.T @ da_r


def encode(text: str, params: EncoderParams, vocab: Vocabulary, head: str = "title") -> np.ndarray:
    """L2-normalized embedding of a text under the given head."""
    y, _ = _forward(text, params, vocab, head)
    return y


def encode_query(text: str, params: EncoderParams, vocab: Vocabulary) -> np.ndarray:
    return encode(text, params, vocab, head="query")


def encode_title(text: str, params: EncoderParams, vocab: Vocabulary) -> np.ndarray:
    return encode(text, params, vocab, head="title")


@dataclass(frozen=True)
class Triplet:
    anchor: str  # query text
    positive: str  # title text
    negative_title: str  # hardest non-matching title for the anchor
    negative_query: str  # hardest non-matching query for the positive


def sq_dist(a: np.ndarray, b: np.ndarray) -> float:
    d = a - b
    return float(d @ d)


def triplet_loss(anchor, positive, negative, margin: float) -> float:
    """Hinge max(0, d(a,p) - d(a,n) + margin), d = squared Euclidean."""
    return max(0.0, sq_dist(anchor, positive) - sq_dist(anchor, negative) + margin)


def mine_hard_negatives(batch, params: EncoderParams, vocab: Vocabulary) -> list[Triplet]:
    """For each (query, title) pair, pick the closest non-matching title for
    the query and the closest non-matching query for the title, within the
    batch. Ties resolve to the lowest index. Pairs for which every candidate
    is a positive match are skipped."""
    batch = list(batch)
    if len(batch) < 2:
        raise ValueError("hard-negative mining needs a batch of >= 2 pairs")
    queries = [q for q, _ in batch]
    titles = [t for _, t in batch]
    positives = set(batch)
    q_emb = {}
    t_emb = {}
    for q in queries:
        if q not in q_emb:
            q_emb[q] = encode(q, params, vocab, head="query")
    for t in titles:
        if t not in t_emb:
            t_emb[t] = encode(t, params, vocab, head="title")

    triplets = []
    for q, t in batch:
        best_t, best_t_sim = None, -np.inf
        for j, cand in enumerate(titles):
            if (q, cand) in positives:
                continue
            sim = float(q_emb[q] @ t_emb[cand])
            if sim > best_t_sim:
                best_t, best_t_sim = cand, sim
        best_q, best_q_sim = None, -np.inf
        for j, cand in enumerate(queries):
            if (cand, t) in positives:
                continue
            sim = float(t_emb[t] @ q_emb[cand])
            if sim > best_q_sim:
                best_q, best_q_sim = cand, sim
        if best_t is None or best_q is None:
            continue
        triplets.append(Triplet(anchor=q, positive=t, negative_title=best_t,
                                negative_query=best_q))
    return triplets


def loss_and_grads(
    params: EncoderParams,
    vocab: Vocabulary,
    triplets,
    margin: float,
) -> tuple[float, dict[str, np.ndarray]]:
    """Summed triplet loss over fixed triplets (both negatives each) and its
    exact gradients; the unit the finite-difference checks verify."""
    caches: dict[tuple[str, str], tuple[np.ndarray, dict]] = {}
    dys: dict[tuple[str, str], np.ndarray] = {}

    def emb_of(role: str, text: str) -> np.ndarray:
        key = (role, text)
        if key not in caches:
            caches[key] = _forward(text, params, vocab, head=role)
            dys[key] = np.zeros_like(caches[key][0])
        return caches[key][0]

    total = 0.0
    for tr in triplets:
        a = emb_of("query", tr.anchor)
        p = emb_of("title", tr.positive)
        for role, neg_text in (("title", tr.negative_title), ("query", tr.negative_query)):
            n = emb_of(role, neg_text)
            hinge = sq_dist(a, p) - sq_dist(a, n) + margin
            if hinge <= 0.0:
                continue
            total += hinge
            dys[("query", tr.anchor)] += 2.0 * (n - p)
            dys[("title", tr.positive)] += 2.0 * (p - a)
            dys[(role, neg_text)] += 2.0 * (a - n)

    grads = zero_grads(params)
    for key, (_, cache) in caches.items():
        if np.any(dys[key]):
            _backward(cache, dys[key], params, grads)
    return total, grads


@dataclass
class TitleEncoderModel:
    params: EncoderParams
    vocab: Vocabulary
    config: TrainConfig

    def encode_query(self, text: str) -> np.ndarray:
        return encode(text, self.params, self.vocab, head="query")

    def encode_title(self, text: str) -> np.ndarray:
        return encode(text, self.params, self.vocab, head="title")


def train(pairs, config: TrainConfig = TrainConfig()) -> tuple[TitleEncoderModel, list[float]]:
    """Mini-batch SGD on the summed triplet loss with in-batch hard negatives.

    ``pairs`` are (query, purchased title) tuples. Deterministic under
    config.seed; returns the model and per-epoch loss trace. Aborts with
    DivergenceError if the loss or parameters go non-finite.
    """
    pairs = list(pairs)
    if len(set(pairs)) < 2:
        raise ValueError("training needs at least 2 distinct (query, title) pairs")
    vocab = Vocabulary.build([q for q, _ in pairs] + [t for _, t in pairs])
    rng = np.random.Generator(np.random.PCG64(config.seed))
    params = init_params(vocab.size, config, rng)

    trace = []
    for _ in range(config.epochs):
        order = rng.permutation(len(pairs))
        epoch_loss = 0.0
        for start in range(0, len(pairs), config.batch):
            chunk = [pairs[i] for i in order[start : start + config.batch]]
            if len(chunk) < 2:
                continue
            triplets = mine_hard_negatives(chunk, params, vocab)
            if not triplets:
                continue
            loss, grads = loss_and_grads(params, vocab, triplets, config.margin)
            if not np.isfinite(loss):
                raise DivergenceError(f"loss became non-finite ({loss})")
            epoch_loss += loss
            for name, g in grads.items():
                getattr(params, name)[...] -= config.lr * g
        params.check_finite()
        trace.append(epoch_loss)
    return TitleEncoderModel(params=params, vocab=vocab, config=config), trace


# ---------------------------------------------------------------------------
# Snapshots


def save_model(model: TitleEncoderModel, path) -> None:
    arrays = {k: a.astype("<f4") for k, a in model.params.arrays().items()}
    np.savez(path, **arrays)
    with open(f"{path}.vocab.json", "w", encoding="utf-8") as f:
        json.dump({"tokens": list(model.vocab.tokens), "config": asdict(model.config)}, f)


def load_model(path) -> TitleEncoderModel:
    with np.load(path if str(path).endswith(".npz") else f"{path}.npz") as data:
        arrays = {k: data[k].astype(np.float64) for k in data.files}
    with open(f"{path}.vocab.json", "r", encoding="utf-8") as f:
        sidecar = json.load(f)
    tokens = tuple(sidecar["tokens"])
    vocab = Vocabulary(tokens=tokens, index={t: i for i, t in enumerate(tokens)})
    return TitleEncoderModel(
        params=EncoderParams(**arrays),
        vocab=vocab,
        config=TrainConfig(**sidecar["config"]),
    )


def save_loss_trace(trace, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "loss"])
        for i, loss in enumerate(trace, start=1):
            writer.writerow([i, f"{loss:.10g}"])
