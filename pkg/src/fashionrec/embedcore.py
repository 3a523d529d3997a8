"""Shared embedding primitives: vectors, cosine similarity, a deterministic
baseline text encoder, and exact nearest-neighbor search.

Vectors are plain 1-D numpy arrays (float64 in memory). A ``VectorIndex``
stores unique string keys plus a row matrix; entries are kept sorted by key
so that stable sorting on similarity yields the documented tie rule
(ties broken by ascending key) for free.

Index snapshot byte layout (little-endian throughout):

    offset  size         field
    0       8            magic ``b"EMBIDX01"``
    8       4            uint32 dim
    12      4            uint32 count
    16      ...          per entry, in key order:
                             uint32 key byte length
                             key bytes (utf-8)
                             dim * float32 vector values
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

_MAGIC = b"EMBIDX01"


class DimensionMismatchError(ValueError):
    pass


class ZeroVectorError(ValueError):
    pass


def as_vector(values, dim: int | None = None) -> np.ndarray:
    """Coerce to a finite 1-D float64 array, optionally checking dim."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"expected 1-D vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector contains non-finite entries")
    if dim is not None and v.shape[0] != dim:
        raise DimensionMismatchError(f"expected dim {dim}, got {v.shape[0]}")
    return v


def l2_normalize(v: np.ndarray) -> np.ndarray:
    n = float(np.linalg.norm(v))
    if n == 0.0:
        raise ZeroVectorError("cannot normalize the zero vector")
    return v / n


def cosine_similarity(a, b) -> float:
    """Cosine similarity dot(a,b)/(|a||b|), in [-1, 1]."""
    a = as_vector(a)
    b = as_vector(b, dim=a.shape[0])
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ZeroVectorError("cosine similarity undefined for zero vectors")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def _sign_pattern(token: str, dim: int, seed: int) -> np.ndarray:
    """Deterministic +-1 pattern for one hashed token, from blake2b bits."""
    need = (dim + 7) // 8
    out = bytearray()
    counter = 0
    while len(out) < need:
        h = hashlib.blake2b(
            token.encode("utf-8"),
            digest_size=64,
            salt=struct.pack("<QQ", seed & 0xFFFFFFFFFFFFFFFF, counter)[:16],
        )
        out.extend(h.digest())
        counter += 1
    bits = np.unpackbits(np.frombuffer(bytes(out[:need]), dtype=np.uint8))[:dim]
    return bits.astype(np.float64) * 2.0 - 1.0


def baseline_encode(text: str, dim: int = 256, seed: int = 0) -> np.ndarray:
    """Deterministic text encoder: hashed character-3-gram bag projected by a
    seeded random sign matrix, L2-normalized.

    Stands in for an external query encoder; only (text, dim, seed) matter,
    never process state, so vectors are reproducible across runs/platforms.
    """
    if dim < 8:
        raise ValueError("dim must be >= 8")
    s = " ".join(text.lower().split())
    grams = [s[i : i + 3] for i in range(len(s) - 2)] if len(s) >= 3 else [s]
    v = np.zeros(dim, dtype=np.float64)
    for g in grams:
        v += _sign_pattern(g, dim, seed)
    if not np.any(v):
        # degenerate texts (empty, or all grams cancel) fall back to a
        # fixed direction so the result is still unit-norm
        v = _sign_pattern("\x00empty", dim, seed)
    return l2_normalize(v)


@dataclass(frozen=True)
class VectorIndex:
    """Immutable exact-search index: unique keys + row matrix, key-sorted."""

    keys: tuple[str, ...]
    matrix: np.ndarray  # (count, dim) float64
    norms: np.ndarray = field(repr=False, default=None)  # type: ignore[assignment]

    @staticmethod
    def build(entries) -> "VectorIndex":
        """Build from an iterable of (key, vector). Keys must be unique."""
        items = sorted(entries, key=lambda kv: kv[0])
        if not items:
            raise ValueError("cannot build an empty index")
        keys = tuple(k for k, _ in items)
        if len(set(keys)) != len(keys):
            dupes = sorted({k for k in keys if keys.count(k) > 1})
            raise ValueError(f"duplicate keys in index: {dupes[:5]}")
        dim = as_vector(items[0][1]).shape[0]
        matrix = np.stack([as_vector(v, dim=dim) for _, v in items])
        norms = np.linalg.norm(matrix, axis=1)
        if np.any(norms == 0.0):
            raise ZeroVectorError("index entries must be non-zero vectors")
        return VectorIndex(keys=keys, matrix=matrix, norms=norms)

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[1])

    def __len__(self) -> int:
        return len(self.keys)

    def vector(self, key: str) -> np.ndarray:
        return self.matrix[self.keys.index(key)]


def nn_search(index: VectorIndex, query, k: int) -> list[tuple[str, float]]:
    """Exact top-k entries by cosine similarity, descending.

    Ties broken by ascending key; this is exact brute force, the reference
    search everything else is checked against.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    q = as_vector(query, dim=index.dim)
    qn = float(np.linalg.norm(q))
    if qn == 0.0:
        raise ZeroVectorError("query must be non-zero")
    sims = (index.matrix @ q) / (index.norms * qn)
    # entries are key-sorted, so a stable sort on -sims breaks ties by key
    order = np.argsort(-sims, kind="stable")[:k]
    return [(index.keys[i], float(sims[i])) for i in order]


def save_index(index: VectorIndex, path) -> None:
    """Write the documented binary snapshot (float32 values)."""
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<II", index.dim, len(index)))
        for key, row in zip(index.keys, index.matrix):
            kb = key.encode("utf-8")
            f.write(struct.pack("<I", len(kb)))
            f.write(kb)
            f.write(row.astype("<f4").tobytes())


def load_index(path) -> VectorIndex:
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != _MAGIC:
            raise ValueError(f"not an index snapshot (bad magic {magic!r})")
        dim, count = struct.unpack("<II", f.read(8))
        entries = []
        for _ in range(count):
            (klen,) = struct.unpack("<I", f.read(4))
            key = f.read(klen).decode("utf-8")
            vec = np.frombuffer(f.read(4 * dim), dtype="<f4").astype(np.float64)
            entries.append((key, vec))
    return VectorIndex.build(entries)
