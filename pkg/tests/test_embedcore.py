import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fashionrec.embedcore import (
    DimensionMismatchError,
    VectorIndex,
    ZeroVectorError,
    baseline_encode,
    cosine_similarity,
    load_index,
    nn_search,
    save_index,
)


class TestCosine:
    def test_identical(self):
        assert cosine_similarity([1.0, 0.0], [1.0, 0.0]) == pytest.approx(1.0)

    def test_orthogonal(self):
        assert cosine_similarity([1.0, 0.0], [0.0, 1.0]) == pytest.approx(0.0)

    def test_formula(self):
        # dot((1,1),(1,0)) / (sqrt(2)*1) = 1/sqrt(2)
        assert cosine_similarity([1.0, 1.0], [1.0, 0.0]) == pytest.approx(
            1.0 / math.sqrt(2.0), abs=1e-6
        )

    def test_dim_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            cosine_similarity([1.0, 0.0], [1.0, 0.0, 0.0])

    def test_zero_vector(self):
        with pytest.raises(ZeroVectorError):
            cosine_similarity([0.0, 0.0], [1.0, 0.0])

    @given(
        st.lists(st.one_of(st.just(0.0), st.floats(1e-3, 10), st.floats(-10, -1e-3)),
                 min_size=3, max_size=3),
        st.lists(st.one_of(st.just(0.0), st.floats(1e-3, 10), st.floats(-10, -1e-3)),
                 min_size=3, max_size=3),
        st.floats(0.1, 50.0),
    )
    @settings(max_examples=100, deadline=None)
    def test_symmetric_and_scale_invariant(self, a, b, alpha):
        if not any(a) or not any(b):
            return
        assert cosine_similarity(a, b) == pytest.approx(cosine_similarity(b, a), abs=1e-12)
        scaled = [alpha * x for x in a]
        assert cosine_similarity(scaled, b) == pytest.approx(
            cosine_similarity(a, b), abs=1e-12
        )


class TestBaselineEncode:
    def test_deterministic(self):
        a = baseline_encode("red dress")
        b = baseline_encode("red dress")
        np.testing.assert_array_equal(a, b)

    def test_unit_norm(self):
        for text in ("red dress", "", "a", "x y z w"):
            assert np.linalg.norm(baseline_encode(text)) == pytest.approx(1.0, abs=1e-9)

    def test_ngram_similarity_order(self):
        base = baseline_encode("red dress", dim=256)
        near = baseline_encode("red dresses", dim=256)
        far = baseline_encode("usb cable", dim=256)
        assert cosine_similarity(base, near) > cosine_similarity(base, far)

    def test_seed_changes_vector(self):
        a = baseline_encode("red dress", seed=0)
        b = baseline_encode("red dress", seed=1)
        assert not np.allclose(a, b)

    def test_min_dim(self):
        with pytest.raises(ValueError):
            baseline_encode("x", dim=4)


class TestNNSearch:
    def test_basic(self):
        idx = VectorIndex.build([("a", [1.0, 0.0]), ("b", [0.0, 1.0])])
        assert nn_search(idx, [1.0, 0.0], k=1) == [("a", pytest.approx(1.0))]

    def test_k_larger_than_index(self):
        idx = VectorIndex.build([("a", [1.0, 0.0]), ("b", [0.0, 1.0])])
        hits = nn_search(idx, [2.0, 1.0], k=10)
        assert [k for k, _ in hits] == ["a", "b"]

    def test_tie_broken_by_key(self):
        idx = VectorIndex.build(
            [("z", [1.0, 0.0]), ("a", [1.0, 0.0]), ("m", [0.0, 1.0])]
        )
        hits = nn_search(idx, [1.0, 0.0], k=2)
        assert [k for k, _ in hits] == ["a", "z"]

    def test_insertion_order_invariant(self):
        entries = [("a", [1.0, 0.2]), ("b", [0.5, 0.5]), ("c", [0.1, 0.9])]
        idx1 = VectorIndex.build(entries)
        idx2 = VectorIndex.build(reversed(entries))
        q = [0.7, 0.3]
        assert nn_search(idx1, q, k=3) == nn_search(idx2, q, k=3)

    def test_matches_brute_force(self):
        rng = np.random.Generator(np.random.PCG64(5))
        entries = [(f"k{i:04d}", rng.normal(size=16)) for i in range(1000)]
        idx = VectorIndex.build(entries)
        by_key = dict(entries)
        for _ in range(20):
            q = rng.normal(size=16)
            hits = nn_search(idx, q, k=10)
            brute = sorted(
                ((cosine_similarity(v, q), k) for k, v in by_key.items()),
                key=lambda sk: (-sk[0], sk[1]),
            )[:10]
            assert [k for k, _ in hits] == [k for _, k in brute]

    def test_sorted_non_increasing(self):
        rng = np.random.Generator(np.random.PCG64(8))
        idx = VectorIndex.build([(f"k{i}", rng.normal(size=8)) for i in range(50)])
        hits = nn_search(idx, rng.normal(size=8), k=50)
        sims = [s for _, s in hits]
        assert all(a >= b - 1e-15 for a, b in zip(sims, sims[1:]))

    def test_duplicate_keys_rejected(self):
        with pytest.raises(ValueError, match="duplicate"):
            VectorIndex.build([("a", [1.0, 0.0]), ("a", [0.0, 1.0])])

    def test_dim_mismatch(self):
        idx = VectorIndex.build([("a", [1.0, 0.0])])
        with pytest.raises(DimensionMismatchError):
            nn_search(idx, [1.0, 0.0, 0.0], k=1)


class TestSnapshot:
    def test_round_trip(self, tmp_path):
        rng = np.random.Generator(np.random.PCG64(2))
        idx = VectorIndex.build([(f"key-{i}", rng.normal(size=12)) for i in range(30)])
        path = tmp_path / "index.bin"
        save_index(idx, path)
        loaded = load_index(path)
        assert loaded.keys == idx.keys
        np.testing.assert_allclose(loaded.matrix, idx.matrix, atol=1e-6)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"NOTANIDX" + b"\x00" * 16)
        with pytest.raises(ValueError, match="magic"):
            load_index(path)

    def test_same_bytes_twice(self, tmp_path):
        idx = VectorIndex.build([("a", [0.5, 0.25]), ("b", [1.0, -1.0])])
        p1, p2 = tmp_path / "one.bin", tmp_path / "two.bin"
        save_index(idx, p1)
        save_index(idx, p2)
        assert p1.read_bytes() == p2.read_bytes()
