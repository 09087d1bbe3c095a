import numpy as np
import pytest
from hypothesis import given, strategies as st

from bsig3d.errors import ParameterError
from bsig3d.matching import (
    MatchCandidate,
    brute_force_match,
    build_forest,
    hamming,
    hamming_matrix,
    measure_search_precision,
    search,
    search_batch,
)
from bsig3d.signature import BinarySignature, signature_length_bits


def random_words(rng, count, words):
    return rng.integers(0, 2**63, size=(count, words), dtype=np.uint64) * np.uint64(2) + rng.integers(
        0, 2, size=(count, words), dtype=np.uint64
    )


def clustered_words(rng, count, words, centres=20, flips=0.1):
    """Descriptors scattered around a few random centres."""
    bits = words * 64
    base = rng.integers(0, 2, size=(centres, bits), dtype=np.uint8)
    pick = rng.integers(0, centres, size=count)
    noise = (rng.random((count, bits)) < flips).astype(np.uint8)
    packed = np.packbits(base[pick] ^ noise, axis=1, bitorder="little")
    return packed.view("<u8").astype(np.uint64)


def bit_loop_hamming(a, b):
    count = 0
    for x, y in zip(a.tolist(), b.tolist()):
        for i in range(64):
            count += ((x >> i) & 1) != ((y >> i) & 1)
    return count


def loop_knn(queries, targets, k):
    out = []
    for qi, q in enumerate(queries):
        scored = [(bit_loop_hamming(q, t), ti) for ti, t in enumerate(targets)]
        scored.sort()
        out.append([MatchCandidate(qi, ti, d) for d, ti in scored[:k]])
    return out


def forest_leaves(forest):
    return [forest.leaves(t) for t in range(len(forest.trees))]


class TestHamming:
    def test_identical(self, rng):
        sig = BinarySignature.from_bits(0, 32, rng.integers(0, 2, 1488))
        assert hamming(sig, sig) == 0

    def test_all_differ(self):
        # N=3 gives a 9-bit payload; N=4 gives 18 bits
        payload, _ = signature_length_bits(4)
        a = BinarySignature.from_bits(0, 4, np.zeros(payload))
        b = BinarySignature.from_bits(0, 4, np.ones(payload))
        assert hamming(a, b) == payload == 18

    def test_length_mismatch(self, rng):
        a = BinarySignature.from_bits(0, 4, np.zeros(18))
        b = BinarySignature.from_bits(0, 32, np.zeros(1488))
        with pytest.raises(ParameterError):
            hamming(a, b)

    @given(seed=st.integers(0, 2**31), words=st.integers(1, 12))
    def test_bit_loop_oracle(self, seed, words):
        r = np.random.default_rng(seed)
        a, b = random_words(r, 2, words)
        assert hamming(a, b) == bit_loop_hamming(a, b)

    @given(seed=st.integers(0, 2**31), words=st.integers(1, 8))
    def test_metric(self, seed, words):
        r = np.random.default_rng(seed)
        a, b, c = random_words(r, 3, words)
        assert hamming(a, a) == 0
        assert (hamming(a, b) == 0) == np.array_equal(a, b)
        assert hamming(a, b) == hamming(b, a)
        assert hamming(a, c) <= hamming(a, b) + hamming(b, c)

    def test_matrix_matches_pairs(self, rng):
        q, t = random_words(rng, 5, 3), random_words(rng, 7, 3)
        m = hamming_matrix(q, t)
        assert m.tolist() == [[hamming(a, b) for b in t] for a in q]


class TestBruteForce:
    def test_self_match(self, rng):
        t = random_words(rng, 50, 4)
        res = brute_force_match(t[17], t, 1)
        assert res[0] == [MatchCandidate(0, 17, 0)]

    def test_full_ranking(self, rng):
        t = random_words(rng, 30, 2)
        res = brute_force_match(t[:3], t, 30)
        for row in res:
            assert sorted(m.target_id for m in row) == list(range(30))
            assert [(m.distance, m.target_id) for m in row] == sorted((m.distance, m.target_id) for m in row)

    @given(seed=st.integers(0, 2**31), k=st.integers(1, 6), dup=st.booleans())
    def test_loop_oracle(self, seed, k, dup):
        r = np.random.default_rng(seed)
        t = random_words(r, 25, 1)
        if dup:
            t[5] = t[2]
            t[9] = t[2]
        q = np.vstack([random_words(r, 3, 1), t[2:3]])
        assert brute_force_match(q, t, k) == loop_knn(q, t, k)

    def test_errors(self, rng):
        with pytest.raises(ParameterError):
            brute_force_match(random_words(rng, 2, 1), np.empty((0, 1), np.uint64))
        with pytest.raises(ParameterError):
            brute_force_match(random_words(rng, 2, 1), random_words(rng, 2, 1), k=0)


class TestForest:
    def test_small_set_single_leaf(self, rng):
        forest = build_forest(random_words(rng, 100, 4))
        for leaves in forest_leaves(forest):
            assert len(leaves) == 1 and sorted(leaves[0].tolist()) == list(range(100))

    def test_partition(self, rng):
        forest = build_forest(random_words(rng, 1000, 24), trees=3, branching=16, max_leaf=150)
        for leaves in forest_leaves(forest):
            assert all(len(leaf) < 150 for leaf in leaves)
            ids = np.concatenate(leaves)
            assert sorted(ids.tolist()) == list(range(1000))

    def test_duplicates_still_split(self):
        data = np.zeros((500, 2), dtype=np.uint64)
        forest = build_forest(data, max_leaf=50)
        for leaves in forest_leaves(forest):
            assert all(len(leaf) < 50 for leaf in leaves)
            assert sorted(np.concatenate(leaves).tolist()) == list(range(500))

    def test_seeded(self, rng):
        data = random_words(rng, 800, 4)
        a = [[l.tolist() for l in t] for t in forest_leaves(build_forest(data, seed=5))]
        b = [[l.tolist() for l in t] for t in forest_leaves(build_forest(data, seed=5))]
        c = [[l.tolist() for l in t] for t in forest_leaves(build_forest(data, seed=6))]
        assert a == b and a != c

    def test_trees_differ(self, rng):
        forest = build_forest(random_words(rng, 800, 4))
        t = [[l.tolist() for l in leaves] for leaves in forest_leaves(forest)]
        assert t[0] != t[1]

    @pytest.mark.parametrize("count", [0, 1])
    def test_tiny(self, rng, count):
        forest = build_forest(random_words(rng, count, 2))
        assert len(forest.trees) == 3 and all(t.is_leaf for t in forest.trees)

    @pytest.mark.parametrize("kwargs", [dict(trees=0), dict(branching=1), dict(branching=16, max_leaf=8)])
    def test_parameter_errors(self, rng, kwargs):
        with pytest.raises(ParameterError):
            build_forest(random_words(rng, 10, 1), **kwargs)


class TestSearch:
    @given(seed=st.integers(0, 2**31), k=st.integers(1, 5), clustered=st.booleans())
    def test_full_checks_equal_brute_force(self, seed, k, clustered):
        r = np.random.default_rng(seed)
        count = int(r.integers(k, 1200))
        data = clustered_words(r, count, 2) if clustered else random_words(r, count, 2)
        forest = build_forest(data, branching=int(r.integers(2, 17)), max_leaf=int(r.integers(16, 150)), seed=seed)
        queries = np.vstack([random_words(r, 3, 2), data[:2]])
        got, checks = search_batch(forest, queries, k, max_checks=count)
        assert got == brute_force_match(queries, data, k)
        assert checks == count * len(queries)

    def test_exact_self(self, rng):
        data = random_words(rng, 2000, 4)
        forest = build_forest(data)
        res, _ = search(forest, data[123], 1)
        assert res[0].distance == 0 and res[0].target_id == 123

    def test_early_stop(self, rng):
        data = clustered_words(rng, 3000, 4)
        forest = build_forest(data, max_leaf=150)
        for q in data[:20]:
            res, checks = search(forest, q, k=1, max_checks=1)
            assert len(res) == 1
            assert 1 <= checks < 150

    def test_empty(self):
        forest = build_forest(np.empty((0, 2), np.uint64))
        assert search(forest, np.zeros(2, np.uint64), 1) == ([], 0)

    def test_errors(self, rng):
        forest = build_forest(random_words(rng, 50, 2))
        with pytest.raises(ParameterError):
            search(forest, random_words(rng, 1, 2), k=3, max_checks=2)
        with pytest.raises(ParameterError):
            search(forest, random_words(rng, 1, 3), k=1)

    def test_precision_bounds_and_full(self, rng):
        data = clustered_words(rng, 2000, 4, centres=5)
        forest = build_forest(data)
        queries = clustered_words(rng, 30, 4, centres=5)
        assert measure_search_precision(forest, queries, 1, 2000) == 1.0
        p = measure_search_precision(forest, queries, 2, 2)
        assert 0.0 <= p <= 1.0

    def test_precision_trend(self):
        low, high = [], []
        for seed in range(50):
            r = np.random.default_rng(seed)
            data = clustered_words(r, 1500, 2, centres=30, flips=0.15)
            queries = clustered_words(r, 10, 2, centres=30, flips=0.15)
            forest = build_forest(data, seed=seed)
            low.append(measure_search_precision(forest, queries, 1, 40))
            high.append(measure_search_precision(forest, queries, 1, 160))
        assert np.mean(low) <= np.mean(high)
