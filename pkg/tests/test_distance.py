import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from personclust.distance import (
    BLOCK,
    cosine_distance,
    first_neighbors,
    knn,
    pairwise_distances,
    ratio_distinctive,
)

from builders import unit

finite = st.floats(-1, 1, allow_nan=False)


def unit_rows(n, d, seed):
    m = np.random.default_rng(seed).standard_normal((n, d))
    return m / np.linalg.norm(m, axis=1, keepdims=True)


class TestCosine:
    def test_examples(self):
        a = unit(0.2, 0.7, 0.1)
        assert cosine_distance(a, a) == pytest.approx(0.0, abs=1e-15)
        assert cosine_distance(unit(1, 0), unit(0, 1)) == 1.0
        assert cosine_distance(unit(1, 0), unit(-1, 0)) == 2.0

    def test_incompatible(self):
        with pytest.raises(ValueError, match="incompatible embeddings"):
            cosine_distance(unit(1, 0), unit(1, 0, 0))

    @given(arrays(float, 5, elements=finite), arrays(float, 5, elements=finite))
    def test_symmetric(self, a, b):
        if np.linalg.norm(a) < 1e-3 or np.linalg.norm(b) < 1e-3:
            return
        a, b = a / np.linalg.norm(a), b / np.linalg.norm(b)
        assert cosine_distance(a, b) == cosine_distance(b, a)
        assert -1e-12 <= cosine_distance(a, b) <= 2 + 1e-12


class TestKnn:
    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 200), st.integers(1, 6), st.integers(0, 10_000), st.integers(1, 5))
    def test_matches_full_sort(self, n, d, seed, k):
        m = unit_rows(n + 1, d, seed)
        ids = list(range(100, 100 + n))
        nl = knn(7, m[0], ids, m[1:], k)
        brute = sorted((1.0 - float(m[0] @ m[1 + i]), ids[i]) for i in range(n))[:k]
        assert list(nl.ids) == [i for _, i in brute]
        assert np.allclose(nl.distances, [x for x, _ in brute], atol=1e-12)

    def test_ties_lower_id_first(self):
        v = unit(1, 0)
        nl = knn(0, unit(0, 1), [9, 4, 6], np.stack([v, v, v]), 3)
        assert nl.ids == (4, 6, 9)

    def test_skips_query_and_small_pool(self):
        m = unit_rows(3, 3, 0)
        nl = knn(1, m[0], [1, 2], m[:2], 5)
        assert nl.ids == (2,)
        assert len(knn(1, m[0], [1], m[:1], 2)) == 0


class TestRatio:
    @pytest.mark.parametrize("d1, d2, expected", [
        (0.1, 0.5, True), (0.45, 0.5, True), (0.46, 0.5, False),
        (0.0, 0.0, True), (0.3, float("inf"), True),
    ])
    def test_examples(self, d1, d2, expected):
        assert ratio_distinctive(d1, d2, 0.9) is expected

    def test_out_of_order(self):
        with pytest.raises(ValueError, match="NN distances out of order"):
            ratio_distinctive(0.6, 0.5, 0.9)

    @given(st.floats(0, 2), st.floats(0, 2), st.floats(0.01, 1), st.floats(0.01, 1))
    def test_monotone_in_rho(self, a, b, r1, r2):
        d1, d2 = min(a, b), max(a, b)
        lo, hi = min(r1, r2), max(r1, r2)
        if ratio_distinctive(d1, d2, lo):
            assert ratio_distinctive(d1, d2, hi)


def test_parallel_blocks_bit_identical():
    m = unit_rows(3 * BLOCK + 17, 16, 1)
    seq = pairwise_distances(m)
    par = pairwise_distances(m, n_jobs=4)
    assert seq.tobytes() == par.tobytes()
    nn1, d1 = first_neighbors(m)
    nn4, d4 = first_neighbors(m, n_jobs=4)
    assert np.array_equal(nn1, nn4) and d1.tobytes() == d4.tobytes()


def test_first_neighbors_tie_lowest_index():
    v = unit(1, 0)
    nn, d = first_neighbors(np.stack([unit(0, 1), v, v, v]))
    assert nn[1] == 2 and nn[2] == 1 and nn[3] == 1
    assert nn[0] == 1
