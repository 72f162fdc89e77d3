from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_units
from starfcdc.neighborhood import (EmptyQueueError, MomentumQueue, QueueEntry, alpha_for_epoch,
                                   neighbor_weight_matrix, rank_weights, retrieve_neighbors)


def entry(i, d=3, c=0):
    v = np.zeros(d)
    v[i % d] = 1.0
    return QueueEntry(i, v, c)


class TestQueue:
    def test_fifo_eviction(self):
        q = MomentumQueue(3).push_entries([entry(i) for i in range(4)])
        assert [e.sample_id for e in q.entries()] == [1, 2, 3]

    def test_replacement_in_place(self):
        q = MomentumQueue(3).push_entries([entry(i) for i in range(3)])
        q.push([1], [[0.0, 0.0, 1.0]], [2])
        assert len(q) == 3
        assert [e.sample_id for e in q.entries()] == [0, 1, 2]
        assert np.array_equal(q.entries()[1].embedding, [0.0, 0.0, 1.0])
        assert q.entries()[1].coarse_label == 2

    def test_empty_push(self):
        q = MomentumQueue(3).push_entries([entry(0)])
        q.push_entries([])
        assert [e.sample_id for e in q.entries()] == [0]

    def test_snapshot_is_read_only(self):
        snap = MomentumQueue(2).push_entries([entry(0)]).snapshot()
        with pytest.raises(ValueError):
            snap.embeddings[0, 0] = 5.0

    @settings(max_examples=60)
    @given(st.integers(1, 6), st.lists(st.lists(st.integers(0, 9), max_size=5), max_size=8))
    def test_matches_reference_model(self, capacity, pushes):
        q = MomentumQueue(capacity)
        ref = deque()
        stamp = 0
        for batch in pushes:
            embs = []
            for sid in batch:
                stamp += 1
                embs.append([float(stamp), 0.0])
                if sid in ref:
                    pass  # refreshed in place, order kept
                else:
                    ref.append(sid)
                    while len(ref) > capacity:
                        ref.popleft()
            if batch:
                q.push(batch, np.array(embs), [0] * len(batch))
            assert [e.sample_id for e in q.entries()] == list(ref)
            assert len(q) <= capacity


class TestRankWeights:
    def test_hand_value(self):
        w = rank_weights([1, 2], alpha=4.0, k=2)
        assert w[0] == 2 / 3 and w[1] == 1 / 3

    def test_alpha_one_uniform(self):
        np.testing.assert_allclose(rank_weights([1, 2, 3, 4, 5], 1.0, 5), 0.2)

    @given(st.floats(1.0001, 500.0), st.integers(1, 300))
    def test_decreasing_and_normalized(self, alpha, k):
        ranks = np.arange(1, k + 1)
        w = rank_weights(ranks, alpha, k)
        assert abs(w.sum() - 1.0) <= 1e-9
        assert np.all(np.diff(w) < 0) or k == 1
        assert np.all(w > 0)

    def test_proportional_to_formula(self):
        ranks = np.arange(1, 6)
        raw = 150.0 ** (-ranks / 5)
        np.testing.assert_allclose(rank_weights(ranks, 150.0, 5), raw / raw.sum(), rtol=1e-12)

    def test_bad_alpha(self):
        with pytest.raises(ValueError):
            rank_weights([1], 0.0, 1)


@pytest.mark.parametrize("epoch,alpha", [(0, 150), (4, 150), (5, 10), (7, 10), (9, 10),
                                         (10, 5), (12, 5), (14, 5), (15, 2), (17, 2), (40, 2)])
def test_alpha_schedule(epoch, alpha):
    assert alpha_for_epoch(epoch) == alpha


class TestRetrieve:
    def make_snapshot(self, n, d=4, seed=0):
        rng = np.random.default_rng(seed)
        q = MomentumQueue(n)
        q.push(np.arange(10, 10 + n), random_units(rng, n, d), np.arange(n) % 2)
        return q.snapshot(), rng

    def test_k_exceeds_queue(self):
        snap, rng = self.make_snapshot(2)
        nb = retrieve_neighbors(random_units(rng, 1, 4)[0], -1, snap, k=5, alpha=10.0)
        assert list(nb.ranks) == [1, 2]
        assert nb.weights.sum() == pytest.approx(1.0)

    def test_self_excluded(self):
        snap, _ = self.make_snapshot(5)
        nb = retrieve_neighbors(snap.embeddings[2], int(snap.ids[2]), snap, k=4, alpha=10.0)
        assert int(snap.ids[2]) not in nb.ids
        assert len(nb) == 4

    def test_matches_exhaustive_scan(self):
        for seed in range(20):
            snap, rng = self.make_snapshot(int(np.random.default_rng(seed).integers(5, 256)), seed=seed)
            q = random_units(rng, 1, 4)[0]
            nb = retrieve_neighbors(q, -1, snap, k=3, alpha=150.0)
            sims = [float(h @ q) for h in snap.embeddings]
            best = sorted(range(len(sims)), key=lambda i: (-sims[i], snap.ids[i]))[:3]
            assert list(nb.index) == best
            assert np.all(np.diff(nb.similarity) <= 0)

    def test_ties_prefer_lower_id(self):
        q = MomentumQueue(3)
        q.push([7, 3, 5], np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), [0, 0, 0])
        nb = retrieve_neighbors(np.array([1.0, 0.0]), -1, q.snapshot(), k=2, alpha=2.0)
        assert list(nb.ids) == [3, 7]

    def test_empty_after_exclusion(self):
        q = MomentumQueue(1).push([4], [[1.0, 0.0]], [0])
        with pytest.raises(EmptyQueueError):
            retrieve_neighbors(np.array([1.0, 0.0]), 4, q.snapshot(), k=2, alpha=2.0)

    def test_coarse_restriction(self):
        snap, rng = self.make_snapshot(10)
        nb = retrieve_neighbors(random_units(rng, 1, 4)[0], -1, snap, k=3, alpha=2.0, coarse=1)
        assert np.all(snap.coarse[nb.index] == 1)

    def test_weight_matrix_rows(self):
        snap, rng = self.make_snapshot(12)
        Q = random_units(rng, 3, 4)
        W = neighbor_weight_matrix(Q, [-1, -2, -3], snap, k=4, alpha=10.0)
        assert W.shape == (3, 12)
        np.testing.assert_allclose(W.sum(axis=1), 1.0)
        assert np.all((W > 0).sum(axis=1) == 4)
