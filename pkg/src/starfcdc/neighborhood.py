"""Momentum feature queue, top-k neighbor retrieval and rank weighting."""

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

DEFAULT_ALPHAS = (150.0, 10.0, 5.0, 2.0)


class EmptyQueueError(ValueError):
    pass


@dataclass(frozen=True)
class QueueEntry:
    sample_id: int
    embedding: np.ndarray
    coarse_label: int


@dataclass(frozen=True)
class QueueSnapshot:
    """Immutable array view of the queue, in FIFO order (oldest first)."""

    ids: np.ndarray
    embeddings: np.ndarray
    coarse: np.ndarray

    def __len__(self):
        return len(self.ids)


class MomentumQueue:
    """Bounded FIFO of momentum-encoder features keyed by sample id.

    Pushing an id that is already queued refreshes its embedding in place
    without changing its position.
    """

    def __init__(self, capacity):
        if capacity < 1:
            raise ValueError("queue capacity must be >= 1")
        self.capacity = int(capacity)
        self._entries = OrderedDict()
        self._snapshot = None

    def __len__(self):
        return len(self._entries)

    def __contains__(self, sample_id):
        return int(sample_id) in self._entries

    def push(self, ids, embeddings, coarse):
        """Append a batch in order, evicting the oldest entries beyond capacity."""
        embeddings = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
        for sid, emb, c in zip(ids, embeddings, coarse):
            # assignment to an existing key keeps its slot
            self._entries[int(sid)] = (np.array(emb), int(c))
            while len(self._entries) > self.capacity:
                self._entries.popitem(last=False)
        self._snapshot = None
        return self

    def push_entries(self, entries):
        entries = list(entries)
        if not entries:
            return self
        return self.push([e.sample_id for e in entries],
                         np.stack([e.embedding for e in entries]),
                         [e.coarse_label for e in entries])

    def entries(self):
        return [QueueEntry(sid, emb, c) for sid, (emb, c) in self._entries.items()]

    def snapshot(self):
        if self._snapshot is None:
            if not self._entries:
                raise EmptyQueueError("queue is empty")
            ids = np.fromiter(self._entries.keys(), dtype=np.int64, count=len(self._entries))
            vals = list(self._entries.values())
            emb = np.stack([v[0] for v in vals])
            coarse = np.array([v[1] for v in vals], dtype=np.int64)
            for a in (ids, emb, coarse):
                a.setflags(write=False)
            self._snapshot = QueueSnapshot(ids, emb, coarse)
        return self._snapshot


@dataclass(frozen=True)
class NeighborSet:
    """Neighbors of one query, best first.

    ``index`` points into the snapshot the neighbors were retrieved from.
    """

    index: np.ndarray
    ids: np.ndarray
    ranks: np.ndarray
    weights: np.ndarray
    similarity: np.ndarray

    def __len__(self):
        return len(self.index)


def rank_weights(ranks, alpha, k):
    """Soft weights ``phi * alpha**(-rank/k)`` normalized to sum to one."""
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if k < 1:
        raise ValueError("k must be >= 1")
    ranks = np.asarray(ranks, dtype=np.float64)
    # shift exponents so the largest raw weight is 1; phi absorbs the factor
    raw = np.power(float(alpha), -(ranks - ranks.min()) / k)
    return raw / raw.sum()


def alpha_for_epoch(epoch, schedule=DEFAULT_ALPHAS, period=5):
    """Stage value of alpha: one entry of ``schedule`` per ``period`` epochs."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return float(schedule[min(epoch // period, len(schedule) - 1)])


def _top_k(sims, ids, k):
    # descending similarity, ties -> lower sample id
    order = np.lexsort((ids, -sims))
    return order[:k]


def retrieve_neighbors(q, query_id, snapshot, k, alpha, coarse=None):
    """Top-``k`` cosine neighbors of unit embedding ``q`` in ``snapshot``.

    The entry with ``sample_id == query_id`` is skipped. With ``coarse`` set,
    only entries carrying that coarse label are eligible.
    """
    sims = snapshot.embeddings @ np.asarray(q, dtype=np.float64)
    eligible = snapshot.ids != query_id
    if coarse is not None:
        eligible &= snapshot.coarse == coarse
    cand = np.flatnonzero(eligible)
    if cand.size == 0:
        raise EmptyQueueError(f"no neighbor candidates for query {query_id}")
    pick = cand[_top_k(sims[cand], snapshot.ids[cand], k)]
    ranks = np.arange(1, len(pick) + 1)
    return NeighborSet(pick, snapshot.ids[pick], ranks, rank_weights(ranks, alpha, k), sims[pick])


def neighbor_weight_matrix(queries, query_ids, snapshot, k, alpha, coarse=None):
    """Dense (batch, |Q|) matrix of neighbor weights, zero for non-neighbors."""
    queries = np.atleast_2d(queries)
    W = np.zeros((len(queries), len(snapshot)))
    for i, (q, qid) in enumerate(zip(queries, query_ids)):
        c = None if coarse is None else coarse[i]
        nb = retrieve_neighbors(q, qid, snapshot, k, alpha, coarse=c)
        W[i, nb.index] = nb.weights
    return W
