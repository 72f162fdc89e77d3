"""Clustering evaluation: Hungarian accuracy, ARI, NMI and silhouette."""

import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment


def _check_pair(pred, truth, min_len=1):
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape or pred.ndim != 1:
        raise ValueError(f"label arrays differ in shape: {pred.shape} vs {truth.shape}")
    if len(pred) < min_len:
        raise ValueError(f"need at least {min_len} labels")
    return pred, truth


def contingency_table(pred, truth):
    """Counts ``n[i, j]`` of samples with predicted cluster i and true class j."""
    pred, truth = _check_pair(pred, truth)
    _, p = np.unique(pred, return_inverse=True)
    _, t = np.unique(truth, return_inverse=True)
    table = np.zeros((p.max() + 1, t.max() + 1), dtype=np.int64)
    np.add.at(table, (p, t), 1)
    return table


def hungarian_accuracy(pred, truth):
    """Accuracy under the best one-to-one mapping of clusters to classes.

    The rectangular case leaves surplus clusters (or classes) unmatched,
    which is the same as padding with zero-weight dummies.
    """
    table = contingency_table(pred, truth)
    rows, cols = linear_sum_assignment(table, maximize=True)
    return float(table[rows, cols].sum() / table.sum())


def _comb2(x):
    x = np.asarray(x, dtype=np.float64)
    return x * (x - 1) / 2.0


def ari(pred, truth):
    """Adjusted Rand index.

    When the chance-adjustment denominator vanishes the result is 1.0 if the
    two partitions coincide and 0.0 otherwise.
    """
    pred, truth = _check_pair(pred, truth, min_len=2)
    table = contingency_table(pred, truth)
    index = _comb2(table).sum()
    a = _comb2(table.sum(axis=1)).sum()
    b = _comb2(table.sum(axis=0)).sum()
    expected = a * b / _comb2(table.sum())
    max_index = (a + b) / 2.0
    if max_index == expected:
        same = table.shape[0] == table.shape[1] and np.count_nonzero(table) == table.shape[0]
        return 1.0 if same else 0.0
    return float((index - expected) / (max_index - expected))


def _entropy(counts):
    p = counts[counts > 0] / counts.sum()
    return float(-np.sum(p * np.log(p)))


def nmi(pred, truth):
    """Mutual information over the arithmetic mean of the two entropies (nats)."""
    table = contingency_table(pred, truth).astype(np.float64)
    n = table.sum()
    h_pred = _entropy(table.sum(axis=1))
    h_true = _entropy(table.sum(axis=0))
    if h_pred == 0.0 and h_true == 0.0:
        return 1.0
    if h_pred == 0.0 or h_true == 0.0:
        return 0.0
    outer = np.outer(table.sum(axis=1), table.sum(axis=0))
    nz = table > 0
    mi = float(np.sum(table[nz] / n * np.log(table[nz] * n / outer[nz])))
    return float(np.clip(mi / ((h_pred + h_true) / 2.0), 0.0, 1.0))


def _sq_dists(X, Y):
    d = np.sum(X**2, axis=1)[:, None] + np.sum(Y**2, axis=1)[None, :] - 2.0 * X @ Y.T
    return np.maximum(d, 0.0)


def silhouette(embeddings, assignments, chunk=2048):
    """Mean silhouette coefficient with Euclidean distances.

    Samples in singleton clusters contribute 0.
    """
    X = np.asarray(embeddings, dtype=np.float64)
    labels = np.unique(np.asarray(assignments), return_inverse=True)[1]
    n_clusters = labels.max() + 1 if len(labels) else 0
    if n_clusters < 2:
        raise ValueError("silhouette needs at least two clusters")
    sizes = np.bincount(labels, minlength=n_clusters).astype(np.float64)
    onehot = np.zeros((len(X), n_clusters))
    onehot[np.arange(len(X)), labels] = 1.0
    scores = np.empty(len(X))
    for start in range(0, len(X), chunk):
        stop = min(start + chunk, len(X))
        dist = np.sqrt(_sq_dists(X[start:stop], X))
        rows = np.arange(stop - start)
        dist[rows, rows + start] = 0.0  # cancellation leaves ~1e-8 on the diagonal
        sums = dist @ onehot
        own = labels[start:stop]
        own_size = sizes[own]
        with np.errstate(divide="ignore", invalid="ignore"):
            a = sums[rows, own] / (own_size - 1)
        means = sums / sizes
        means[rows, own] = np.inf
        b = means.min(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            s = (b - a) / np.maximum(a, b)
        s[own_size == 1] = 0.0
        s[np.isnan(s)] = 0.0  # a == b == 0: coincident points
        scores[start:stop] = s
    return float(np.mean(scores))


@dataclass
class EvalReport:
    acc: float
    ari: float
    nmi: float
    silhouette: float
    n: int
    K: int
    mechanism: str
    config_hash: str = ""

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)

    def as_dict(self):
        return asdict(self)


def evaluate_labels(pred, truth, embeddings=None, K=None, mechanism="clustering", config_hash=""):
    """ACC/ARI/NMI of ``pred`` against ``truth`` (+ silhouette of ``pred`` on ``embeddings``)."""
    sil = float("nan")
    if embeddings is not None and len(np.unique(pred)) >= 2:
        sil = silhouette(embeddings, pred)
    return EvalReport(acc=hungarian_accuracy(pred, truth), ari=ari(pred, truth),
                      nmi=nmi(pred, truth), silhouette=sil, n=len(pred),
                      K=int(K if K is not None else len(np.unique(truth))),
                      mechanism=mechanism, config_hash=config_hash)
