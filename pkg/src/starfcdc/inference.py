"""Fine-grained label assignment.

Two mechanisms: clustering inference runs k-means over a batch of test
embeddings; centroid inference compares one embedding at a time against K
centroids built once from the training set, so it needs no test batch.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .config import rng_stream
from .vecmath import normalize

BANK_FORMAT = "centroid-bank"
BANK_VERSION = 1


@dataclass
class ClusterModel:
    centroids: np.ndarray
    assignments: np.ndarray
    inertia: float
    n_iter: int = 0
    inertia_history: list = field(default_factory=list)


def _sq_dist(X, C):
    d = np.sum(X**2, axis=1)[:, None] + np.sum(C**2, axis=1)[None, :] - 2.0 * X @ C.T
    return np.maximum(d, 0.0)


def kmeans_plusplus(X, K, rng):
    n = len(X)
    chosen = [int(rng.integers(n))]
    closest = _sq_dist(X, X[chosen])[:, 0]
    for _ in range(1, K):
        total = closest.sum()
        if total > 0:
            idx = int(rng.choice(n, p=closest / total))
        else:
            # every point coincides with a chosen center
            rest = np.setdiff1d(np.arange(n), chosen)
            idx = int(rng.choice(rest))
        chosen.append(idx)
        closest = np.minimum(closest, _sq_dist(X, X[idx:idx + 1])[:, 0])
    return X[chosen].copy()


def _lloyd(X, centers, max_iter, tol):
    history = []
    prev = None
    for it in range(1, max_iter + 1):
        dist = _sq_dist(X, centers)
        labels = np.argmin(dist, axis=1)
        point_cost = dist[np.arange(len(X)), labels]
        inertia = float(point_cost.sum())
        history.append(inertia)
        counts = np.bincount(labels, minlength=len(centers))
        new = np.zeros_like(centers)
        np.add.at(new, labels, X)
        empty = np.flatnonzero(counts == 0)
        nonempty = counts > 0
        new[nonempty] /= counts[nonempty, None]
        if empty.size:
            # re-seed each empty cluster at the worst-served point
            order = np.argsort(-point_cost, kind="stable")
            new[empty] = X[order[:empty.size]]
        centers = new
        if prev is not None and abs(prev - inertia) <= tol * max(prev, 1e-300) and not empty.size:
            break
        prev = inertia
    labels = np.argmin(_sq_dist(X, centers), axis=1)
    # exact residuals: the expanded form leaves ~1e-16 where a point sits on its center
    inertia = float(np.sum((X - centers[labels]) ** 2))
    return centers, labels, inertia, it, history


def kmeans(X, K, seed=0, n_init=10, max_iter=100, tol=1e-6):
    """k-means++ seeded Lloyd iterations; best of ``n_init`` restarts by inertia."""
    X = np.asarray(X, dtype=np.float64)
    if len(X) < K:
        raise ValueError(f"need at least K={K} samples, got {len(X)}")
    rng = rng_stream(seed, "kmeans")
    best = None
    for _ in range(n_init):
        centers = kmeans_plusplus(X, K, rng)
        c, labels, inertia, n_iter, hist = _lloyd(X, centers, max_iter, tol)
        if best is None or inertia < best.inertia:
            best = ClusterModel(c, labels, inertia, n_iter, hist)
    return best


def clustering_inference(test_embeddings, K, seed=0):
    """Fine labels of a test batch: k-means cluster indices."""
    return kmeans(test_embeddings, K, seed=seed).assignments


@dataclass
class CentroidBank:
    centroids: np.ndarray
    coarse_labels: np.ndarray

    @property
    def K(self):
        return len(self.centroids)

    def to_json(self):
        return json.dumps({
            "format": BANK_FORMAT, "version": BANK_VERSION,
            "K": int(self.K), "d": int(self.centroids.shape[1]),
            "coarse_labels": [int(c) for c in self.coarse_labels],
            "centroids": [[float(v) for v in row] for row in self.centroids],
        })

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        if doc.get("format") != BANK_FORMAT or doc.get("version") != BANK_VERSION:
            raise ValueError("not a version-1 centroid bank")
        centroids = np.array(doc["centroids"], dtype=np.float64)
        if centroids.shape != (doc["K"], doc["d"]) or len(doc["coarse_labels"]) != doc["K"]:
            raise ValueError("centroid bank shape does not match its header")
        return cls(centroids, np.array(doc["coarse_labels"], dtype=np.int64))

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json() + "\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(fh.read())


def centroids_from_assignments(embeddings, coarse, assignments, K, renormalize=True):
    """Per cluster, average the members of its predominant coarse class.

    Ties between coarse classes go to the smallest label.
    """
    embeddings = np.asarray(embeddings, dtype=np.float64)
    coarse = np.asarray(coarse)
    centroids = np.zeros((K, embeddings.shape[1]))
    labels = np.zeros(K, dtype=np.int64)
    for c in range(K):
        members = assignments == c
        if not members.any():
            raise ValueError(f"cluster {c} has no members")
        counts = np.bincount(coarse[members])
        labels[c] = int(np.argmax(counts))
        centroids[c] = embeddings[members & (coarse == labels[c])].mean(axis=0)
    if renormalize:
        centroids = normalize(centroids)
    return CentroidBank(centroids, labels)


def build_centroids(train_embeddings, coarse_labels, K, seed=0, renormalize=True):
    model = kmeans(train_embeddings, K, seed=seed)
    return centroids_from_assignments(train_embeddings, coarse_labels, model.assignments, K,
                                      renormalize)


def centroid_inference(embedding, bank):
    """Index of the most cosine-similar centroid (smallest index on ties)."""
    sims = _unit_rows(bank.centroids) @ np.asarray(embedding, dtype=np.float64)
    return int(np.argmax(sims))


def centroid_predict(embeddings, bank):
    """Row-wise :func:`centroid_inference`."""
    return np.argmax(np.atleast_2d(embeddings) @ _unit_rows(bank.centroids).T, axis=1)


def _unit_rows(C):
    # banks built without renormalization still compare by cosine
    return C / np.linalg.norm(C, axis=1, keepdims=True)
