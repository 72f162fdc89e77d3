"""Datasets: in-memory representation, CSV files, synthetic coarse/fine generator.

CSV layout (one file per split)::

    # fcdc-csv v1 split=train M=3 K=9 d_in=32 n=1800
    id,coarse,fine,x0,x1,...,x31
    0,2,7,0.125,...

``fine`` may be empty (unknown). An optional ``text`` column may sit between
``fine`` and the first feature column; it is carried through untouched so
that exported clusters can show the raw samples. A ``manifest.json`` next to
the split files records counts and generator settings.
"""

import csv
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .config import rng_stream

FORMAT_TAG = "fcdc-csv"
FORMAT_VERSION = 1


class DataFormatError(ValueError):
    """A dataset file or array violates the documented format."""


@dataclass(frozen=True)
class LabeledSample:
    id: int
    features: np.ndarray
    coarse: int
    fine_hidden: int | None = None
    text: str | None = None


@dataclass
class Dataset:
    ids: np.ndarray
    features: np.ndarray
    coarse: np.ndarray
    M: int
    K: int
    fine: np.ndarray | None = None
    texts: list | None = None
    split: str = "train"

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.features = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        self.coarse = np.asarray(self.coarse, dtype=np.int64)
        if self.fine is not None:
            self.fine = np.asarray(self.fine, dtype=np.int64)
        self.validate()

    def __len__(self):
        return len(self.ids)

    @property
    def d_in(self):
        return self.features.shape[1]

    def validate(self):
        n = len(self.ids)
        if self.features.shape[0] != n or len(self.coarse) != n:
            raise DataFormatError("ids, features and coarse labels differ in length")
        if self.fine is not None and len(self.fine) != n:
            raise DataFormatError("fine labels differ in length from ids")
        if len(np.unique(self.ids)) != n:
            raise DataFormatError("sample ids are not unique")
        if n and (self.coarse.min() < 0 or self.coarse.max() >= self.M):
            raise DataFormatError(f"coarse label outside [0, {self.M})")
        if self.fine is not None and n and (self.fine.min() < 0 or self.fine.max() >= self.K):
            raise DataFormatError(f"fine label outside [0, {self.K})")
        if not np.all(np.isfinite(self.features)):
            raise DataFormatError("non-finite feature value")

    def sample(self, i):
        fine = None if self.fine is None else int(self.fine[i])
        text = None if self.texts is None else self.texts[i]
        return LabeledSample(int(self.ids[i]), self.features[i], int(self.coarse[i]), fine, text)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        same_fine = (self.fine is None and other.fine is None) or (
            self.fine is not None and other.fine is not None
            and np.array_equal(self.fine, other.fine))
        return (self.M == other.M and self.K == other.K and self.split == other.split
                and np.array_equal(self.ids, other.ids)
                and np.array_equal(self.features, other.features)
                and np.array_equal(self.coarse, other.coarse)
                and same_fine and self.texts == other.texts)


@dataclass
class DatasetManifest:
    n_train: int
    n_test: int
    M: int
    K: int
    d_in: int
    seed: int | None = None
    fine_to_coarse: list | None = None
    generator: dict = field(default_factory=dict)
    source: str = "synthetic"

    def to_json(self):
        return json.dumps(self.__dict__, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))


# synthetic generator -----------------------------------------------------------

def fine_to_coarse_map(M, K):
    """Round-robin surjection: fine class ``f`` belongs to coarse class ``f % M``."""
    return np.arange(K) % M


def sample_hierarchy(M, K, n_per_fine, d_latent, coarse_sep, fine_sep, noise, seed):
    """Latent Gaussian clusters under a two-level hierarchy.

    Returns ``(latent, fine, coarse_centers, fine_centers)``; the samples are
    grouped by fine class in order.
    """
    rng = rng_stream(seed, "generator")
    directions = rng.normal(size=(M, d_latent))
    coarse_centers = coarse_sep * directions / np.linalg.norm(directions, axis=1, keepdims=True)
    parent = fine_to_coarse_map(M, K)
    offsets = rng.normal(size=(K, d_latent))
    offsets *= fine_sep / np.linalg.norm(offsets, axis=1, keepdims=True)
    fine_centers = coarse_centers[parent] + offsets
    fine = np.repeat(np.arange(K), n_per_fine)
    latent = fine_centers[fine] + noise * rng.normal(size=(K * n_per_fine, d_latent))
    return latent, fine, coarse_centers, fine_centers


def generate_synthetic(M=3, K=9, n_per_fine=250, d_latent=8, d_in=32, coarse_sep=4.0,
                       fine_sep=2.0, noise=0.5, seed=0, test_fraction=0.2):
    """Hierarchical Gaussian-mixture dataset.

    Latent samples are mapped to ``d_in`` dimensions by one fixed random
    linear map, so the fine structure is not axis aligned. Each fine class is
    split train/test separately (stratified). Train keeps fine labels only
    for evaluation; nothing in training reads them.

    Returns ``(train, test, manifest)``.
    """
    if M < 1 or K < M:
        raise ValueError(f"need 1 <= M <= K, got M={M}, K={K}")
    if n_per_fine < 2 or d_latent < 1 or d_in < 1:
        raise ValueError("n_per_fine must be >= 2 and dimensions >= 1")
    if coarse_sep <= 0 or fine_sep <= 0 or noise < 0:
        raise ValueError("separations must be positive and noise non-negative")
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must lie in (0, 1)")

    latent, fine, _, _ = sample_hierarchy(M, K, n_per_fine, d_latent, coarse_sep, fine_sep,
                                          noise, seed)
    rng = rng_stream(seed, "generator-split")
    mixing = rng.normal(size=(d_in, d_latent)) / math.sqrt(d_latent)
    x = latent @ mixing.T
    coarse = fine_to_coarse_map(M, K)[fine]

    n_test_per = int(round(test_fraction * n_per_fine))
    test_idx, train_idx = [], []
    for f in range(K):
        members = rng.permutation(np.flatnonzero(fine == f))
        test_idx.append(members[:n_test_per])
        train_idx.append(members[n_test_per:])
    train_idx = rng.permutation(np.concatenate(train_idx))
    test_idx = rng.permutation(np.concatenate(test_idx))

    n_train = len(train_idx)
    train = Dataset(np.arange(n_train), x[train_idx], coarse[train_idx], M, K,
                    fine=fine[train_idx], split="train")
    test = Dataset(np.arange(n_train, n_train + len(test_idx)), x[test_idx], coarse[test_idx],
                   M, K, fine=fine[test_idx], split="test")
    manifest = DatasetManifest(
        n_train=n_train, n_test=len(test_idx), M=M, K=K, d_in=d_in, seed=seed,
        fine_to_coarse=fine_to_coarse_map(M, K).tolist(),
        generator=dict(n_per_fine=n_per_fine, d_latent=d_latent, coarse_sep=coarse_sep,
                       fine_sep=fine_sep, noise=noise, test_fraction=test_fraction))
    return train, test, manifest


# file i/o ------------------------------------------------------------------------

def save_split(ds, path):
    with open(path, "w", newline="") as fh:
        fh.write(f"# {FORMAT_TAG} v{FORMAT_VERSION} split={ds.split} M={ds.M} K={ds.K} "
                 f"d_in={ds.d_in} n={len(ds)}\n")
        writer = csv.writer(fh, lineterminator="\n")
        cols = ["id", "coarse", "fine"] + (["text"] if ds.texts is not None else [])
        writer.writerow(cols + [f"x{j}" for j in range(ds.d_in)])
        for i in range(len(ds)):
            row = [int(ds.ids[i]), int(ds.coarse[i]),
                   "" if ds.fine is None else int(ds.fine[i])]
            if ds.texts is not None:
                row.append(ds.texts[i])
            writer.writerow(row + [repr(float(v)) for v in ds.features[i]])


def _parse_header(line, path):
    parts = line.lstrip("#").split()
    if len(parts) < 2 or parts[0] != FORMAT_TAG or parts[1] != f"v{FORMAT_VERSION}":
        raise DataFormatError(f"{path}:1: expected '# {FORMAT_TAG} v{FORMAT_VERSION} ...' header")
    fields = {}
    for token in parts[2:]:
        key, _, value = token.partition("=")
        fields[key] = value
    try:
        return (fields.get("split", "train"), int(fields["M"]), int(fields["K"]),
                int(fields["d_in"]), int(fields["n"]))
    except (KeyError, ValueError) as exc:
        raise DataFormatError(f"{path}:1: malformed header field ({exc})") from exc


def load_split(path):
    """Read one CSV split, validating every row against the header."""
    with open(path, newline="") as fh:
        first = fh.readline()
        split, M, K, d_in, n = _parse_header(first, path)
        reader = csv.reader(fh)
        try:
            cols = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}:2: missing column header") from None
        has_text = len(cols) > 3 and cols[3] == "text"
        n_meta = 4 if has_text else 3
        if cols[:3] != ["id", "coarse", "fine"] or len(cols) - n_meta != d_in:
            raise DataFormatError(f"{path}:2: column header does not match d_in={d_in}")
        ids, coarse, fine, texts, feats = [], [], [], [], []
        for lineno, row in enumerate(reader, start=3):
            if len(row) != len(cols):
                raise DataFormatError(f"{path}:{lineno}: expected {len(cols)} fields, got {len(row)}")
            try:
                sid, c = int(row[0]), int(row[1])
                f = None if row[2] == "" else int(row[2])
                vals = [float(v) for v in row[n_meta:]]
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from exc
            if not 0 <= c < M:
                raise DataFormatError(f"{path}:{lineno}: coarse label {c} outside [0, {M})")
            if f is not None and not 0 <= f < K:
                raise DataFormatError(f"{path}:{lineno}: fine label {f} outside [0, {K})")
            if not all(math.isfinite(v) for v in vals):
                raise DataFormatError(f"{path}:{lineno}: non-finite feature value")
            ids.append(sid)
            coarse.append(c)
            fine.append(f)
            feats.append(vals)
            if has_text:
                texts.append(row[3])
    if len(ids) != n:
        raise DataFormatError(f"{path}: header declares n={n}, found {len(ids)} rows")
    known = [f for f in fine if f is not None]
    if known and len(known) != len(fine):
        raise DataFormatError(f"{path}: fine labels must be given for all rows or none")
    return Dataset(ids, np.array(feats, dtype=np.float64).reshape(len(ids), d_in), coarse, M, K,
                   fine=np.array(known) if known else None, texts=texts if has_text else None,
                   split=split)


def save_dataset(train, test, manifest, directory):
    os.makedirs(directory, exist_ok=True)
    save_split(train, os.path.join(directory, "train.csv"))
    save_split(test, os.path.join(directory, "test.csv"))
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        fh.write(manifest.to_json() + "\n")


def load_dataset(directory):
    """Load ``train.csv``, ``test.csv`` and ``manifest.json`` from ``directory``."""
    train = load_split(os.path.join(directory, "train.csv"))
    test = load_split(os.path.join(directory, "test.csv"))
    manifest_path = os.path.join(directory, "manifest.json")
    if os.path.exists(manifest_path):
        with open(manifest_path) as fh:
            manifest = DatasetManifest.from_json(fh.read())
    else:
        manifest = DatasetManifest(len(train), len(test), train.M, train.K, train.d_in,
                                   source="files")
    if (manifest.n_train, manifest.n_test) != (len(train), len(test)):
        raise DataFormatError("manifest counts do not match the split files")
    if (manifest.M, manifest.K, manifest.d_in) != (train.M, train.K, train.d_in):
        raise DataFormatError("manifest M/K/d_in do not match train.csv")
    if (test.M, test.K, test.d_in) != (train.M, train.K, train.d_in):
        raise DataFormatError("train.csv and test.csv disagree on M/K/d_in")
    return train, test, manifest
