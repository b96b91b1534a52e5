"""Exact k-nearest-neighbour classification under Manhattan distance."""

from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed
from numba import njit

from . import modelio
from .base import Classifier, check_training_set
from .errors import DataError, InvalidParams, LengthMismatch

_QUERY_CHUNK = 32


def manhattan_distance(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise LengthMismatch(f"vectors of length {a.shape} and {b.shape}")
    return float(np.abs(a - b).sum())


@njit(cache=True, nogil=True)
def _distances(train, queries):
    # float64 accumulation regardless of storage precision
    out = np.empty((queries.shape[0], train.shape[0]))
    for q in range(queries.shape[0]):
        for r in range(train.shape[0]):
            acc = 0.0
            for j in range(train.shape[1]):
                acc += abs(np.float64(train[r, j]) - queries[q, j])
            out[q, r] = acc
    return out


def _nearest(dist, k):
    """k smallest distances, ties to the lower row index."""
    kth = np.partition(dist, k - 1)[k - 1]
    cand = np.flatnonzero(dist <= kth)
    cand = cand[np.lexsort((cand, dist[cand]))]
    return cand[:k]


def _vote(labels, dists, n_classes):
    counts = np.bincount(labels, minlength=n_classes)
    summed = np.bincount(labels, weights=dists, minlength=n_classes)
    tied = np.flatnonzero(counts == counts.max())
    # most votes, then smaller summed distance, then lower class index
    return int(tied[np.lexsort((tied, summed[tied]))][0])


@modelio.register
@dataclass(eq=False)
class KnnModel(Classifier):
    family = "KNN"

    train: object  # LabeledMatrix
    k: int = 5
    workers: int = 1
    train_rows: np.ndarray = None  # provenance for serialization
    dataset_fingerprint: str = None

    def __post_init__(self):
        if not 1 <= self.k <= self.train.n_rows:
            raise InvalidParams(f"k must lie in [1, {self.train.n_rows}], got {self.k}")

    @property
    def classes(self):
        return self.train.classes

    @property
    def gene_names(self):
        return self.train.gene_names

    def kneighbors(self, x):
        """Neighbour row indices and distances, each shape (n_queries, k)."""
        x = self.check_width(x).astype(np.float64)
        idx = np.empty((x.shape[0], self.k), dtype=np.int64)
        dist = np.empty((x.shape[0], self.k))

        def run(lo):
            out = []
            for row in _distances(self.train.values, x[lo:lo + _QUERY_CHUNK]):
                nn = _nearest(row, self.k)
                out.append((nn, row[nn]))
            return out

        starts = range(0, x.shape[0], _QUERY_CHUNK)
        if self.workers > 1:
            parts = Parallel(n_jobs=self.workers, backend="threading")(delayed(run)(s) for s in starts)
        else:
            parts = [run(s) for s in starts]
        r = 0
        for part in parts:
            for nn, d in part:
                idx[r], dist[r] = nn, d
                r += 1
        return idx, dist

    def predict(self, x):
        idx, dist = self.kneighbors(x)
        y = self.train.y
        return np.array([_vote(y[i], d, self.n_classes) for i, d in zip(idx, dist)], dtype=np.int64)

    def to_payload(self):
        header = self.header()
        header.update(k=self.k, dataset_fingerprint=self.dataset_fingerprint)
        rows = self.train_rows if self.train_rows is not None else np.arange(self.train.n_rows)
        return header, {"train_rows": np.asarray(rows, dtype=np.int64)}

    @classmethod
    def from_payload(cls, header, arrays, dataset=None):
        if dataset is None:
            raise DataError("a KNN model needs its training dataset to be loaded")
        want = header.get("dataset_fingerprint")
        if want is not None and dataset.fingerprint() != want:
            raise DataError("dataset fingerprint does not match the one recorded in the KNN model")
        train = dataset.subset(rows=arrays["train_rows"], genes=header["gene_names"])
        return cls(train, int(header["k"]), train_rows=arrays["train_rows"],
                   dataset_fingerprint=want)


def train_knn(train, k=5, workers=1, train_rows=None, dataset_fingerprint=None):
    check_training_set(train)
    return KnnModel(train, int(k), workers, train_rows, dataset_fingerprint)


def predict_knn(model, sample):
    """Returns ``(label, [(row, distance), ...])`` for the k nearest rows."""
    idx, dist = model.kneighbors(sample)
    label = model.classes[_vote(model.train.y[idx[0]], dist[0], model.n_classes)]
    return label, list(zip(idx[0].tolist(), dist[0].tolist()))
