"""Random ferns: depth-D chains of random threshold tests whose outcome bits
index a 2**D bucket table of smoothed class-conditional log-probabilities.
Class scores add the log prior and each fern's table entry (semi-naive
Bayes: ferns are treated as independent given the class)."""

from dataclasses import asdict, dataclass

import numpy as np

from . import modelio
from . import rng as _rng
from .base import Classifier, check_training_set
from .errors import InvalidParams, WidthMismatch

_STREAM = 0xFE4
MAX_DEPTH = 20
_ROW_CHUNK = 64
_FERN_BLOCK = 64


@dataclass(frozen=True)
class FernsParams:
    n_ferns: int = 1000
    depth: int = 10
    seed: int = 42

    def check(self):
        if self.n_ferns < 1:
            raise InvalidParams("n_ferns must be >= 1")
        if not 1 <= self.depth <= MAX_DEPTH:
            raise InvalidParams(f"depth must lie in [1, {MAX_DEPTH}]")
        _rng.check_seed(self.seed)


@dataclass(eq=False)
class Fern:
    """One fern: ``features``/``thresholds`` of length D and a
    ``(C, 2**D)`` table of add-one smoothed log class-conditionals."""

    features: np.ndarray
    thresholds: np.ndarray
    class_log_counts: np.ndarray

    @property
    def depth(self):
        return self.features.shape[0]


def bucket_index(features, thresholds, x):
    """Bucket of every row of ``x`` for stacked ferns.

    ``features``/``thresholds`` have shape (F, D); returns (n, F) ints where
    bit ``i`` is set iff ``x[feature_i] > threshold_i`` (bit 0 = first test).
    """
    x = np.atleast_2d(x)
    depth = features.shape[1]
    out = np.zeros((x.shape[0], features.shape[0]), dtype=np.int64)
    for i in range(depth):
        out |= (x[:, features[:, i]] > thresholds[:, i]).astype(np.int64) << i
    return out


def fern_bucket(fern, sample):
    sample = np.asarray(sample)
    if sample.shape[-1] <= int(fern.features.max()):
        raise WidthMismatch(int(fern.features.max()) + 1, sample.shape[-1])
    return int(bucket_index(fern.features[None, :], fern.thresholds[None, :], sample)[0, 0])


@modelio.register
@dataclass(eq=False)
class FernsModel(Classifier):
    family = "RFERN"

    features: np.ndarray  # (F, D)
    thresholds: np.ndarray  # (F, D)
    tables: np.ndarray  # (F, 2**D, C), bucket-major for gathering
    log_prior: np.ndarray  # (C,)
    classes: tuple
    gene_names: tuple
    params: FernsParams

    @property
    def ferns(self):
        return [Fern(self.features[f], self.thresholds[f], self.tables[f].T)
                for f in range(self.features.shape[0])]

    def log_posterior(self, x):
        """Unnormalized per-class log-posterior, shape (n, C)."""
        x = self.check_width(x)
        n_ferns = self.features.shape[0]
        out = np.empty((x.shape[0], self.n_classes))
        fern_ids = np.arange(n_ferns)
        for lo in range(0, x.shape[0], _ROW_CHUNK):
            buckets = bucket_index(self.features, self.thresholds, x[lo:lo + _ROW_CHUNK])
            gathered = self.tables[fern_ids[None, :], buckets]  # (rows, F, C)
            out[lo:lo + _ROW_CHUNK] = self.log_prior + gathered.sum(axis=1)
        return out

    def predict(self, x):
        return np.argmax(self.log_posterior(x), axis=1)

    def to_payload(self):
        header = self.header()
        header["params"] = asdict(self.params)
        return header, {"features": self.features, "thresholds": self.thresholds,
                        "tables": self.tables, "log_prior": self.log_prior}

    @classmethod
    def from_payload(cls, header, arrays, dataset=None):
        return cls(arrays["features"], arrays["thresholds"], arrays["tables"],
                   arrays["log_prior"], tuple(header["classes"]), tuple(header["gene_names"]),
                   FernsParams(**header["params"]))


def train_ferns(train, params=FernsParams()):
    """Fit ferns. Fern ``f`` draws its features and thresholds from the stream
    ``(seed, f)``: features uniformly over columns, thresholds uniformly over
    that column's observed training range."""
    params.check()
    check_training_set(train)
    x = train.values
    n, m = x.shape
    n_classes = train.n_classes
    depth, n_ferns = params.depth, params.n_ferns
    n_buckets = 1 << depth
    lo = x.min(axis=0).astype(np.float64)
    hi = x.max(axis=0).astype(np.float64)

    features = np.empty((n_ferns, depth), dtype=np.int64)
    thresholds = np.empty((n_ferns, depth), dtype=np.float64)
    for f in range(n_ferns):
        gen = _rng.stream(params.seed, _STREAM, f)
        feats = gen.integers(0, m, size=depth)
        features[f] = feats
        thresholds[f] = gen.uniform(lo[feats], hi[feats])

    y = train.y
    class_sizes = np.bincount(y, minlength=n_classes).astype(np.float64)
    tables = np.empty((n_ferns, n_buckets, n_classes), dtype=np.float64)
    norm = np.log(class_sizes + n_buckets)
    for f0 in range(0, n_ferns, _FERN_BLOCK):
        f1 = min(n_ferns, f0 + _FERN_BLOCK)
        buckets = bucket_index(features[f0:f1], thresholds[f0:f1], x)  # (n, block)
        flat = ((np.arange(f1 - f0)[None, :] * n_buckets + buckets) * n_classes + y[:, None])
        counts = np.bincount(flat.ravel(), minlength=(f1 - f0) * n_buckets * n_classes)
        tables[f0:f1] = np.log(counts.reshape(f1 - f0, n_buckets, n_classes) + 1.0) - norm

    log_prior = np.log(np.maximum(class_sizes, 0.5) / n)
    return FernsModel(features, thresholds, tables, log_prior, train.classes, train.gene_names,
                      params)


def predict_ferns(model, sample):
    """Returns ``(label, per-class log-posterior)``; ties go to the lower index."""
    scores = model.log_posterior(sample)[0]
    return model.classes[int(np.argmax(scores))], scores
