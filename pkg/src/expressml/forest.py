"""Random forest: bagged Gini trees with per-node feature subsampling."""

import math
from dataclasses import asdict, dataclass, replace

import numpy as np
from joblib import Parallel, delayed

from . import modelio
from . import rng as _rng
from .base import Classifier, check_training_set
from .cart import CLASSIFICATION, Presorted, grow_tree
from .errors import InvalidParams
from .ranking import RF, ImportanceRanking

_STREAM = 0xF0E57


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 500
    mtry: int = None  # None -> floor(sqrt(m))
    max_depth: int = None
    min_leaf: int = 1
    bootstrap: bool = True
    seed: int = 42

    def resolve(self, m):
        mtry = max(1, math.isqrt(m)) if self.mtry is None else int(self.mtry)
        if self.n_trees < 1:
            raise InvalidParams("n_trees must be >= 1")
        if not 1 <= mtry <= m:
            raise InvalidParams(f"mtry must lie in [1, {m}], got {mtry}")
        if self.max_depth is not None and self.max_depth < 0:
            raise InvalidParams("max_depth must be >= 0")
        if self.min_leaf < 1:
            raise InvalidParams("min_leaf must be >= 1")
        _rng.check_seed(self.seed)
        return replace(self, mtry=mtry)


@modelio.register
@dataclass(eq=False)
class ForestModel(Classifier):
    family = "RF"

    trees: list
    classes: tuple
    gene_names: tuple
    params: ForestParams
    importance: np.ndarray

    def votes(self, x):
        """Per-class vote counts, shape (n_samples, n_classes)."""
        x = self.check_width(x)
        votes = np.zeros((x.shape[0], self.n_classes), dtype=np.int64)
        rows = np.arange(x.shape[0])
        for tree in self.trees:
            leaf_class = np.argmax(tree.value, axis=1)
            votes[rows, leaf_class[tree.apply(x)]] += 1
        return votes

    def predict(self, x):
        return np.argmax(self.votes(x), axis=1)

    def to_payload(self):
        header = self.header()
        header["params"] = asdict(self.params)
        arrays = modelio.pack_trees(self.trees)
        arrays["importance"] = self.importance
        return header, arrays

    @classmethod
    def from_payload(cls, header, arrays, dataset=None):
        return cls(modelio.unpack_trees(arrays), tuple(header["classes"]),
                   tuple(header["gene_names"]), ForestParams(**header["params"]),
                   arrays["importance"])


def _grow_batch(pre, y, n_classes, params, tree_ids):
    n = pre.shape[0]
    trees = []
    for t in tree_ids:
        gen = _rng.stream(params.seed, _STREAM, t)
        weight = (np.bincount(gen.integers(0, n, size=n), minlength=n)
                  if params.bootstrap else np.ones(n, dtype=np.int64))
        trees.append(grow_tree(pre, y, CLASSIFICATION, n_classes=n_classes,
                               max_depth=params.max_depth, min_leaf=params.min_leaf,
                               mtry=params.mtry, rng=gen, sample_weight=weight))
    return trees


def train_forest(train, params=ForestParams(), workers=1):
    """Fit a forest. Tree ``t`` draws from the stream ``(seed, t)``, so the
    model is identical for any ``workers``."""
    check_training_set(train)
    params = params.resolve(train.n_genes)
    pre = Presorted(train.values)
    ids = np.arange(params.n_trees)
    if workers > 1:
        batches = np.array_split(ids, min(workers * 4, params.n_trees))
        parts = Parallel(n_jobs=workers)(
            delayed(_grow_batch)(pre, train.y, train.n_classes, params, b) for b in batches)
        trees = [t for part in parts for t in part]
    else:
        trees = _grow_batch(pre, train.y, train.n_classes, params, ids)
    importance = np.zeros(train.n_genes)
    for tree in trees:
        importance += tree.importance(train.n_genes)
    total = importance.sum()
    if total > 0:
        importance /= total
    return ForestModel(trees, train.classes, train.gene_names, params, importance)


def predict_forest(model, sample):
    """Majority vote for one sample; returns ``(label, {label: votes})``.

    Vote ties go to the lower class index.
    """
    votes = model.votes(sample)[0]
    label = model.classes[int(np.argmax(votes))]
    return label, {c: int(v) for c, v in zip(model.classes, votes)}


def forest_importance(model):
    return ImportanceRanking.from_scores(model.gene_names, model.importance, RF)
