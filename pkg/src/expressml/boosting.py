"""Multiclass gradient boosting with a softmax objective.

Each round fits one least-squares regression tree per class to the
residuals ``y_ic - p_ic`` and adds ``shrinkage * tree`` to that class's
score. A round is kept only if it strictly lowers the training log-loss;
the first round that does not is discarded and training stops.
"""

import math
from dataclasses import asdict, dataclass

import numpy as np
from joblib import Parallel, delayed

from . import modelio
from . import rng as _rng
from .base import Classifier, check_training_set
from .cart import REGRESSION, Presorted, grow_tree
from .errors import InvalidParams
from .ranking import GBM, ImportanceRanking

_STREAM = 0x6B3


@dataclass(frozen=True)
class GbmParams:
    n_rounds: int = 100
    shrinkage: float = 0.1
    tree_depth: int = 3
    min_leaf: int = 1
    subsample: float = 1.0  # row fraction per round; 1.0 disables subsampling
    mtry: object = None  # None -> all features; "sqrt" -> floor(sqrt(m)); or an int
    seed: int = 42

    def check(self, m):
        if self.n_rounds < 0:
            raise InvalidParams("n_rounds must be >= 0")
        if not 0.0 < self.shrinkage <= 1.0:
            raise InvalidParams("shrinkage must lie in (0, 1]")
        if self.tree_depth < 0:
            raise InvalidParams("tree_depth must be >= 0")
        if self.min_leaf < 1:
            raise InvalidParams("min_leaf must be >= 1")
        if not 0.0 < self.subsample <= 1.0:
            raise InvalidParams("subsample must lie in (0, 1]")
        mtry = self.features_per_split(m)
        if not 1 <= mtry <= m:
            raise InvalidParams(f"mtry must lie in [1, {m}]")
        _rng.check_seed(self.seed)

    def features_per_split(self, m):
        if self.mtry is None:
            return m
        if self.mtry == "sqrt":
            return max(1, math.isqrt(m))
        if isinstance(self.mtry, str):
            raise InvalidParams(f"unknown mtry {self.mtry!r}")
        return int(self.mtry)


def softmax(scores):
    scores = np.asarray(scores, dtype=np.float64)
    z = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_loss(scores, y):
    z = scores - scores.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    return float(np.mean(log_norm - z[np.arange(len(y)), y]))


@modelio.register
@dataclass(eq=False)
class GbmModel(Classifier):
    family = "GBM"

    rounds: list  # each round: one regression tree per class
    base_scores: np.ndarray
    classes: tuple
    gene_names: tuple
    params: GbmParams
    importance: np.ndarray
    training_loss_trace: np.ndarray

    def decision_scores(self, x):
        x = self.check_width(x)
        scores = np.tile(self.base_scores, (x.shape[0], 1))
        for trees in self.rounds:
            for c, tree in enumerate(trees):
                scores[:, c] += self.params.shrinkage * tree.value[tree.apply(x)]
        return scores

    def predict_proba(self, x):
        return softmax(self.decision_scores(x))

    def predict(self, x):
        return np.argmax(self.decision_scores(x), axis=1)

    def to_payload(self):
        header = self.header()
        header["params"] = asdict(self.params)
        header["n_accepted_rounds"] = len(self.rounds)
        arrays = modelio.pack_trees([t for trees in self.rounds for t in trees]) if self.rounds else {}
        arrays.update(base_scores=self.base_scores, importance=self.importance,
                      training_loss_trace=self.training_loss_trace)
        return header, arrays

    @classmethod
    def from_payload(cls, header, arrays, dataset=None):
        n_classes = len(header["classes"])
        flat = modelio.unpack_trees(arrays) if "tree_offsets" in arrays else []
        rounds = [flat[i:i + n_classes] for i in range(0, len(flat), n_classes)]
        return cls(rounds, arrays["base_scores"], tuple(header["classes"]),
                   tuple(header["gene_names"]), GbmParams(**header["params"]),
                   arrays["importance"], arrays["training_loss_trace"])


def _fit_class_tree(pre, residual, params, weight, gen, n_classes):
    tree = grow_tree(pre, residual, REGRESSION, max_depth=params.tree_depth, min_leaf=params.min_leaf,
                     mtry=params.features_per_split(pre.x.shape[1]), rng=gen,
                     sample_weight=weight)
    _newton_leaves(tree, tree.apply(pre.x), residual, weight, n_classes)
    return tree


def _newton_leaves(tree, leaf_of, residual, weight, n_classes):
    """Replace leaf means by one Newton step on the softmax loss:
    (C-1)/C * sum(r) / sum(|r| (1-|r|)) over the leaf's rows."""
    w = np.ones_like(residual) if weight is None else weight
    size = tree.value.shape[0]
    num = np.bincount(leaf_of, weights=w * residual, minlength=size)
    den = np.bincount(leaf_of, weights=w * np.abs(residual) * (1.0 - np.abs(residual)), minlength=size)
    leaves = tree.feature < 0
    step = np.where(den > 1e-12, num / np.maximum(den, 1e-12), 0.0)
    tree.value[leaves] = (n_classes - 1) / n_classes * step[leaves]


def train_gbm(train, params=GbmParams(), workers=1):
    check_training_set(train, min_classes=2)
    params.check(train.n_genes)
    n, m = train.values.shape
    n_classes = train.n_classes
    y = train.y
    counts = np.bincount(y, minlength=n_classes).astype(np.float64)
    # classes absent from training get a tiny prior instead of log(0)
    base = np.log(np.maximum(counts, 0.5) / n)
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), y] = 1.0

    pre = Presorted(train.values)
    scores = np.tile(base, (n, 1))
    loss = log_loss(scores, y)
    rounds, trace = [], []
    importance = np.zeros(m)
    pool = Parallel(n_jobs=workers, backend="threading") if workers > 1 else None
    for r in range(params.n_rounds):
        residual = onehot - softmax(scores)
        gens = [_rng.stream(params.seed, _STREAM, r, c) for c in range(n_classes)]
        weight = None
        if params.subsample < 1.0:
            sub = _rng.stream(params.seed, _STREAM, r, n_classes)
            keep = sub.permutation(n)[:max(2, int(round(params.subsample * n)))]
            weight = np.zeros(n)
            weight[keep] = 1.0
        jobs = [(pre, np.ascontiguousarray(residual[:, c]), params, weight, gens[c], n_classes)
                for c in range(n_classes)]
        if pool is not None:
            trees = pool(delayed(_fit_class_tree)(*job) for job in jobs)
        else:
            trees = [_fit_class_tree(*job) for job in jobs]
        candidate = scores.copy()
        for c, tree in enumerate(trees):
            candidate[:, c] += params.shrinkage * tree.value[tree.apply(pre.x)]
        new_loss = log_loss(candidate, y)
        if not new_loss < loss:
            break
        scores, loss = candidate, new_loss
        rounds.append(trees)
        trace.append(loss)
        for tree in trees:
            importance += tree.importance(m)
    total = importance.sum()
    if total > 0:
        importance /= total
    return GbmModel(rounds, base, train.classes, train.gene_names, params, importance,
                    np.asarray(trace, dtype=np.float64))


def predict_gbm_proba(model, sample):
    """Class probabilities for one sample (softmax of accumulated scores)."""
    return model.predict_proba(sample)[0]


def gbm_importance(model):
    return ImportanceRanking.from_scores(model.gene_names, model.importance, GBM)
