"""One-vs-rest linear SVM trained by stochastic subgradient descent.

Each class ``c`` gets a binary problem (+1 for ``c``, -1 otherwise) with
objective ``lambda/2 * (|w|^2 + b^2) + mean hinge loss``. Steps use the
``1 / (lambda * t)`` schedule over one seeded shuffle per epoch; the bias is
treated as the weight of a constant input of 1. All C problems share the
shuffle, which lets them advance together as one matrix update while
remaining mathematically independent.
"""

from dataclasses import asdict, dataclass

import numpy as np

from . import modelio
from . import rng as _rng
from .base import Classifier, check_training_set
from .errors import InvalidParams

_STREAM = 0x5F7


@dataclass(frozen=True)
class LinearParams:
    lam: float = 1e-4
    epochs: int = 20
    seed: int = 42

    def check(self):
        if not self.lam > 0 or not np.isfinite(self.lam):
            raise InvalidParams("lambda must be a positive real")
        if self.epochs < 1:
            raise InvalidParams("epochs must be >= 1")
        _rng.check_seed(self.seed)


@modelio.register
@dataclass(eq=False)
class LinearOvrModel(Classifier):
    family = "SVM"

    weights: np.ndarray  # (C, m)
    biases: np.ndarray  # (C,)
    classes: tuple
    gene_names: tuple
    params: LinearParams

    def margins(self, x):
        x = self.check_width(x).astype(np.float64)
        return x @ self.weights.T + self.biases

    def predict(self, x):
        return np.argmax(self.margins(x), axis=1)

    def to_payload(self):
        header = self.header()
        header["params"] = asdict(self.params)
        return header, {"weights": self.weights, "biases": self.biases}

    @classmethod
    def from_payload(cls, header, arrays, dataset=None):
        return cls(arrays["weights"], arrays["biases"], tuple(header["classes"]),
                   tuple(header["gene_names"]), LinearParams(**header["params"]))


def ovr_targets(y, n_classes):
    return np.where(np.asarray(y)[:, None] == np.arange(n_classes)[None, :], 1.0, -1.0)


def objective(weights, biases, x, y, lam):
    """Per-class regularized hinge objective."""
    targets = ovr_targets(y, weights.shape[0])
    margins = targets * (np.asarray(x, dtype=np.float64) @ weights.T + biases)
    reg = 0.5 * lam * ((weights ** 2).sum(axis=1) + biases ** 2)
    return reg + np.maximum(0.0, 1.0 - margins).mean(axis=0)


def train_linear_ovr(train, params=LinearParams()):
    params.check()
    check_training_set(train, min_classes=2)
    x = np.hstack([train.values.astype(np.float64), np.ones((train.n_rows, 1))])
    n_classes = train.n_classes
    targets = ovr_targets(train.y, n_classes)
    w = np.zeros((n_classes, x.shape[1]))
    gen = _rng.stream(params.seed, _STREAM)
    lam = params.lam
    t = 0
    for _ in range(params.epochs):
        for i in gen.permutation(train.n_rows):
            t += 1
            eta = 1.0 / (lam * t)
            xi = x[i]
            yi = targets[i]
            violated = yi * (w @ xi) < 1.0
            w *= 1.0 - eta * lam
            if violated.any():
                w[violated] += (eta * yi[violated])[:, None] * xi[None, :]
    return LinearOvrModel(np.ascontiguousarray(w[:, :-1]), w[:, -1].copy(), train.classes,
                          train.gene_names, params)


def predict_linear(model, sample):
    """Returns ``(label, per-class margins)``; ties go to the lower index."""
    margins = model.margins(sample)[0]
    return model.classes[int(np.argmax(margins))], margins
