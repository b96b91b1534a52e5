import numpy as np

from .errors import InvalidParams, WidthMismatch


class Classifier:
    """Shared prediction plumbing; subclasses set ``family`` and implement
    ``predict`` returning class indices."""

    family = None

    def check_width(self, x):
        x = np.asarray(x, dtype=np.float32)
        if x.ndim == 1:
            x = x.reshape(1, -1)
        if x.shape[1] != len(self.gene_names):
            raise WidthMismatch(len(self.gene_names), x.shape[1])
        return x

    @property
    def n_classes(self):
        return len(self.classes)

    def predict_labels(self, x):
        return [self.classes[i] for i in self.predict(x)]

    def header(self):
        return {"classes": list(self.classes), "gene_names": list(self.gene_names)}


def check_training_set(train, min_classes=1):
    if train.n_rows == 0:
        raise InvalidParams("training set is empty")
    present = np.unique(train.y).size
    if present < min_classes:
        raise InvalidParams(f"training set has {present} class(es); at least {min_classes} needed")
