from dataclasses import dataclass

import numpy as np

RF = "RF"
GBM = "GBM"
COMBINED = "COMBINED"


@dataclass(frozen=True, eq=False)
class ImportanceRanking:
    """Genes ordered by normalized importance, highest first.

    Ties are ordered alphabetically. ``source`` is one of RF, GBM, COMBINED.
    """

    genes: tuple
    scores: np.ndarray
    source: str

    @classmethod
    def from_scores(cls, gene_names, scores, source):
        scores = np.asarray(scores, dtype=np.float64)
        if scores.shape != (len(gene_names),):
            raise ValueError("one score per gene is required")
        if np.any(scores < 0) or not np.all(np.isfinite(scores)):
            raise ValueError("importance scores must be finite and nonnegative")
        total = scores.sum()
        if total > 0:
            scores = scores / total
        order = sorted(range(len(gene_names)), key=lambda j: (-scores[j], gene_names[j]))
        return cls(tuple(gene_names[j] for j in order), scores[order], source)

    def top(self, k):
        return list(self.genes[:k])

    def as_dict(self):
        return dict(zip(self.genes, self.scores.tolist()))

    def __len__(self):
        return len(self.genes)
