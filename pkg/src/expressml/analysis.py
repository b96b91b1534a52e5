"""Evaluation reports, importance combination and the feature-reduction
cascade, plus their CSV/JSON renderings."""

import csv
import io
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .boosting import GbmParams, gbm_importance, train_gbm
from .dataset import stratified_split
from .errors import DataError, GeneUniverseMismatch, ScheduleExceedsGeneCount, UnknownClassInTest
from .ferns import FernsParams, train_ferns
from .forest import ForestParams, forest_importance, train_forest
from .linear import LinearParams, train_linear_ovr
from .neighbors import train_knn
from .ranking import COMBINED, ImportanceRanking

FAMILIES = ("RF", "GBM", "RFERN", "SVM", "KNN")
DEFAULT_SCHEDULE = (80, 60, 40, 20, 10)
TOP_GENES = 20


@dataclass(frozen=True)
class ModelConfigs:
    """Hyperparameters for all five families."""

    forest: ForestParams = ForestParams()
    gbm: GbmParams = GbmParams()
    ferns: FernsParams = FernsParams()
    linear: LinearParams = LinearParams()
    knn_k: int = 5

    def to_dict(self):
        from dataclasses import asdict

        return asdict(self)


# Settings used for the synthetic benchmark. Library defaults stay the
# conventional ones; these trade training time for accuracy on wide,
# sparse-signal data (column-sampled boosted stumps with larger leaves,
# many shallow ferns).
BENCHMARK_CONFIGS = ModelConfigs(
    gbm=GbmParams(n_rounds=1000, tree_depth=1, min_leaf=10, mtry="sqrt"),
    ferns=FernsParams(n_ferns=20000, depth=5),
)


def train_model(family, train, configs=ModelConfigs(), workers=1, **knn_extra):
    """Train one family; returns ``(model, train_seconds)``."""
    start = time.perf_counter()
    if family == "RF":
        model = train_forest(train, configs.forest, workers=workers)
    elif family == "GBM":
        model = train_gbm(train, configs.gbm, workers=workers)
    elif family == "RFERN":
        model = train_ferns(train, configs.ferns)
    elif family == "SVM":
        model = train_linear_ovr(train, configs.linear)
    elif family == "KNN":
        model = train_knn(train, configs.knn_k, workers=workers, **knn_extra)
    else:
        raise ValueError(f"unknown model family {family!r}")
    return model, _seconds(time.perf_counter() - start)


def _seconds(s):
    return round(s, 3)


@dataclass(eq=False)
class EvaluationReport:
    model_family: str
    classes: tuple
    confusion: np.ndarray  # rows = true class, columns = predicted class
    feature_count: int
    train_seconds: float = None
    test_seconds: float = None
    workers: int = 1

    @property
    def support(self):
        return self.confusion.sum(axis=1)

    @property
    def per_class_accuracy(self):
        """Diagonal over row sums; NaN for classes without test rows."""
        support = self.support
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(support > 0, np.diag(self.confusion) / np.maximum(support, 1), np.nan)

    @property
    def macro_average(self):
        acc = self.per_class_accuracy
        return float(np.mean(acc[~np.isnan(acc)]))

    @property
    def overall_accuracy(self):
        return float(np.trace(self.confusion) / self.confusion.sum())

    def to_dict(self, timings=False):
        acc = self.per_class_accuracy
        if np.isnan(acc).any():
            raise DataError("report has classes without test rows (NaN accuracy)")
        doc = {
            "classes": list(self.classes),
            "confusion": self.confusion.tolist(),
            "feature_count": int(self.feature_count),
            "macro_average": self.macro_average,
            "model_family": self.model_family,
            "overall_accuracy": self.overall_accuracy,
            "per_class_accuracy": [float(a) for a in acc],
        }
        if timings:
            doc.update(train_seconds=self.train_seconds, test_seconds=self.test_seconds,
                       workers=self.workers)
        return doc


def evaluate(model, test, train_seconds=None, workers=1):
    """Predict every test row and tabulate a confusion matrix."""
    index = {label: i for i, label in enumerate(model.classes)}
    unknown = sorted(set(test.labels) - index.keys())
    if unknown:
        raise UnknownClassInTest(f"test classes not known to the model: {unknown}")
    truth = np.array([index[label] for label in test.labels], dtype=np.int64)
    start = time.perf_counter()
    pred = model.predict(test.values) if test.n_rows else np.empty(0, np.int64)
    test_seconds = _seconds(time.perf_counter() - start)
    n_classes = len(model.classes)
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(confusion, (truth, pred), 1)
    return EvaluationReport(model.family, tuple(model.classes), confusion, test.n_genes,
                            train_seconds, test_seconds, workers)


def combine_rankings(rf, gbm):
    """Mean of the two normalized importances, renormalized."""
    a, b = rf.as_dict(), gbm.as_dict()
    if a.keys() != b.keys():
        raise GeneUniverseMismatch("RF and GBM rankings cover different genes")
    genes = sorted(a)
    scores = [(a[g] + b[g]) / 2.0 for g in genes]
    return ImportanceRanking.from_scores(genes, scores, COMBINED)


@dataclass(eq=False)
class CascadeStep:
    k: int
    genes: list
    reports: dict  # family -> EvaluationReport


@dataclass(eq=False)
class CascadeResult:
    schedule: tuple
    ranking: ImportanceRanking
    rf_ranking: ImportanceRanking
    gbm_ranking: ImportanceRanking
    baseline: CascadeStep  # all genes
    steps: list = field(default_factory=list)
    split_seed: int = None
    gbm_loss_trace: np.ndarray = None  # baseline GBM, one entry per accepted round

    def top_genes(self, k=TOP_GENES):
        return self.ranking.top(k)

    def accuracy_rows(self):
        """(k, {family: macro}) for the baseline followed by every step."""
        return [(s.k, {f: r.macro_average for f, r in s.reports.items()})
                for s in [self.baseline, *self.steps]]


def _train_and_evaluate(families, train, test, configs, workers, knn_extra):
    reports, models = {}, {}
    for family in families:
        model, secs = train_model(family, train, configs, workers, **(knn_extra if family == "KNN" else {}))
        reports[family] = evaluate(model, test, train_seconds=secs, workers=workers)
        models[family] = model
    return reports, models


def run_cascade(matrix, schedule=DEFAULT_SCHEDULE, configs=ModelConfigs(), seed=42,
                split=None, fraction=0.75, workers=1, families=FAMILIES):
    """Rank genes by combined RF+GBM importance, then retrain every family on
    the top-k genes for each k in ``schedule``.

    RF and GBM are trained once on all genes of the training rows; their
    evaluation forms the baseline step together with the other families.
    """
    schedule = tuple(int(k) for k in schedule)
    if any(a <= b for a, b in zip(schedule, schedule[1:])) or not schedule or schedule[-1] < 1:
        raise DataError("schedule must be strictly decreasing positive gene counts")
    if schedule[0] > matrix.n_genes:
        raise ScheduleExceedsGeneCount(
            f"schedule starts at {schedule[0]} genes but the matrix has {matrix.n_genes}")
    if split is None:
        split = stratified_split(matrix, fraction, seed)
    train = matrix.subset(rows=split.train_rows)
    test = matrix.subset(rows=split.test_rows)

    reports, models = _train_and_evaluate(families, train, test, configs, workers, {})
    rf_rank = forest_importance(models["RF"])
    gbm_rank = gbm_importance(models["GBM"])
    ranking = combine_rankings(rf_rank, gbm_rank)
    result = CascadeResult(schedule, ranking, rf_rank, gbm_rank,
                           CascadeStep(matrix.n_genes, list(matrix.gene_names), reports),
                           split_seed=split.seed,
                           gbm_loss_trace=models["GBM"].training_loss_trace.copy())
    del models
    for k in schedule:
        genes = ranking.top(k)
        sub_train = train.subset(genes=genes)
        sub_test = test.subset(genes=genes)
        step_reports, _ = _train_and_evaluate(families, sub_train, sub_test, configs, workers, {})
        result.steps.append(CascadeStep(k, genes, step_reports))
    return result


# --- rendering ------------------------------------------------------------

def _csv(rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerows(rows)
    return buf.getvalue()


def _pct(x):
    if x is None or (isinstance(x, float) and math.isnan(x)):
        raise DataError("refusing to render a NaN accuracy")
    return f"{100.0 * x:.2f}"


def _json(doc):
    return json.dumps(doc, sort_keys=True, indent=1, ensure_ascii=False) + "\n"


def confusion_csv(report):
    rows = [["true\\predicted", *report.classes]]
    for label, counts in zip(report.classes, report.confusion):
        rows.append([label, *(int(c) for c in counts)])
    return _csv(rows)


def accuracy_table_csv(reports):
    """Per-class accuracy (%) with one column per family and an Average row."""
    reports = list(reports)
    classes = reports[0].classes
    if any(r.classes != classes for r in reports):
        raise DataError("reports disagree on the class list")
    accs = [r.per_class_accuracy for r in reports]
    rows = [["Primary Site/Histology Subtype", *(r.model_family for r in reports)]]
    for c, label in enumerate(classes):
        rows.append([label, *(_pct(float(a[c])) for a in accs)])
    rows.append(["Average", *(_pct(r.macro_average) for r in reports)])
    return _csv(rows)


def timings_csv(reports):
    """Training and testing seconds, one column per family."""
    reports = list(reports)
    rows = [["", *(r.model_family for r in reports)],
            ["Average training time (s)", *(_fmt_secs(r.train_seconds) for r in reports)],
            ["Testing time (s)", *(_fmt_secs(r.test_seconds) for r in reports)]]
    return _csv(rows)


def _fmt_secs(s):
    return "" if s is None else f"{s:.3f}"


def timings_table(reports):
    reports = list(reports)
    return {
        "columns": [r.model_family for r in reports],
        "rows": ["Average training time (s)", "Testing time (s)"],
        "values": [[r.train_seconds for r in reports], [r.test_seconds for r in reports]],
    }


def ranking_csv(ranking, rf=None, gbm=None, k=None):
    genes = ranking.genes if k is None else ranking.genes[:k]
    header = ["rank", "gene", f"{ranking.source.lower()}_score"]
    extra = [r for r in (rf, gbm) if r is not None]
    lookups = [r.as_dict() for r in extra]
    header += [f"{r.source.lower()}_score" for r in extra]
    rows = [header]
    scores = ranking.as_dict()
    for i, g in enumerate(genes, 1):
        rows.append([i, g, repr(float(scores[g])), *(repr(float(d[g])) for d in lookups)])
    return _csv(rows)


def cascade_accuracy_csv(result):
    families = list(result.baseline.reports)
    rows = [["k", *families]]
    for k, accs in result.accuracy_rows():
        rows.append([k, *(_pct(accs[f]) for f in families)])
    return _csv(rows)


def cascade_to_dict(result, timings=False):
    return {
        "baseline": {"k": result.baseline.k,
                     "reports": {f: r.to_dict(timings) for f, r in result.baseline.reports.items()}},
        "ranking": {"genes": list(result.ranking.genes),
                    "scores": result.ranking.scores.tolist(), "source": result.ranking.source},
        "schedule": list(result.schedule),
        "split_seed": result.split_seed,
        "steps": [{"genes": s.genes, "k": s.k,
                   "reports": {f: r.to_dict(timings) for f, r in s.reports.items()}}
                  for s in result.steps],
        "top_genes": result.top_genes(),
    }


def render_report(obj, out_dir, prefix=""):
    """Write report files into ``out_dir``; returns the written paths.

    Timing-free files are byte-deterministic for a given model and data;
    wall-clock timings go to a separate ``timings.csv``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    if isinstance(obj, EvaluationReport):
        files["confusion.csv"] = confusion_csv(obj)
        files["accuracy.csv"] = accuracy_table_csv([obj])
        files["report.json"] = _json(obj.to_dict())
        files["timings.csv"] = timings_csv([obj])
    elif isinstance(obj, CascadeResult):
        files["cascade_accuracy.csv"] = cascade_accuracy_csv(obj)
        files["accuracy.csv"] = accuracy_table_csv(obj.baseline.reports.values())
        files["top_genes.csv"] = ranking_csv(obj.ranking, obj.rf_ranking, obj.gbm_ranking, TOP_GENES)
        files["ranking.csv"] = ranking_csv(obj.ranking, obj.rf_ranking, obj.gbm_ranking)
        files["cascade.json"] = _json(cascade_to_dict(obj))
        files["timings.csv"] = timings_csv(obj.baseline.reports.values())
        for step in obj.steps:
            files[f"accuracy_k{step.k}.csv"] = accuracy_table_csv(step.reports.values())
    else:
        raise TypeError(f"cannot render {type(obj).__name__}")
    paths = []
    for name, text in files.items():
        path = out / f"{prefix}{name}"
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        paths.append(path)
    return paths
