"""Command-line interface: ``expressml <subcommand> [--flags]``.

Exit codes: 0 success, 1 usage or parameter error, 2 data error.
Every run writes a JSON manifest next to its outputs recording the argument
list, seeds, dataset fingerprint, artifact hashes and timings; ``replay``
re-executes a manifest and checks the artifacts hash identically.
"""

import argparse
import hashlib
import json
import os
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

from . import __version__
from .analysis import (BENCHMARK_CONFIGS, DEFAULT_SCHEDULE, ModelConfigs, evaluate, render_report,
                       ranking_csv, combine_rankings, run_cascade, timings_table, train_model)
from .boosting import GbmModel, gbm_importance
from .dataset import (SplitIndices, SynthSpec, generate_synthetic, load_dataset, save_dataset,
                      stratified_split)
from .errors import DataError, ExpressmlError, ParamError
from .forest import ForestModel, forest_importance
from .ingest import ingest
from .modelio import load_model, save_model

FAMILY_FLAGS = {"rf": "RF", "gbm": "GBM", "rfern": "RFERN", "svm": "SVM", "knn": "KNN"}
PRESETS = {"default": ModelConfigs(), "benchmark": BENCHMARK_CONFIGS}
WORKERS_ENV = "EXPRESSML_WORKERS"
TIMINGS_FILE = "timings.csv"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


class _Formatter(argparse.ArgumentDefaultsHelpFormatter):
    """Print defaults only where they say something."""

    def _get_help_string(self, action):
        text = action.help or ""
        if "default" in text or action.required or action.default in (None, False):
            return text
        return super()._get_help_string(action)


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _schedule(text):
    try:
        return tuple(int(t) for t in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad schedule {text!r}") from None


def _mtry(text):
    return text if text == "sqrt" else _positive_int(text)


def _default_workers():
    raw = os.environ.get(WORKERS_ENV)
    if raw is None:
        return 1
    try:
        return _positive_int(raw)
    except (ValueError, argparse.ArgumentTypeError):
        raise UsageError(f"{WORKERS_ENV} must be a positive integer, got {raw!r}") from None


def _add_common(p, seed=True):
    if seed:
        p.add_argument("--seed", type=int, default=42, help="random seed")
    p.add_argument("--workers", type=_positive_int, default=None,
                   help=f"worker count (default: ${WORKERS_ENV} or 1); never changes outputs")
    p.add_argument("--manifest", default=None, help="manifest path (default: next to the output)")


def _add_model_flags(p):
    g = p.add_argument_group("hyperparameters (unset flags come from --preset)")
    d = PRESETS["default"]
    g.add_argument("--preset", choices=sorted(PRESETS), default="default", help="hyperparameter set")
    g.add_argument("--n-trees", type=_positive_int, help=f"RF trees (default {d.forest.n_trees})")
    g.add_argument("--rf-mtry", type=_positive_int, help="RF features per node (default floor(sqrt(m)))")
    g.add_argument("--max-depth", type=_positive_int, help="RF tree depth limit (default unlimited)")
    g.add_argument("--min-leaf", type=_positive_int, help=f"RF minimum leaf size (default {d.forest.min_leaf})")
    g.add_argument("--no-bootstrap", action="store_true", help="grow RF trees on all training rows")
    g.add_argument("--n-rounds", type=int, help=f"GBM rounds (default {d.gbm.n_rounds})")
    g.add_argument("--shrinkage", type=float, help=f"GBM shrinkage (default {d.gbm.shrinkage})")
    g.add_argument("--tree-depth", type=int, help=f"GBM tree depth (default {d.gbm.tree_depth})")
    g.add_argument("--gbm-min-leaf", type=_positive_int, help=f"GBM minimum leaf size (default {d.gbm.min_leaf})")
    g.add_argument("--gbm-mtry", type=_mtry, help="GBM features per node: integer or 'sqrt' (default all)")
    g.add_argument("--subsample", type=float, help=f"GBM row fraction per round (default {d.gbm.subsample})")
    g.add_argument("--n-ferns", type=_positive_int, help=f"fern count (default {d.ferns.n_ferns})")
    g.add_argument("--fern-depth", type=_positive_int, help=f"comparisons per fern (default {d.ferns.depth})")
    g.add_argument("--lam", type=float, help=f"SVM regularization (default {d.linear.lam})")
    g.add_argument("--epochs", type=_positive_int, help=f"SVM epochs (default {d.linear.epochs})")
    g.add_argument("--k", type=_positive_int, help=f"KNN neighbours (default {d.knn_k})")


def build_parser():
    parser = _Parser(prog="expressml", description="Cancer-type classification from expression z-scores.",
                     formatter_class=_Formatter)
    parser.add_argument("--version", action="version", version=f"expressml {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    fmt = _Formatter

    p = sub.add_parser("ingest", help="pivot long-format TSVs into a dataset", formatter_class=fmt)
    p.add_argument("--expression", required=True, help="long-format expression TSV (optionally gzip)")
    p.add_argument("--samples", required=True, help="sample metadata TSV")
    p.add_argument("--out", required=True, help="output dataset (.exml)")
    _add_common(p, seed=False)

    p = sub.add_parser("split", help="stratified train/test split", formatter_class=fmt)
    p.add_argument("--dataset", required=True)
    p.add_argument("--fraction", type=float, default=0.75, help="training fraction")
    p.add_argument("--out", required=True, help="output split JSON")
    _add_common(p)

    p = sub.add_parser("synth", help="generate a planted-signal dataset", formatter_class=fmt)
    d = SynthSpec()
    p.add_argument("--classes", type=int, default=d.classes, help="class count")
    p.add_argument("--samples-per-class", type=int, default=d.samples_per_class, help="rows per class")
    p.add_argument("--genes", type=int, default=d.genes, help="total genes")
    p.add_argument("--informative-genes", "--informative", type=int, default=d.informative_genes, help="planted genes")
    p.add_argument("--effect-size", type=float, default=d.effect_size, help="planted mean shift")
    p.add_argument("--noise-sd", type=float, default=d.noise_sd, help="noise standard deviation")
    p.add_argument("--out", required=True, help="output dataset (.exml)")
    p.add_argument("--planted-out", default=None, help="write planted gene names, one per line")
    _add_common(p)

    p = sub.add_parser("train", help="train one model family", formatter_class=fmt)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", required=True, help="split JSON from 'expressml split'")
    p.add_argument("--model", required=True, choices=sorted(FAMILY_FLAGS))
    p.add_argument("--out", required=True, help="output model (.exmm)")
    _add_model_flags(p)
    _add_common(p)

    p = sub.add_parser("evaluate", help="evaluate a model on the test rows", formatter_class=fmt)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--model-file", required=True)
    p.add_argument("--out-dir", required=True)
    _add_common(p, seed=False)

    p = sub.add_parser("select", help="combined RF+GBM gene ranking", formatter_class=fmt)
    p.add_argument("--rf-model", required=True)
    p.add_argument("--gbm-model", required=True)
    p.add_argument("--top", type=_positive_int, default=None, help="keep only the top genes")
    p.add_argument("--out", required=True, help="output ranking CSV")
    _add_common(p, seed=False)

    p = sub.add_parser("cascade", help="feature-reduction cascade over all families", formatter_class=fmt)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", default=None, help="split JSON; otherwise split with --fraction/--seed")
    p.add_argument("--fraction", type=float, default=0.75, help="training fraction")
    p.add_argument("--schedule", type=_schedule, default=DEFAULT_SCHEDULE,
                   help="comma-separated decreasing gene counts (default "
                   + ",".join(map(str, DEFAULT_SCHEDULE)) + ")")
    p.add_argument("--out-dir", required=True)
    _add_model_flags(p)
    _add_common(p)

    p = sub.add_parser("replay", help="re-run a manifest and verify its artifacts", formatter_class=fmt)
    p.add_argument("manifest_path", metavar="MANIFEST")
    return parser


# --- helpers --------------------------------------------------------------

def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _require_files(*paths):
    for path in paths:
        if path is not None and not Path(path).is_file():
            raise UsageError(f"input file not found: {path}")


def _require_parent(path):
    parent = Path(path).resolve().parent
    if not parent.is_dir():
        raise UsageError(f"output directory does not exist: {parent}")


def _load_split(path, dataset):
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        split = SplitIndices.from_json(text)
        recorded = json.loads(text).get("dataset_fingerprint")
    except (ValueError, KeyError, TypeError) as exc:
        raise DataError(f"malformed split file {path}: {exc}") from None
    if recorded is not None and recorded != dataset.fingerprint():
        raise DataError(f"split {path} was made for a different dataset")
    n = dataset.n_rows
    for rows in (split.train_rows, split.test_rows):
        if rows.size and (rows.min() < 0 or rows.max() >= n):
            raise DataError(f"split {path} references rows outside the dataset")
    return split


def configs_from_args(args):
    c = PRESETS[args.preset]
    forest = replace(c.forest, seed=args.seed, **_given(
        n_trees=args.n_trees, mtry=args.rf_mtry, max_depth=args.max_depth, min_leaf=args.min_leaf))
    if args.no_bootstrap:
        forest = replace(forest, bootstrap=False)
    gbm = replace(c.gbm, seed=args.seed, **_given(
        n_rounds=args.n_rounds, shrinkage=args.shrinkage, tree_depth=args.tree_depth,
        min_leaf=args.gbm_min_leaf, mtry=args.gbm_mtry, subsample=args.subsample))
    ferns = replace(c.ferns, seed=args.seed, **_given(n_ferns=args.n_ferns, depth=args.fern_depth))
    linear = replace(c.linear, seed=args.seed, **_given(lam=args.lam, epochs=args.epochs))
    return ModelConfigs(forest, gbm, ferns, linear, c.knn_k if args.k is None else args.k)


def _given(**kwargs):
    return {k: v for k, v in kwargs.items() if v is not None}


def _write_text(path, text):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _canonical_argv(args):
    """Argument list with absolute paths, replayable from any directory."""
    argv = [args.command]
    for key, value in sorted(vars(args).items()):
        if key in ("command", "handler", "manifest", "workers") or value is None or value is False:
            continue
        flag = "--" + key.replace("_", "-")
        if value is True:
            argv.append(flag)
            continue
        if key in _PATH_KEYS:
            value = str(Path(value).resolve())
        elif isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        argv += [flag, str(value)]
    return argv


_PATH_KEYS = {"expression", "samples", "out", "dataset", "split", "model_file", "out_dir",
              "rf_model", "gbm_model", "planted_out"}


def run_manifest(args, config, artifacts, seeds=None, dataset=None, timings=None):
    """Manifest document for a finished run; ``artifacts`` are output paths.

    Wall-clock timing files are listed without a hash since they differ
    between otherwise identical runs.
    """
    paths = sorted(str(Path(p).resolve()) for p in artifacts)
    return {
        "argv": _canonical_argv(args),
        "artifacts": {p: sha256_file(p) for p in paths if Path(p).name != TIMINGS_FILE},
        "timing_artifacts": [p for p in paths if Path(p).name == TIMINGS_FILE],
        "command": args.command,
        "config": config,
        "dataset_fingerprint": None if dataset is None else dataset.fingerprint(),
        "seeds": seeds or {},
        "timings": timings or {},
        "version": __version__,
        "workers": args.workers,
    }


def _save_manifest(args, default_path, doc):
    path = Path(args.manifest) if args.manifest else Path(default_path)
    _write_text(path, json.dumps(doc, sort_keys=True, indent=1) + "\n")
    return path


def _echo(**fields):
    print(" ".join(f"{k}={v}" for k, v in fields.items()))


# --- subcommands ----------------------------------------------------------

def cmd_ingest(args):
    _require_files(args.expression, args.samples)
    _require_parent(args.out)
    start = time.perf_counter()
    matrix, summary = ingest(args.expression, args.samples)
    save_dataset(matrix, args.out)
    seconds = round(time.perf_counter() - start, 3)
    doc = run_manifest(args, {"summary": summary.to_dict()}, [args.out], dataset=matrix,
                       timings={"ingest_seconds": seconds})
    _save_manifest(args, f"{args.out}.manifest.json", doc)
    _echo(rows=matrix.n_rows, genes=matrix.n_genes, classes=matrix.n_classes,
          dropped_genes=summary.dropped_genes, dropped_unlabeled=summary.dropped_unlabeled_samples,
          fingerprint=matrix.fingerprint())


def cmd_split(args):
    _require_files(args.dataset)
    _require_parent(args.out)
    matrix = load_dataset(args.dataset)
    split = stratified_split(matrix, args.fraction, args.seed)
    _write_text(args.out, split.to_json(matrix.fingerprint()))
    doc = run_manifest(args, {"fraction": args.fraction}, [args.out], seeds={"split": args.seed},
                       dataset=matrix)
    _save_manifest(args, f"{args.out}.manifest.json", doc)
    _echo(train=len(split.train_rows), test=len(split.test_rows), seed=args.seed)


def cmd_synth(args):
    _require_parent(args.out)
    spec = SynthSpec(args.classes, args.samples_per_class, args.genes, args.informative_genes,
                     args.effect_size, args.noise_sd, args.seed)
    matrix, planted = generate_synthetic(spec)
    save_dataset(matrix, args.out)
    outputs = [args.out]
    if args.planted_out:
        _write_text(args.planted_out, "".join(f"{g}\n" for g in planted))
        outputs.append(args.planted_out)
    doc = run_manifest(args, asdict(spec), outputs, seeds={"synth": args.seed}, dataset=matrix)
    _save_manifest(args, f"{args.out}.manifest.json", doc)
    _echo(rows=matrix.n_rows, genes=matrix.n_genes, seed=args.seed, fingerprint=matrix.fingerprint())


def cmd_train(args):
    _require_files(args.dataset, args.split)
    _require_parent(args.out)
    configs = configs_from_args(args)
    matrix = load_dataset(args.dataset)
    split = _load_split(args.split, matrix)
    train = matrix.subset(rows=split.train_rows)
    family = FAMILY_FLAGS[args.model]
    knn_extra = {"train_rows": split.train_rows, "dataset_fingerprint": matrix.fingerprint()}
    model, seconds = train_model(family, train, configs, args.workers,
                                 **(knn_extra if family == "KNN" else {}))
    save_model(model, args.out)
    doc = run_manifest(args, {"family": family, "models": configs.to_dict()}, [args.out],
                       seeds={"model": args.seed, "split": split.seed}, dataset=matrix,
                       timings={"train_seconds": seconds})
    _save_manifest(args, f"{args.out}.manifest.json", doc)
    _echo(model=family, train_seconds=f"{seconds:.3f}", seed=args.seed)


def cmd_evaluate(args):
    _require_files(args.dataset, args.split, args.model_file)
    matrix = load_dataset(args.dataset)
    split = _load_split(args.split, matrix)
    model = load_model(args.model_file, dataset=matrix)
    if hasattr(model, "workers"):
        model.workers = args.workers
    test = matrix.subset(rows=split.test_rows, genes=list(model.gene_names))
    train_seconds = None
    model_manifest = Path(f"{args.model_file}.manifest.json")
    if model_manifest.is_file():
        train_seconds = json.loads(model_manifest.read_text()).get("timings", {}).get("train_seconds")
    report = evaluate(model, test, train_seconds=train_seconds, workers=args.workers)
    paths = render_report(report, args.out_dir)
    doc = run_manifest(args, {"family": model.family}, paths, seeds={"split": split.seed},
                       dataset=matrix, timings=timings_table([report]))
    _save_manifest(args, Path(args.out_dir) / "manifest.json", doc)
    _echo(model=model.family, macro_average=f"{report.macro_average:.4f}",
          overall_accuracy=f"{report.overall_accuracy:.4f}", test_seconds=f"{report.test_seconds:.3f}")


def cmd_select(args):
    _require_files(args.rf_model, args.gbm_model)
    _require_parent(args.out)
    rf, gbm = load_model(args.rf_model), load_model(args.gbm_model)
    if not isinstance(rf, ForestModel) or not isinstance(gbm, GbmModel):
        raise UsageError("--rf-model must be an RF model and --gbm-model a GBM model")
    rf_rank, gbm_rank = forest_importance(rf), gbm_importance(gbm)
    combined = combine_rankings(rf_rank, gbm_rank)
    _write_text(args.out, ranking_csv(combined, rf_rank, gbm_rank, args.top))
    doc = run_manifest(args, {"top": args.top}, [args.out])
    _save_manifest(args, f"{args.out}.manifest.json", doc)
    _echo(genes=len(combined) if args.top is None else min(args.top, len(combined)),
          top=",".join(combined.top(5)))


def cmd_cascade(args):
    _require_files(args.dataset, args.split)
    configs = configs_from_args(args)
    matrix = load_dataset(args.dataset)
    split = _load_split(args.split, matrix) if args.split else None
    result = run_cascade(matrix, args.schedule, configs, seed=args.seed, split=split,
                         fraction=args.fraction, workers=args.workers)
    paths = render_report(result, args.out_dir)
    seeds = {"model": args.seed, "split": result.split_seed}
    doc = run_manifest(args, {"models": configs.to_dict(), "schedule": list(args.schedule)}, paths,
                       seeds=seeds, dataset=matrix,
                       timings=timings_table(result.baseline.reports.values()))
    _save_manifest(args, Path(args.out_dir) / "manifest.json", doc)
    for k, accs in result.accuracy_rows():
        _echo(k=k, **{f: f"{a:.4f}" for f, a in accs.items()})
    _echo(seed=args.seed, top=",".join(result.top_genes(5)))


def cmd_replay(args):
    path = Path(args.manifest_path)
    _require_files(path)
    doc = json.loads(path.read_text(encoding="utf-8"))
    argv = list(doc["argv"]) + ["--manifest", os.devnull]
    if doc.get("workers"):
        argv += ["--workers", str(doc["workers"])]
    code = main(argv)
    if code != 0:
        return code
    mismatched = [p for p, digest in doc["artifacts"].items() if sha256_file(p) != digest]
    if mismatched:
        print("replay produced different bytes for:\n  " + "\n  ".join(mismatched), file=sys.stderr)
        return 2
    _echo(replayed=doc["command"], artifacts=len(doc["artifacts"]), identical="yes")
    return 0


HANDLERS = {"ingest": cmd_ingest, "split": cmd_split, "synth": cmd_synth, "train": cmd_train,
            "evaluate": cmd_evaluate, "select": cmd_select, "cascade": cmd_cascade,
            "replay": cmd_replay}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code
    try:
        if getattr(args, "workers", 0) is None:
            args.workers = _default_workers()
        return HANDLERS[args.command](args) or 0
    except UsageError as exc:
        print(f"expressml: error: {exc}", file=sys.stderr)
        return 1
    except ParamError as exc:
        print(f"expressml: invalid parameter: {exc}", file=sys.stderr)
        return 1
    except (DataError, ExpressmlError, OSError, UnicodeDecodeError) as exc:
        print(f"expressml: data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
