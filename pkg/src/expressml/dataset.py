"""Labeled expression matrix, its binary container, stratified splitting and
the planted-signal synthetic generator."""

import hashlib
import json
import struct
import zlib
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import rng as _rng
from .errors import (
    BadMagic,
    ChecksumMismatch,
    ClassTooSmall,
    ContainerError,
    DataError,
    InvalidParams,
    InvalidSpec,
    TruncatedFile,
    VersionMismatch,
)

MAGIC = b"EXML"
FORMAT_VERSION = 1


@dataclass(frozen=True, eq=False)
class LabeledMatrix:
    """Dense samples x genes matrix of z-scores with one class label per row.

    ``class_index`` maps every label to a contiguous integer. It may contain
    labels that do not occur in ``labels`` (row subsets keep the parent's
    class set so that models and reports agree on class numbering).
    """

    values: np.ndarray
    labels: tuple
    gene_names: tuple
    class_index: dict = field(default=None)

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float32)
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "gene_names", tuple(self.gene_names))
        if self.class_index is None:
            index = {label: i for i, label in enumerate(sorted(set(self.labels)))}
            object.__setattr__(self, "class_index", index)
        if values.ndim != 2:
            raise DataError("values must be a 2-D matrix")
        n, m = values.shape
        if len(self.labels) != n:
            raise DataError(f"{len(self.labels)} labels for {n} rows")
        if len(self.gene_names) != m:
            raise DataError(f"{len(self.gene_names)} gene names for {m} columns")
        if any(a >= b for a, b in zip(self.gene_names, self.gene_names[1:])):
            raise DataError("gene names must be unique and sorted")
        if not self.class_index:
            raise DataError("a labeled matrix needs at least one class")
        if sorted(self.class_index.values()) != list(range(len(self.class_index))):
            raise DataError("class indices must be contiguous from 0")
        missing = set(self.labels) - self.class_index.keys()
        if missing:
            raise DataError(f"labels missing from class index: {sorted(missing)}")
        y = np.fromiter((self.class_index[l] for l in self.labels), dtype=np.int64, count=n)
        y.flags.writeable = False
        object.__setattr__(self, "_y", y)

    @property
    def n_rows(self):
        return self.values.shape[0]

    @property
    def n_genes(self):
        return self.values.shape[1]

    @property
    def n_classes(self):
        return len(self.class_index)

    @property
    def classes(self):
        """Labels in class-index order."""
        return tuple(sorted(self.class_index, key=self.class_index.__getitem__))

    @property
    def y(self):
        """Integer class index of every row."""
        return self._y

    def subset(self, rows=None, genes=None):
        """Row and/or column restriction sharing this matrix's class index.

        ``genes`` may be column indices or gene names; columns keep their
        sorted order either way.
        """
        values = self.values
        labels = self.labels
        names = self.gene_names
        if rows is not None:
            rows = np.asarray(rows, dtype=np.int64)
            values = values[rows]
            labels = [labels[i] for i in rows]
        if genes is not None:
            genes = list(genes)
            if genes and isinstance(genes[0], str):
                lookup = {g: j for j, g in enumerate(self.gene_names)}
                try:
                    cols = sorted(lookup[g] for g in genes)
                except KeyError as exc:
                    raise DataError(f"unknown gene {exc.args[0]!r}") from None
            else:
                cols = sorted(int(j) for j in genes)
            values = values[:, cols]
            names = [names[j] for j in cols]
        return LabeledMatrix(values, labels, names, dict(self.class_index))

    def fingerprint(self):
        """SHA-256 of the serialized container."""
        return hashlib.sha256(dumps(self)).hexdigest()


# --- container ------------------------------------------------------------

def _pack_strings(strings):
    parts = []
    for s in strings:
        b = s.encode("utf-8")
        parts.append(struct.pack("<I", len(b)))
        parts.append(b)
    return b"".join(parts)


def dumps(matrix):
    """Serialize to the EXML container layout (see README)."""
    classes = matrix.classes
    n, m = matrix.values.shape
    body = b"".join([
        MAGIC,
        struct.pack("<IQQI", FORMAT_VERSION, n, m, len(classes)),
        _pack_strings(classes),
        _pack_strings(matrix.gene_names),
        matrix.y.astype("<u4").tobytes(),
        matrix.values.astype("<f4", copy=False).tobytes(),
    ])
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, size):
        end = self.pos + size
        if end > len(self.data):
            raise TruncatedFile(f"container truncated: needed {end} bytes, have {len(self.data)}")
        chunk = self.data[self.pos:end]
        self.pos = end
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def strings(self, count):
        out = []
        for _ in range(count):
            (size,) = self.unpack("<I")
            try:
                out.append(bytes(self.take(size)).decode("utf-8"))
            except UnicodeDecodeError as exc:
                raise ContainerError(f"bad UTF-8 in string table: {exc}") from None
        return out


def loads(data):
    data = memoryview(data)
    if len(data) < 4 or bytes(data[:4]) != MAGIC:
        if len(data) < 4 and MAGIC.startswith(bytes(data)):
            raise TruncatedFile("container truncated inside magic")
        raise BadMagic("not an EXML dataset container")
    r = _Reader(data)
    r.take(4)
    (version,) = r.unpack("<I")
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"container version {version}, expected {FORMAT_VERSION}")
    n, m, c = r.unpack("<QQI")
    classes = r.strings(c)
    genes = r.strings(m)
    label_idx = np.frombuffer(r.take(4 * n), dtype="<u4")
    values = np.frombuffer(r.take(4 * n * m), dtype="<f4").reshape(n, m)
    body_end = r.pos
    (crc,) = r.unpack("<I")
    if r.pos != len(data):
        raise ContainerError(f"{len(data) - r.pos} trailing bytes after checksum")
    if zlib.crc32(data[:body_end]) != crc:
        raise ChecksumMismatch("CRC32 mismatch")
    if label_idx.size and int(label_idx.max()) >= c:
        raise ContainerError("row label index out of range")
    labels = [classes[i] for i in label_idx]
    return LabeledMatrix(values.astype(np.float32), labels, genes,
                         {label: i for i, label in enumerate(classes)})


def save_dataset(matrix, path):
    with open(path, "wb") as fh:
        fh.write(dumps(matrix))


def load_dataset(path):
    with open(path, "rb") as fh:
        return loads(fh.read())


# --- splitting ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SplitIndices:
    train_rows: np.ndarray
    test_rows: np.ndarray
    seed: int
    fraction: float

    def to_json(self, dataset_fingerprint=None):
        doc = {
            "dataset_fingerprint": dataset_fingerprint,
            "fraction": self.fraction,
            "seed": self.seed,
            "test_rows": [int(i) for i in self.test_rows],
            "train_rows": [int(i) for i in self.train_rows],
        }
        return json.dumps(doc, sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        return cls(np.asarray(doc["train_rows"], dtype=np.int64),
                   np.asarray(doc["test_rows"], dtype=np.int64),
                   int(doc["seed"]), float(doc["fraction"]))


def _exact(fraction):
    # decimal reading, so 0.29 * 100 floors to 29 rather than 28
    return Fraction(repr(float(fraction)))


def split_quotas(class_sizes, fraction):
    """Per-class train counts under the largest-remainder rule.

    Each class gets ``floor(fraction * n_c)``; the slots left over up to
    ``floor(fraction * n)`` go to the classes with the largest fractional
    remainders, ties to the lower class index.
    """
    f = _exact(fraction)
    exact = [f * size for size in class_sizes]
    quotas = [int(q) for q in exact]  # Fraction -> int floors for q >= 0
    leftover = int(f * sum(class_sizes)) - sum(quotas)
    order = sorted(range(len(exact)), key=lambda c: (-(exact[c] - quotas[c]), c))
    for c in order[:leftover]:
        quotas[c] += 1
    return quotas


def stratified_split(matrix, fraction=0.75, seed=42):
    if not 0.0 < float(fraction) < 1.0:
        raise InvalidParams(f"fraction must lie in (0, 1), got {fraction}")
    seed = _rng.check_seed(seed)
    y = matrix.y
    classes = matrix.classes
    members = [np.flatnonzero(y == c) for c in range(len(classes))]
    present = [c for c in range(len(classes)) if members[c].size]
    for c in present:
        if members[c].size < 2:
            raise ClassTooSmall(classes[c], members[c].size)
    quotas = split_quotas([members[c].size for c in present], fraction)
    gen = _rng.stream(seed, 0x5B117)
    train = []
    for c, quota in zip(present, quotas):
        rows = members[c].copy()
        gen.shuffle(rows)
        train.append(rows[:quota])
    train_rows = np.sort(np.concatenate(train)) if train else np.empty(0, np.int64)
    mask = np.ones(matrix.n_rows, dtype=bool)
    mask[train_rows] = False
    return SplitIndices(train_rows.astype(np.int64), np.flatnonzero(mask).astype(np.int64),
                        seed, float(fraction))


# --- synthetic data -------------------------------------------------------

@dataclass(frozen=True)
class SynthSpec:
    classes: int = 17
    samples_per_class: int = 40
    genes: int = 2000
    informative_genes: int = 50
    effect_size: float = 1.0
    noise_sd: float = 1.0
    seed: int = 42

    def validate(self):
        def positive_int(name, value, minimum):
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < minimum:
                raise InvalidSpec(f"{name} must be an integer >= {minimum}, got {value!r}")

        positive_int("classes", self.classes, 1)
        positive_int("samples_per_class", self.samples_per_class, 2)
        positive_int("genes", self.genes, 1)
        positive_int("informative_genes", self.informative_genes, 0)
        if self.informative_genes > self.genes:
            raise InvalidSpec("informative_genes cannot exceed genes")
        if not self.effect_size > 0 or not np.isfinite(self.effect_size):
            raise InvalidSpec("effect_size must be a positive real")
        if not self.noise_sd > 0 or not np.isfinite(self.noise_sd):
            raise InvalidSpec("noise_sd must be a positive real")
        try:
            _rng.check_seed(self.seed)
        except InvalidParams as exc:
            raise InvalidSpec(str(exc)) from None


def synth_gene_name(j, width):
    return f"G{j:0{width}d}"


def synth_label(c, width):
    return f"Site{c:0{width}d}/Subtype{c:0{width}d}"


def generate_synthetic(spec):
    """Draw a planted-signal matrix; returns ``(matrix, planted_gene_names)``.

    Planted gene ``j`` has mean ``+effect`` in a random half of the classes
    and ``-effect`` in the others; every other gene is pure noise. Columns are
    standardized to mean 0 and unit variance afterwards.
    """
    spec.validate()
    gen = _rng.stream(spec.seed, 0x5E7)
    n_cls, per, g, k = spec.classes, spec.samples_per_class, spec.genes, spec.informative_genes
    planted = np.sort(gen.choice(g, size=k, replace=False)) if k else np.empty(0, np.int64)
    # balanced signs: per gene a random half of the classes (rounded up) is
    # shifted up and the rest down, so no planted gene is constant over classes
    base = np.where(np.arange(n_cls) < (n_cls + 1) // 2, 1, -1)
    signs = gen.permuted(np.repeat(base[:, None], k, axis=1), axis=0)
    y = np.repeat(np.arange(n_cls), per)
    x = gen.standard_normal((n_cls * per, g)) * spec.noise_sd
    if k:
        x[:, planted] += spec.effect_size * signs[y]
    x -= x.mean(axis=0)
    sd = x.std(axis=0)
    sd[sd == 0] = 1.0
    x /= sd

    gwidth = len(str(max(g - 1, 0)))
    cwidth = max(2, len(str(n_cls - 1)))
    names = [synth_gene_name(j, gwidth) for j in range(g)]
    labels = [synth_label(c, cwidth) for c in y]
    matrix = LabeledMatrix(x.astype(np.float32), labels, names)
    return matrix, [names[j] for j in planted]
