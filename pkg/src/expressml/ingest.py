"""Streaming readers for the long-format expression TSV and the sample
metadata TSV, and the long-to-wide pivot that joins them."""

import gzip
import io
import math
import os
from array import array
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .dataset import LabeledMatrix
from .errors import DuplicateCell, DuplicateSample, EmptyResult, MalformedRow, NonNumericScore

NA_TOKENS = frozenset({"", "na", "null"})
LABEL_SEP = "/"

_TILE_BITS = 7
_TILE = 1 << _TILE_BITS
_CHUNK = 1 << 15


class ExpressionRecord(NamedTuple):
    sample_id: str
    gene_name: str
    z_score: Optional[float]  # None means NA / missing


class SampleMeta(NamedTuple):
    sample_id: str
    primary_site: str
    histology_subtype: str

    @property
    def label(self):
        return class_label(self.primary_site, self.histology_subtype)


def class_label(primary_site, histology_subtype):
    return f"{primary_site.strip()}{LABEL_SEP}{histology_subtype.strip()}"


def _open_text(source):
    """Text view over a path, binary stream or text stream; gzip is sniffed.

    Returns ``(text, close)`` where ``close`` releases what was opened here
    without closing a caller-owned stream.
    """
    owned = None
    if isinstance(source, (str, os.PathLike)):
        source = owned = open(source, "rb")
    if isinstance(source, io.TextIOBase):
        return source, lambda: None
    buffered = source if hasattr(source, "peek") else io.BufferedReader(source)
    if buffered.peek(2)[:2] == b"\x1f\x8b":
        buffered = gzip.GzipFile(fileobj=buffered)
    text = io.TextIOWrapper(buffered, encoding="utf-8", newline="")

    def close():
        text.detach()
        if owned is not None:
            owned.close()

    return text, close


def _rows(source, ncols):
    """Yield ``(line_number, fields)`` for every data row after the header."""
    text, close = _open_text(source)
    try:
        header = text.readline()
        if not header:
            raise MalformedRow(1, "missing header row")
        if len(header.rstrip("\r\n").split("\t")) != ncols:
            raise MalformedRow(1, f"header must have {ncols} columns")
        lineno = 1
        for line in text:
            lineno += 1
            fields = line.rstrip("\r\n").split("\t")
            if len(fields) != ncols:
                raise MalformedRow(lineno, f"expected {ncols} columns, found {len(fields)}")
            yield lineno, fields
    finally:
        close()


def parse_score(token, lineno=0):
    token = token.strip()
    if token.lower() in NA_TOKENS:
        return None
    try:
        value = float(token)
    except ValueError:
        raise NonNumericScore(lineno, token) from None
    if not math.isfinite(value):
        raise NonNumericScore(lineno, token)
    return value


def parse_expression_stream(source):
    """Lazily yield one ``ExpressionRecord`` per data row, in file order."""
    for lineno, (sample, gene, score) in _rows(source, 3):
        sample = sample.strip()
        gene = gene.strip()
        if not sample or not gene:
            raise MalformedRow(lineno, "empty sample id or gene name")
        yield ExpressionRecord(sample, gene, parse_score(score, lineno))


def parse_sample_metadata(source):
    """Map every sample id to its ``primary_site/histology_subtype`` label."""
    labels = {}
    for lineno, fields in _rows(source, 3):
        meta = SampleMeta(*(f.strip() for f in fields))
        if not all(meta):
            raise MalformedRow(lineno, "empty metadata field")
        if meta.sample_id in labels:
            raise DuplicateSample(meta.sample_id)
        labels[meta.sample_id] = meta.label
    return labels


@dataclass
class IngestSummary:
    records: int = 0
    na_records: int = 0
    samples: int = 0
    genes_observed: int = 0
    genes_retained: int = 0
    dropped_genes: list = field(default_factory=list)
    dropped_unlabeled_samples: int = 0
    unlabeled_sample_ids: list = field(default_factory=list)
    duplicate_cells: int = 0

    def to_dict(self):
        return dict(sorted(self.__dict__.items()))


class _TiledGrid:
    """Sparse grid of fixed-size float32 tiles.

    Cells are addressed by (sample index, gene index) in first-seen order.
    Missing cells are NaN; a parallel ``seen`` byte per cell detects
    duplicates. Tiles are allocated on demand so nothing is ever copied
    while the grid grows.
    """

    def __init__(self):
        self.tiles = {}

    def _tile(self, key):
        tile = self.tiles.get(key)
        if tile is None:
            tile = (np.full((_TILE, _TILE), np.nan, dtype=np.float32),
                    np.zeros((_TILE, _TILE), dtype=np.uint8))
            self.tiles[key] = tile
        return tile

    def scatter(self, rows, cols, vals, names):
        key = (rows.astype(np.int64) << 32) | cols
        order = np.argsort(key, kind="stable")
        key = key[order]
        dup = np.flatnonzero(key[1:] == key[:-1])
        if dup.size:
            i = order[dup[0]]
            raise DuplicateCell(*names(rows[i], cols[i]))
        rows, cols, vals = rows[order], cols[order], vals[order]
        tkey = ((rows >> _TILE_BITS).astype(np.int64) << 32) | (cols >> _TILE_BITS)
        bounds = np.flatnonzero(tkey[1:] != tkey[:-1]) + 1
        for lo, hi in zip(np.r_[0, bounds], np.r_[bounds, len(tkey)]):
            r0 = int(rows[lo]) >> _TILE_BITS
            c0 = int(cols[lo]) >> _TILE_BITS
            values, seen = self._tile((r0, c0))
            lr = rows[lo:hi] & (_TILE - 1)
            lc = cols[lo:hi] & (_TILE - 1)
            hit = np.flatnonzero(seen[lr, lc])
            if hit.size:
                i = lo + hit[0]
                raise DuplicateCell(*names(rows[i], cols[i]))
            seen[lr, lc] = 1
            values[lr, lc] = vals[lo:hi]

    def complete_columns(self, n_rows, n_cols):
        """Count finite cells per column over the first ``n_rows`` rows."""
        finite = np.zeros(n_cols + _TILE, dtype=np.int64)
        for (r0, c0), (values, _) in self.tiles.items():
            lim = min(_TILE, n_rows - r0 * _TILE)
            finite[c0 * _TILE:(c0 + 1) * _TILE] += np.isfinite(values[:lim]).sum(axis=0)
        return finite[:n_cols] == n_rows

    def drain_into(self, out, row_pos, col_pos):
        """Move every tile into ``out`` (row/col position -1 = skip), freeing tiles."""
        for key in sorted(self.tiles):
            values, _ = self.tiles.pop(key)
            r0, c0 = key[0] * _TILE, key[1] * _TILE
            rp = row_pos[r0:r0 + _TILE]
            cp = col_pos[c0:c0 + _TILE]
            rsel = np.flatnonzero(rp >= 0)
            csel = np.flatnonzero(cp >= 0)
            if rsel.size and csel.size:
                out[np.ix_(rp[rsel], cp[csel])] = values[np.ix_(rsel, csel)]


def build_matrix(records, meta):
    """Pivot long-format records into a ``LabeledMatrix``.

    Rows are the samples present in both ``records`` and ``meta``; columns
    are the genes with a finite value in every one of those samples. Rows
    are sorted by sample id and columns by gene name, so the result does not
    depend on record order. Returns ``(matrix, IngestSummary)``.
    """
    if not meta:
        raise EmptyResult("sample metadata is empty")
    sample_idx = {}
    gene_idx = {}
    unlabeled = set()
    grid = _TiledGrid()
    summary = IngestSummary()
    rbuf, cbuf, vbuf = array("i"), array("i"), array("f")

    def names(r, c):
        return sample_names[int(r)], gene_names[int(c)]

    sample_names = []
    gene_names = []

    def flush():
        if rbuf:
            grid.scatter(np.frombuffer(rbuf, dtype=np.int32),
                         np.frombuffer(cbuf, dtype=np.int32),
                         np.frombuffer(vbuf, dtype=np.float32), names)
            del rbuf[:], cbuf[:], vbuf[:]

    nan = float("nan")
    n_records = n_na = 0
    for sample, gene, score in records:
        n_records += 1
        c = gene_idx.get(gene)
        if c is None:
            c = gene_idx[gene] = len(gene_names)
            gene_names.append(gene)
        r = sample_idx.get(sample)
        if r is None:
            if sample not in meta:
                unlabeled.add(sample)
                continue
            r = sample_idx[sample] = len(sample_names)
            sample_names.append(sample)
        if score is None:
            n_na += 1
            score = nan
        rbuf.append(r)
        cbuf.append(c)
        vbuf.append(score)
        if len(rbuf) >= _CHUNK:
            flush()
    flush()

    summary.records = n_records
    summary.na_records = n_na
    summary.genes_observed = len(gene_names)
    summary.dropped_unlabeled_samples = len(unlabeled)
    summary.unlabeled_sample_ids = sorted(unlabeled)
    n_s = len(sample_names)
    if n_s == 0:
        raise EmptyResult("no sample appears in both the expression data and the metadata")

    complete = grid.complete_columns(n_s, len(gene_names))
    kept = sorted((gene_names[j], j) for j in np.flatnonzero(complete))
    summary.dropped_genes = sorted(gene_names[j] for j in np.flatnonzero(~complete))
    if not kept:
        raise EmptyResult("no gene has a finite value in every retained sample")

    row_order = sorted(range(n_s), key=sample_names.__getitem__)
    row_pos = np.full(n_s + _TILE, -1, dtype=np.int64)
    row_pos[row_order] = np.arange(n_s)
    col_pos = np.full(len(gene_names) + _TILE, -1, dtype=np.int64)
    col_pos[[j for _, j in kept]] = np.arange(len(kept))

    values = np.empty((n_s, len(kept)), dtype=np.float32)
    grid.drain_into(values, row_pos, col_pos)

    summary.samples = n_s
    summary.genes_retained = len(kept)
    labels = [meta[sample_names[i]] for i in row_order]
    matrix = LabeledMatrix(values, labels, [g for g, _ in kept])
    return matrix, summary


def ingest(expression_path, sample_path):
    """Parse both TSV files and pivot them; returns ``(matrix, summary)``."""
    meta = parse_sample_metadata(sample_path)
    return build_matrix(parse_expression_stream(expression_path), meta)
