"""EXMM model container shared by all five model families.

Layout (all integers little-endian)::

    "EXMM" | version u32 | family tag (u32 length + ASCII)
    | header JSON (u32 length + UTF-8, keys sorted)
    | array count u32 | per array: name (u32 length + UTF-8),
      dtype (u32 length + ASCII numpy descr), ndim u32, shape u64 * ndim,
      raw little-endian bytes
    | CRC32 of all preceding bytes
"""

import json
import struct
import zlib

import numpy as np

from .errors import BadMagic, ChecksumMismatch, ContainerError, TruncatedFile, VersionMismatch

MAGIC = b"EXMM"
FORMAT_VERSION = 1

_REGISTRY = {}


def register(cls):
    _REGISTRY[cls.family] = cls
    return cls


def _blob(b):
    return struct.pack("<I", len(b)) + b


def _le(arr):
    arr = np.ascontiguousarray(arr)
    return arr.astype(arr.dtype.newbyteorder("<"), copy=False)


def pack(family, header, arrays):
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION), _blob(family.encode("ascii")),
             _blob(json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")),
             struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        arr = _le(arr)
        parts.append(_blob(name.encode("utf-8")))
        parts.append(_blob(arr.dtype.str.encode("ascii")))
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def unpack(data):
    data = memoryview(data)
    if bytes(data[:4]) != MAGIC:
        raise BadMagic("not an EXMM model container")
    pos = 4

    def take(size):
        nonlocal pos
        if pos + size > len(data):
            raise TruncatedFile("model container truncated")
        chunk = data[pos:pos + size]
        pos += size
        return chunk

    def u32():
        return struct.unpack("<I", take(4))[0]

    def blob():
        return bytes(take(u32()))

    version = u32()
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"model container version {version}, expected {FORMAT_VERSION}")
    family = blob().decode("ascii")
    header = json.loads(blob().decode("utf-8"))
    arrays = {}
    for _ in range(u32()):
        name = blob().decode("utf-8")
        dtype = np.dtype(blob().decode("ascii"))
        ndim = u32()
        shape = struct.unpack(f"<{ndim}Q", take(8 * ndim))
        count = int(np.prod(shape, dtype=np.int64))
        arrays[name] = np.frombuffer(take(count * dtype.itemsize), dtype=dtype).reshape(shape).copy()
    body_end = pos
    (crc,) = struct.unpack("<I", take(4))
    if pos != len(data):
        raise ContainerError("trailing bytes after model checksum")
    if zlib.crc32(data[:body_end]) != crc:
        raise ChecksumMismatch("model CRC32 mismatch")
    return family, header, arrays


def dumps_model(model):
    header, arrays = model.to_payload()
    return pack(model.family, header, arrays)


def loads_model(data, dataset=None):
    family, header, arrays = unpack(data)
    try:
        cls = _REGISTRY[family]
    except KeyError:
        raise ContainerError(f"unknown model family {family!r}") from None
    return cls.from_payload(header, arrays, dataset=dataset)


def save_model(model, path):
    with open(path, "wb") as fh:
        fh.write(dumps_model(model))


def load_model(path, dataset=None):
    """Load any model family; KNN models need the training ``dataset``."""
    with open(path, "rb") as fh:
        return loads_model(fh.read(), dataset=dataset)


def pack_trees(trees):
    """Concatenate array-encoded trees with per-tree node offsets."""
    offsets = np.zeros(len(trees) + 1, dtype=np.int64)
    offsets[1:] = np.cumsum([t.n_nodes for t in trees])
    out = {"tree_offsets": offsets}
    for key in ("feature", "threshold", "left", "right", "value", "n_samples", "decrease"):
        out[f"tree_{key}"] = np.concatenate([getattr(t, key) for t in trees])
    return out


def unpack_trees(arrays):
    from .cart import Tree

    offsets = arrays["tree_offsets"]
    trees = []
    for a, b in zip(offsets[:-1], offsets[1:]):
        trees.append(Tree(**{key: np.ascontiguousarray(arrays[f"tree_{key}"][a:b])
                             for key in ("feature", "threshold", "left", "right", "value",
                                         "n_samples", "decrease")}))
    return trees
