"""Versioned binary model files.

Layout::

    MAGIC (8 bytes) | format version (uint32 LE) | header length (uint32 LE)
    | header (UTF-8 JSON) | raw array bytes, concatenated

The header carries the model kind, its metadata (spec, schema, metrics)
and an index of the arrays (dtype, shape, byte offset). Arrays are stored
as raw little-endian buffers, so saving the same model twice gives the
same bytes and loading never unpickles anything.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from . import forest, gam

MAGIC = b"GHMODEL\x00"
FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    pass


def _codec(kind: str):
    if kind in ("gam", "gam_shrinkage"):
        return gam
    if kind == "random_forest":
        return forest
    raise ModelFormatError(f"unknown model kind {kind!r}")


def dumps(model) -> bytes:
    meta, arrays = _codec(model.kind).to_arrays(model)
    index = {}
    chunks = []
    offset = 0
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name])
        a = a.astype(a.dtype.newbyteorder("<"), copy=False)
        raw = a.tobytes()
        index[name] = {"dtype": a.dtype.str, "shape": list(a.shape), "offset": offset, "nbytes": len(raw)}
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({"kind": model.kind, "meta": meta, "arrays": index}, sort_keys=True,
                        allow_nan=True).encode("utf-8")
    return MAGIC + struct.pack("<II", FORMAT_VERSION, len(header)) + header + b"".join(chunks)


def loads(blob: bytes):
    if blob[:8] != MAGIC:
        raise ModelFormatError("not a geoharvest model file")
    version, hlen = struct.unpack("<II", blob[8:16])
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format version {version}")
    header = json.loads(blob[16:16 + hlen].decode("utf-8"))
    body = memoryview(blob)[16 + hlen:]
    arrays = {}
    for name, info in header["arrays"].items():
        buf = body[info["offset"]: info["offset"] + info["nbytes"]]
        arrays[name] = np.frombuffer(buf, dtype=np.dtype(info["dtype"])).reshape(info["shape"]).copy()
    return _codec(header["kind"]).from_arrays(header["meta"], arrays)


def save_model(model, path: str | Path) -> None:
    Path(path).write_bytes(dumps(model))


def load_model(path: str | Path):
    return loads(Path(path).read_bytes())
