"""Model checkpoints: a JSON header followed by raw little-endian float64 payloads.

Layout::

    b"GTNCKPT\\n"                     8-byte magic
    <uint64 little-endian>           header length in bytes
    <header>                         UTF-8 JSON, keys sorted
    <payload_0><payload_1>...        concatenated tensors, C order

The header records the format version, the architecture spec, the feature
map state and a manifest of ``(name, shape, nbytes)`` entries in payload
order. Floats never pass through decimal text, so save -> load -> save is
byte-identical.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .architecture import ArchitectureSpec, Model
from .errors import BadMagicError, TruncatedFileError, ValidationError
from .features import FeatureMap

MAGIC = b"GTNCKPT\n"
FORMAT_VERSION = 1
_TABLE = "__feature_table__"


def _header(model: Model) -> tuple[dict, list[np.ndarray]]:
    fm = model.feature_map
    arrays = [(name, model.params[name]) for name in sorted(model.params)]
    if fm.table is not None:
        arrays.append((_TABLE, fm.table))
    manifest, payloads = [], []
    for name, a in arrays:
        a = np.ascontiguousarray(a, dtype="<f8")
        manifest.append({"name": name, "shape": list(a.shape), "nbytes": a.nbytes})
        payloads.append(a)
    header = {
        "format_version": FORMAT_VERSION,
        "spec": model.spec.to_dict(),
        "positive": bool(model.positive),
        "feature_map": {"kind": fm.kind, "out_dim": fm.out_dim, "bins": fm.bins,
                        "per_variable": fm.per_variable},
        "tensors": manifest,
    }
    return header, payloads


def dumps(model: Model) -> bytes:
    header, payloads = _header(model)
    text = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<Q", len(text)), text]
    parts.extend(p.tobytes() for p in payloads)
    return b"".join(parts)


def loads(buf: bytes) -> Model:
    if buf[:len(MAGIC)] != MAGIC:
        raise BadMagicError("not a checkpoint file", offset=0)
    pos = len(MAGIC)
    if len(buf) < pos + 8:
        raise TruncatedFileError("checkpoint ends inside the header length", offset=len(buf))
    (n,) = struct.unpack("<Q", buf[pos:pos + 8])
    pos += 8
    if len(buf) < pos + n:
        raise TruncatedFileError("checkpoint ends inside the header", offset=len(buf))
    header = json.loads(buf[pos:pos + n].decode("utf-8"))
    pos += n
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise ValidationError(f"unsupported checkpoint version {version!r}",
                              field="format_version")

    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        nbytes = int(entry["nbytes"])
        if nbytes != 8 * int(np.prod(shape, dtype=np.int64)):
            raise ValidationError(f"tensor {entry['name']!r}: {nbytes} bytes for shape {shape}",
                                  field=entry["name"])
        if len(buf) < pos + nbytes:
            raise TruncatedFileError(f"payload of {entry['name']!r} is truncated", offset=len(buf))
        tensors[entry["name"]] = np.frombuffer(buf, dtype="<f8", count=nbytes // 8,
                                               offset=pos).reshape(shape).astype(np.float64)
        pos += nbytes
    if pos != len(buf):
        raise ValidationError(f"{len(buf) - pos} trailing bytes after the payloads",
                              field="tensors")

    fmh = header["feature_map"]
    fm = FeatureMap(kind=fmh["kind"], out_dim=fmh["out_dim"], bins=fmh["bins"],
                    table=tensors.pop(_TABLE, None), per_variable=fmh["per_variable"])
    spec = ArchitectureSpec.from_dict(header["spec"])
    return Model(spec, tensors, fm, positive=header["positive"])


def save(model: Model, path) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(model))


def load(path) -> Model:
    with open(path, "rb") as fh:
        return loads(fh.read())
