"""Versioned checkpoint container.

Layout::

    b"MRCACKPT"              8-byte magic
    uint32 LE                format version
    uint64 LE                header length N
    N bytes                  UTF-8 JSON header (sorted keys)
    tensor data              float64 little-endian, C order, concatenated

The header holds the network shape, relation vocabulary, embedding
fingerprint and a manifest of ``{name, shape, offset, nbytes}`` entries
where ``offset`` counts from the start of the tensor data.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .network import ModelParams, NetworkShape, ShapeError

MAGIC = b"MRCACKPT"
VERSION = 1
_DTYPE = np.dtype("<f8")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    params: ModelParams
    relation_vocab: tuple[str, ...]
    embedding: dict
    extra: dict = field(default_factory=dict)


def to_bytes(ckpt: Checkpoint) -> bytes:
    manifest = []
    chunks = []
    offset = 0
    for name in sorted(ckpt.params.tensors):
        arr = np.ascontiguousarray(ckpt.params.tensors[name], dtype=_DTYPE)
        data = arr.tobytes()
        manifest.append({"name": name, "shape": list(arr.shape),
                         "offset": offset, "nbytes": len(data)})
        chunks.append(data)
        offset += len(data)
    header = {
        "version": VERSION,
        "shape": ckpt.params.shape.to_dict(),
        "relations": list(ckpt.relation_vocab),
        "embedding": ckpt.embedding,
        "manifest": manifest,
        "extra": ckpt.extra,
    }
    hbytes = json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8")
    return MAGIC + struct.pack("<IQ", VERSION, len(hbytes)) + hbytes + b"".join(chunks)


def from_bytes(blob: bytes) -> Checkpoint:
    if blob[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    if len(blob) < 20:
        raise CheckpointError("truncated checkpoint header")
    version, hlen = struct.unpack("<IQ", blob[8:20])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        header = json.loads(blob[20:20 + hlen].decode("utf-8"))
        header["manifest"], header["shape"], header["relations"]
    except (UnicodeDecodeError, ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"unreadable checkpoint header: {exc}") from None
    data = memoryview(blob)[20 + hlen:]
    tensors = {}
    for entry in header["manifest"]:
        shape = tuple(entry["shape"])
        end = entry["offset"] + entry["nbytes"]
        if end > len(data) or entry["nbytes"] != _DTYPE.itemsize * int(np.prod(shape)):
            raise CheckpointError(f"tensor {entry['name']}: truncated or inconsistent")
        arr = np.frombuffer(data[entry["offset"]:end], dtype=_DTYPE).reshape(shape)
        tensors[entry["name"]] = arr.astype(np.float64)
    try:
        params = ModelParams(NetworkShape(**header["shape"]), tensors)
    except (ShapeError, TypeError) as exc:
        raise CheckpointError(f"inconsistent checkpoint: {exc}") from None
    relations = tuple(header["relations"])
    if len(relations) != params.shape.n_relations:
        raise CheckpointError("relation vocabulary size does not match the output layer")
    return Checkpoint(params, relations, header["embedding"], header.get("extra", {}))


def save(ckpt: Checkpoint, path) -> None:
    with open(path, "wb") as fh:
        fh.write(to_bytes(ckpt))


def load(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
