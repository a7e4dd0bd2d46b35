"""Binary checkpoint format.

Layout::

    b"ENTNORM-CKPT\\n"
    uint64 little-endian: byte length of the manifest
    manifest: UTF-8 JSON (sorted keys) with format_version, hyper, vocab,
              tensors [[name, shape], ...] and provenance fingerprints
    tensor data: every tensor in manifest order, C-order float64 little-endian

Tensors of matching names and shapes converted from other sources can be
written with :func:`save_checkpoint` and loaded like any trained model.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from ..kb import EntNormError
from .model import CrossEncoder, Hyperparams, param_shapes
from .vocab import SPECIALS, Vocab

MAGIC = b"ENTNORM-CKPT\n"
FORMAT_VERSION = 1


def checkpoint_bytes(model: CrossEncoder, meta: dict | None = None) -> bytes:
    tensors = [[name, list(arr.shape)] for name, arr in model.params.items()]
    manifest = {
        "format_version": FORMAT_VERSION,
        "hyper": model.hyper.as_dict(),
        "vocab": model.vocab.tokens(),
        "tensors": tensors,
        "meta": meta or {},
    }
    head = json.dumps(manifest, sort_keys=True, ensure_ascii=False, separators=(",", ":")).encode("utf-8")
    body = b"".join(np.ascontiguousarray(arr, dtype="<f8").tobytes() for arr in model.params.values())
    return MAGIC + struct.pack("<Q", len(head)) + head + body


def save_checkpoint(model: CrossEncoder, path, meta: dict | None = None) -> str:
    """Write the checkpoint; returns the SHA-256 of the written bytes."""
    data = checkpoint_bytes(model, meta)
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def load_checkpoint(path) -> tuple[CrossEncoder, dict]:
    """Return ``(model, meta)``; ``meta["sha256"]`` is the file digest."""
    path = Path(path)
    if not path.exists():
        raise EntNormError(f"{path}: checkpoint not found")
    data = path.read_bytes()
    if not data.startswith(MAGIC):
        raise EntNormError(f"{path}: not an entnorm checkpoint")
    off = len(MAGIC)
    (n_head,) = struct.unpack_from("<Q", data, off)
    off += 8
    manifest = json.loads(data[off : off + n_head].decode("utf-8"))
    off += n_head
    if manifest.get("format_version") != FORMAT_VERSION:
        raise EntNormError(f"{path}: unsupported checkpoint version {manifest.get('format_version')}")
    hyper = Hyperparams(**manifest["hyper"])
    vocab = Vocab(manifest["vocab"])
    if len(vocab) != len(SPECIALS) + len(manifest["vocab"]):
        raise EntNormError(f"{path}: vocabulary contains duplicates")
    expected = param_shapes(len(vocab), hyper.H, hyper.L, hyper.max_len)
    declared = [(n, tuple(s)) for n, s in manifest["tensors"]]
    if declared != expected:
        raise EntNormError(f"{path}: tensor manifest does not match the declared architecture")
    params = {}
    for name, shape in declared:
        count = int(np.prod(shape, dtype=np.int64))
        end = off + 8 * count
        if end > len(data):
            raise EntNormError(f"{path}: truncated tensor data at {name}")
        params[name] = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(shape).astype(np.float64)
        off = end
    if off != len(data):
        raise EntNormError(f"{path}: {len(data) - off} trailing bytes after tensor data")
    meta = dict(manifest.get("meta", {}))
    meta["sha256"] = hashlib.sha256(data).hexdigest()
    return CrossEncoder(vocab, hyper, params), meta
