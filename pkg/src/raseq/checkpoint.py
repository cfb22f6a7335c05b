"""Self-describing binary checkpoints.

Layout::

    b"RASEQ2SEQ"                magic
    uint32 LE                   format version
    uint32 LE                   manifest length in bytes
    manifest (UTF-8 JSON)       hyper-parameters, vocabularies and one record
                                per parameter: name, shape, byte offset
    payload                     row-major little-endian float32 arrays

Offsets are relative to the start of the payload. The manifest is written
with sorted keys so identical models give byte-identical files.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import asdict
from pathlib import Path
from typing import Optional

import numpy as np

from .data import Vocab
from .errors import CheckpointError
from .model import ModelConfig, Seq2Seq
from .tensor import Tensor

MAGIC = b"RASEQ2SEQ"
VERSION = 1


def dumps(model: Seq2Seq, src_vocab: Optional[Vocab] = None, tgt_vocab: Optional[Vocab] = None,
          extra: Optional[dict] = None) -> bytes:
    records, chunks, offset = [], [], 0
    for name, p in model.params.items():
        raw = np.ascontiguousarray(p.data, dtype="<f4").tobytes()
        records.append({"name": name, "shape": list(p.shape), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    manifest = {
        "config": asdict(model.config),
        "params": records,
        "src_vocab": src_vocab.tokens if src_vocab is not None else None,
        "tgt_vocab": tgt_vocab.tokens if tgt_vocab is not None else None,
        "extra": extra or {},
    }
    blob = json.dumps(manifest, sort_keys=True, ensure_ascii=False).encode("utf-8")
    return MAGIC + struct.pack("<II", VERSION, len(blob)) + blob + b"".join(chunks)


def save(path, model: Seq2Seq, src_vocab: Optional[Vocab] = None, tgt_vocab: Optional[Vocab] = None,
         extra: Optional[dict] = None) -> None:
    """Write atomically: a crash never leaves a truncated checkpoint at ``path``."""
    path = Path(path)
    data = dumps(model, src_vocab, tgt_vocab, extra)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def loads(data: bytes):
    """Parse checkpoint bytes into ``(model, src_vocab, tgt_vocab, extra)``."""
    if not data.startswith(MAGIC):
        raise CheckpointError("not a raseq checkpoint (bad magic)")
    head = len(MAGIC)
    if len(data) < head + 8:
        raise CheckpointError("checkpoint header truncated")
    version, size = struct.unpack_from("<II", data, head)
    if version != VERSION:
        raise CheckpointError(f"checkpoint format version {version} is not supported (expected {VERSION})")
    start = head + 8
    try:
        manifest = json.loads(data[start : start + size].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint manifest: {exc}") from None
    payload = data[start + size :]
    config = ModelConfig(**manifest["config"])
    params = {}
    for rec in manifest["params"]:
        shape = tuple(rec["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        end = rec["offset"] + 4 * count
        if end > len(payload):
            raise CheckpointError(f"payload for {rec['name']} is truncated")
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=rec["offset"])
        params[rec["name"]] = Tensor(arr.astype(np.float32).reshape(shape), requires_grad=True, name=rec["name"])
    model = Seq2Seq(config, params)
    src = Vocab(manifest["src_vocab"]) if manifest.get("src_vocab") else None
    tgt = Vocab(manifest["tgt_vocab"]) if manifest.get("tgt_vocab") else None
    return model, src, tgt, manifest.get("extra", {})


def load(path):
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    return loads(data)
