"""Versioned binary checkpoints for model weights, buffers and Adam state.

Layout (little endian)::

    magic  b"TTSC" | u32 version | u32 len + model-config JSON | u32 len + meta JSON
    u32 record count, then per record:
        u8 kind | u16 name length | UTF-8 name | u8 ndim | u32 dims... | float64 data
    trailer b"TEND"

``kind`` is one of parameter, buffer, Adam first moment, Adam second moment.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .model import ModelConfig, TTSModel

MAGIC = b"TTSC"
TRAILER = b"TEND"
VERSION = 1
KINDS = {0: "param", 1: "buffer", 2: "adam_m", 3: "adam_v"}
KIND_IDS = {v: k for k, v in KINDS.items()}


class CheckpointError(ValueError):
    """Raised for unreadable, truncated or mismatched checkpoint files."""


def _records(model: TTSModel, opt=None):
    for name, p in model.named_parameters():
        yield "param", name, p.data
    for name, buf in model.named_buffers():
        yield "buffer", name, buf
    if opt is not None:
        for name in opt.params:
            yield "adam_m", name, opt.m[name]
            yield "adam_v", name, opt.v[name]


def save_checkpoint(path, model: TTSModel, opt=None, meta: dict | None = None) -> Path:
    """Write ``model`` (and optionally optimizer state) to ``path`` atomically."""
    path = Path(path)
    meta = dict(meta or {})
    if opt is not None:
        meta["adam_step"] = opt.step_count
    cfg_json = json.dumps(model.config.to_dict(), sort_keys=True).encode()
    meta_json = json.dumps(meta, sort_keys=True).encode()
    records = list(_records(model, opt))
    chunks = [MAGIC, struct.pack("<I", VERSION),
              struct.pack("<I", len(cfg_json)), cfg_json,
              struct.pack("<I", len(meta_json)), meta_json,
              struct.pack("<I", len(records))]
    for kind, name, arr in records:
        raw = name.encode("utf-8")
        arr = np.asarray(arr, dtype="<f8")  # ascontiguousarray would promote 0-d to 1-d
        chunks.append(struct.pack("<BH", KIND_IDS[kind], len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes(order="C"))
    chunks.append(TRAILER)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    tmp.replace(path)
    return path


class _Reader:
    def __init__(self, blob: bytes):
        self.blob, self.pos = blob, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError("checkpoint is truncated")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_checkpoint(path) -> tuple[ModelConfig, dict, dict]:
    """Parse a checkpoint into ``(config, meta, {(kind, name): array})`` without applying it."""
    r = _Reader(Path(path).read_bytes())
    if r.take(4) != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}, expected {VERSION}")
    try:
        cfg = ModelConfig.from_dict(json.loads(r.take(r.unpack("<I")[0])))
        meta = json.loads(r.take(r.unpack("<I")[0]))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
    (count,) = r.unpack("<I")
    arrays = {}
    for _ in range(count):
        kind_id, name_len = r.unpack("<BH")
        if kind_id not in KINDS:
            raise CheckpointError(f"unknown record kind {kind_id}")
        name = r.take(name_len).decode("utf-8")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I") if ndim else ()
        n = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(r.take(8 * n), dtype="<f8").reshape(shape).astype(np.float64)
        arrays[(KINDS[kind_id], name)] = data
    if r.take(4) != TRAILER:
        raise CheckpointError("checkpoint trailer missing")
    return cfg, meta, arrays


def load_checkpoint(path, model: TTSModel | None = None, opt=None):
    """Restore a checkpoint, building a model from the stored config when none is given.

    Every expected name and shape is verified before anything is copied, so a
    mismatched or truncated file leaves ``model`` and ``opt`` untouched.
    Returns ``(model, meta)``.
    """
    cfg, meta, arrays = read_checkpoint(path)
    if model is None:
        model = TTSModel(cfg, seed=0)
    expected = list(_records(model, opt if opt is not None else None))
    for kind, name, current in expected:
        stored = arrays.get((kind, name))
        if stored is None:
            raise CheckpointError(f"checkpoint lacks {kind} {name!r}")
        if stored.shape != np.shape(current):
            raise CheckpointError(f"shape mismatch for {kind} {name!r}: "
                                  f"checkpoint {stored.shape} vs model {np.shape(current)}")
    if opt is not None and "adam_step" not in meta:
        raise CheckpointError("checkpoint carries no optimizer state")
    for kind, name, current in expected:
        current[...] = arrays[(kind, name)]
    if opt is not None:
        opt.step_count = int(meta["adam_step"])
    return model, meta
