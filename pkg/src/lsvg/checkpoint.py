"""Versioned binary checkpoint: magic header, JSON metadata, and named
little-endian float32 parameter blobs."""

from __future__ import annotations

import hashlib
import json
import os
import struct
from pathlib import Path

import numpy as np

from .language import ClassVocabulary
from .model import Model, ModelConfig
from .numerics import DiffArray

MAGIC = b"LSVG1\n"


class CheckpointError(ValueError):
    pass


def config_hash(cfg: ModelConfig) -> str:
    canon = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def save_checkpoint(path: str | Path, model: Model,
                    rng_state: dict | None = None,
                    extra: dict | None = None) -> None:
    """Write atomically: header JSON, then each parameter as f32 LE bytes."""
    names = sorted(model.params)
    header = {
        "version": 1,
        "config": model.cfg.to_dict(),
        "config_hash": config_hash(model.cfg),
        "classes": model.vocab.classes,
        "synonyms": model.vocab.synonyms,
        "token_vocab": model.token_vocab,
        "rng_state": rng_state,
        "extra": extra or {},
        "params": [{"name": n, "shape": list(model.params[n].shape)}
                   for n in names],
    }
    blob = json.dumps(header, separators=(",", ":")).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for n in names:
            f.write(np.ascontiguousarray(
                model.params[n].values, dtype="<f4").tobytes())
    os.replace(tmp, path)


def load_checkpoint(path: str | Path) -> tuple[Model, dict]:
    """Rebuild the model (f32-rounded parameters) plus the raw header."""
    path = Path(path)
    data = path.read_bytes()
    if not data.startswith(MAGIC):
        raise CheckpointError(f"{path}: bad magic, not a checkpoint")
    off = len(MAGIC)
    if len(data) < off + 8:
        raise CheckpointError(f"{path}: truncated header")
    (hlen,) = struct.unpack_from("<Q", data, off)
    off += 8
    try:
        header = json.loads(data[off:off + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt header ({e})") from e
    off += hlen
    if header.get("version") != 1:
        raise CheckpointError(f"{path}: unsupported version {header.get('version')}")
    cfg = ModelConfig.from_dict(header["config"])
    params: dict[str, DiffArray] = {}
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = off + 4 * count
        if end > len(data):
            raise CheckpointError(f"{path}: truncated blob for {entry['name']}")
        vals = np.frombuffer(data[off:end], dtype="<f4").astype(np.float64)
        params[entry["name"]] = DiffArray(vals.reshape(shape),
                                          requires_grad=True)
        off = end
    if off != len(data):
        raise CheckpointError(f"{path}: {len(data) - off} trailing bytes")
    vocab = ClassVocabulary(classes=list(header["classes"]),
                            synonyms=dict(header.get("synonyms") or {}))
    model = Model(cfg, vocab, list(header["token_vocab"]), params)
    return model, header


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
