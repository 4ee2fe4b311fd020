"""Binary checkpoint container.

Layout (little-endian)::

    magic       8 bytes   b"DSUMCKPT"
    version     u32
    config_len  u32
    config      config_len bytes of UTF-8 JSON (model config, vocab, extras)
    n_params    u32
    n_params records:
        name_len u16, name (UTF-8), ndim u8, dims u32 * ndim,
        payload  float32 * prod(dims), row-major

Loading rebuilds the parameter shapes from the stored config and rejects
any record that does not match.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import ParameterStore
from .corpus import Vocabulary
from .model import ModelConfig, Summarizer, parameter_shapes

MAGIC = b"DSUMCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    model: Summarizer
    epoch: int = 0
    valid_ppl: float = float("inf")
    train_config: dict = field(default_factory=dict)
    loss_weights: dict = field(default_factory=dict)

    def save(self, path) -> None:
        save_checkpoint(path, self)

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return load_checkpoint(path)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    model = ckpt.model
    header = {
        "model_config": model.config.to_dict(),
        "vocab": model.vocab.itos,
        "train_config": ckpt.train_config,
        "loss_weights": ckpt.loss_weights,
        "epoch": ckpt.epoch,
        "valid_ppl": ckpt.valid_ppl if np.isfinite(ckpt.valid_ppl) else None,
        "meta": model.meta,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(blob)), blob, struct.pack("<I", len(model.params))]
    for name, t in model.params.items():
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<B", t.ndim))
        parts.append(struct.pack(f"<{t.ndim}I", *t.shape))
        parts.append(np.ascontiguousarray(t.data, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, blob_len = struct.unpack_from("<II", raw, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    offset = 16
    header = json.loads(raw[offset:offset + blob_len].decode("utf-8"))
    offset += blob_len
    config = ModelConfig.from_dict(header["model_config"])
    vocab = Vocabulary(header["vocab"])
    expected = parameter_shapes(config, len(vocab))
    (n_params,) = struct.unpack_from("<I", raw, offset)
    offset += 4
    store = ParameterStore()
    for _ in range(n_params):
        (name_len,) = struct.unpack_from("<H", raw, offset)
        offset += 2
        name = raw[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<B", raw, offset)
        offset += 1
        shape = struct.unpack_from(f"<{ndim}I", raw, offset)
        offset += 4 * ndim
        if expected.get(name) != tuple(shape):
            raise CheckpointError(f"{path}: parameter {name} has shape {shape}, config expects "
                                  f"{expected.get(name)}")
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).astype(np.float64)
        offset += 4 * count
        store.add(name, data.reshape(shape))
    missing = set(expected) - set(store.names())
    if missing:
        raise CheckpointError(f"{path}: missing parameters {sorted(missing)}")
    valid_ppl = header.get("valid_ppl")
    model = Summarizer(config, vocab, store, header.get("meta") or {})
    return Checkpoint(model, header.get("epoch", 0),
                      float("inf") if valid_ppl is None else float(valid_ppl),
                      header.get("train_config") or {}, header.get("loss_weights") or {})
