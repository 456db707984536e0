"""Checkpoint files: model tensors plus the metadata needed to rebuild the model.

Layout (little-endian): magic ``TPAC``, u32 version, u32 metadata length,
UTF-8 JSON metadata, u32 tensor count, then per tensor u32 name length,
name, u32 ndim, ndim x u32 dims, float64 values. Values are kept at full
precision so a reloaded model reproduces its training-time predictions.
"""
from __future__ import annotations

import json
import struct
from collections import OrderedDict

import numpy as np

from .dataio import DataFormatError

MAGIC = b"TPAC"
VERSION = 1


def save_checkpoint(path, tensors: dict, meta: dict) -> None:
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(arr, dtype="<f8")
            key = name.encode("utf-8")
            fh.write(struct.pack("<I", len(key)))
            fh.write(key)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def _read(fh, n):
    buf = fh.read(n)
    if len(buf) != n:
        raise DataFormatError("truncated checkpoint")
    return buf


def load_checkpoint(path):
    """Returns ``(tensors, meta)``."""
    with open(path, "rb") as fh:
        if _read(fh, 4) != MAGIC:
            raise DataFormatError("bad magic: not a TPAC checkpoint")
        version, n = struct.unpack("<II", _read(fh, 8))
        if version != VERSION:
            raise DataFormatError(f"unsupported checkpoint version {version}")
        meta = json.loads(_read(fh, n).decode("utf-8"))
        (count,) = struct.unpack("<I", _read(fh, 4))
        tensors = OrderedDict()
        for _ in range(count):
            (k,) = struct.unpack("<I", _read(fh, 4))
            name = _read(fh, k).decode("utf-8")
            (ndim,) = struct.unpack("<I", _read(fh, 4))
            shape = struct.unpack(f"<{ndim}I", _read(fh, 4 * ndim))
            size = int(np.prod(shape)) if ndim else 1
            tensors[name] = np.frombuffer(_read(fh, 8 * size), dtype="<f8").reshape(shape).astype(np.float64)
    return tensors, meta


PROMPTS_KEY = "__prompts__"


def save_model(path, state: dict, prompts: np.ndarray, cfg, dim: int, num_classes: int, **extra) -> None:
    """Model state plus fixed prompt embeddings and the resolved config."""
    tensors = OrderedDict(state)
    tensors[PROMPTS_KEY] = np.asarray(prompts, dtype=np.float64)
    meta = {"config": cfg.to_dict(), "dim": dim, "num_classes": num_classes, **extra}
    save_checkpoint(path, tensors, meta)


def load_model(path):
    """Rebuild a model from :func:`save_model` output. Returns ``(model, prompts, cfg, meta)``."""
    from .config import Config
    from .model import TPAModel

    tensors, meta = load_checkpoint(path)
    try:
        cfg = Config.from_dict(meta["config"])
        prompts = tensors.pop(PROMPTS_KEY)
        model = TPAModel(meta["dim"], meta["num_classes"], cfg.extractor, cfg.classifier, cfg.cvaesm,
                         np.random.default_rng(0))
        model.load_state_dict(tensors)
    except (KeyError, ValueError) as exc:
        raise DataFormatError(f"checkpoint does not describe a model: {exc}") from None
    return model, prompts, cfg, meta
