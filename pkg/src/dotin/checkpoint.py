"""Flat binary checkpoints of named parameter blocks.

Layout (all integers little-endian)::

    magic      8 bytes  b"DOTINCK1"
    meta_len   u32      length of the metadata block
    meta       utf-8 JSON {"model": ModelSpec fields, "train": TrainConfig fields}
    n_blocks   u32
    n_blocks times:
        name_len u16, name (utf-8)
        ndim     u8,  dims u32 × ndim
        data     float64 × prod(dims), C order
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

from .config import TrainConfig
from .exceptions import IngestionError
from .model import DotinModel, ModelSpec

MAGIC = b"DOTINCK1"


def save_checkpoint(model: DotinModel, path: str | os.PathLike, cfg: TrainConfig | None = None) -> None:
    meta = json.dumps({"model": model.spec.to_dict(), "train": cfg.to_dict() if cfg else None}, sort_keys=True)
    meta_b = meta.encode()
    params = model.named_parameters()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(meta_b)))
        fh.write(meta_b)
        fh.write(struct.pack("<I", len(params)))
        for name, p in params.items():
            nb = name.encode()
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", p.data.ndim))
            fh.write(struct.pack(f"<{p.data.ndim}I", *p.data.shape))
            fh.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf, self.pos, self.path = buf, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise IngestionError(f"{self.path}: truncated checkpoint at byte {self.pos}")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_checkpoint(path: str | os.PathLike) -> tuple[dict, dict[str, np.ndarray]]:
    """Return ``(metadata, {name: array})``."""
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise IngestionError(f"cannot read checkpoint {path}: {exc}") from exc
    r = _Reader(buf, path)
    if r.take(len(MAGIC)) != MAGIC:
        raise IngestionError(f"{path}: not a dotin checkpoint (bad magic)")
    (meta_len,) = r.unpack("<I")
    meta = json.loads(r.take(meta_len).decode())
    (n_blocks,) = r.unpack("<I")
    arrays = {}
    for _ in range(n_blocks):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode()
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        count = int(np.prod(shape)) if ndim else 1
        arrays[name] = np.frombuffer(r.take(8 * count), dtype="<f8").reshape(shape).astype(np.float64)
    if r.pos != len(buf):
        raise IngestionError(f"{path}: {len(buf) - r.pos} trailing bytes")
    return meta, arrays


def load_checkpoint(path: str | os.PathLike) -> tuple[DotinModel, TrainConfig | None]:
    meta, arrays = read_checkpoint(path)
    spec = ModelSpec.from_dict(meta["model"])
    model = DotinModel.init(spec, 0)
    model.load_arrays(arrays)
    cfg = TrainConfig(**meta["train"]) if meta.get("train") else None
    return model, cfg
