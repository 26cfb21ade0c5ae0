"""Binary parameter checkpoints.

Layout (all integers little-endian)::

    magic    8 bytes  b"CMKLPAR1"
    count    uint32   number of tensors
    then per tensor:
      group_len uint16, group  utf-8 bytes (one of the four group tags)
      name_len  uint16, name   utf-8 bytes
      ndim      uint8
      shape     ndim x uint64
      payload   prod(shape) x float64, row-major (C order)
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from cmkl.numcore.params import ParamSet

MAGIC = b"CMKLPAR1"


def save_checkpoint(params: ParamSet, path: str | Path) -> None:
    items = list(params.items())
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(items)))
        for group, name, value in items:
            for text in (group, name):
                raw = text.encode("utf-8")
                fh.write(struct.pack("<H", len(raw)))
                fh.write(raw)
            fh.write(struct.pack("<B", value.ndim))
            fh.write(struct.pack(f"<{value.ndim}Q", *value.shape))
            fh.write(np.ascontiguousarray(value, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> ParamSet:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ValueError(f"{path}: not a parameter checkpoint")
    pos = 8
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    params = ParamSet()
    for _ in range(count):
        texts = []
        for _ in range(2):
            (n,) = struct.unpack_from("<H", data, pos)
            pos += 2
            texts.append(data[pos : pos + n].decode("utf-8"))
            pos += n
        (ndim,) = struct.unpack_from("<B", data, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}Q", data, pos)
        pos += 8 * ndim
        size = int(np.prod(shape)) if ndim else 1
        value = np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(shape)
        pos += 8 * size
        params.add(texts[0], texts[1], value.astype(np.float64))
    return params
