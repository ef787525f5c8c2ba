"""Flat binary checkpoint format.

Layout (all integers little-endian)::

    magic     8 bytes   b"SPRSTT\\x00\\x01"
    version   u32
    count     u32
    count x record:
        name_len u32, name (utf-8)
        dtype    u8     (see DTYPE_CODES)
        rank     u32
        extents  rank x u64
        payload  raw little-endian scalars, row-major

Round trips are bit-exact.  A run's config travels in the same file as a
uint8 record named ``__config__`` holding its key=value text.
"""

from __future__ import annotations

import io
import os
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"SPRSTT\x00\x01"
VERSION = 1
CONFIG_KEY = "__config__"

DTYPE_CODES = {
    np.dtype("<f8"): 1,
    np.dtype("<f4"): 2,
    np.dtype("<i8"): 3,
    np.dtype("u1"): 4,
}
CODE_DTYPES = {code: dt for dt, code in DTYPE_CODES.items()}


class CheckpointError(ValueError):
    pass


def dumps(tensors: Mapping[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(tensors)))
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder not in "|" else arr.dtype
        if dt not in DTYPE_CODES:
            raise CheckpointError(f"{name}: unsupported dtype {arr.dtype}")
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<BI", DTYPE_CODES[dt], arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype=dt).tobytes())
    return buf.getvalue()


def loads(blob: bytes) -> dict[str, np.ndarray]:
    view = memoryview(blob)
    if bytes(view[:8]) != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, count = struct.unpack_from("<II", view, 8)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 16
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<I", view, pos)
            pos += 4
            name = bytes(view[pos:pos + n]).decode("utf-8")
            pos += n
            code, rank = struct.unpack_from("<BI", view, pos)
            pos += 5
            shape = struct.unpack_from(f"<{rank}Q", view, pos)
            pos += 8 * rank
            dt = CODE_DTYPES[code]
            nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
            if pos + nbytes > len(view):
                raise CheckpointError(f"{name}: truncated payload")
            out[name] = np.frombuffer(view[pos:pos + nbytes], dtype=dt).reshape(shape).copy()
            pos += nbytes
    except (struct.error, KeyError) as exc:
        raise CheckpointError(f"corrupt checkpoint: {exc}") from exc
    return out


def save(path: str | os.PathLike, tensors: Mapping[str, np.ndarray], config_text: str | None = None) -> None:
    records = dict(tensors)
    if config_text is not None:
        records[CONFIG_KEY] = np.frombuffer(config_text.encode("utf-8"), dtype=np.uint8)
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(dumps(records))
    os.replace(tmp, path)


def load(path: str | os.PathLike) -> tuple[dict[str, np.ndarray], str | None]:
    records = loads(Path(path).read_bytes())
    cfg = records.pop(CONFIG_KEY, None)
    return records, (None if cfg is None else cfg.tobytes().decode("utf-8"))
