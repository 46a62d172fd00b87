"""AGMW binary weights container and its JSON debugging mirror.

Layout (all integers little-endian u32)::

    b"AGMW" | version | { name_len | name (utf-8) | rank | dims... | f64 payload }*

Records run until end of file.
"""

from __future__ import annotations

import json
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"AGMW"
VERSION = 1


class WeightsFormatError(ValueError):
    pass


class UnsupportedVersion(WeightsFormatError):
    pass


def encode(arrays: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION)]
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype="<f8")  # ascontiguousarray would promote 0-d to 1-d
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes(order="C"))
    return b"".join(parts)


def decode(buf: bytes) -> OrderedDict[str, np.ndarray]:
    if len(buf) < 8 or buf[:4] != MAGIC:
        raise WeightsFormatError("bad magic")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != VERSION:
        raise UnsupportedVersion(f"weights format version {version} not supported (expected {VERSION})")
    out: OrderedDict[str, np.ndarray] = OrderedDict()
    pos = 8
    end = len(buf)

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > end:
            raise WeightsFormatError("truncated weights file")
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    while pos < end:
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        count = int(np.prod(dims)) if rank else 1
        data = np.reshape(np.frombuffer(take(8 * count), dtype="<f8").astype(np.float64), dims)
        if name in out:
            raise WeightsFormatError(f"duplicate tensor {name}")
        out[name] = data
    return out


def save(path, arrays: Mapping[str, np.ndarray], json_mirror: bool = False) -> Path:
    path = Path(path)
    path.write_bytes(encode(arrays))
    if json_mirror:
        mirror = {k: {"shape": list(np.shape(v)), "data": np.asarray(v).reshape(-1).tolist()}
                  for k, v in arrays.items()}
        path.with_suffix(path.suffix + ".json").write_text(json.dumps(mirror))
    return path


def load(path) -> OrderedDict[str, np.ndarray]:
    return decode(Path(path).read_bytes())
