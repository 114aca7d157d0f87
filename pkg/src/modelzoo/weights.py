"""Binary container for named tensors.

Layout (all integers little-endian):

    offset 0   magic ``ZOOW`` (4 bytes)
    offset 4   format version, u32, currently 1
    offset 8   tensor count, u32
    offset 12  entries, back to back:
                 name length  u16
                 name         UTF-8 bytes
                 dtype        u8   (0 = f32, 1 = f64)
                 rank         u8   (1..4)
                 dims         u32 x rank
                 payload      raw little-endian values

Round trips are bit-exact and the payload byte order is fixed, so a
container written on any host reads back identically on any other.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ContainerError
from .tensor import MAX_RANK, Tensor

MAGIC = b"ZOOW"
FORMAT_VERSION = 1

_DTYPE_CODES = {"f32": 0, "f64": 1}
_CODE_DTYPES = {0: "<f4", 1: "<f8"}
_ITEM_SIZES = {0: 4, 1: 8}


def encode_weights(table: dict[str, Tensor]) -> bytes:
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION), struct.pack("<I", len(table))]
    seen = set()
    for name, tensor in table.items():
        if name in seen:
            raise ContainerError(f"duplicate tensor name {name!r}")
        seen.add(name)
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise ContainerError(f"tensor name too long: {name[:40]!r}...")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<BB", _DTYPE_CODES[tensor.dtype], tensor.rank))
        parts.append(struct.pack(f"<{tensor.rank}I", *tensor.shape))
        parts.append(tensor.tobytes())
    return b"".join(parts)


def decode_weights(data: bytes) -> dict[str, Tensor]:
    if data[:4] != MAGIC:
        raise ContainerError(f"bad magic {data[:4]!r}; expected {MAGIC!r}", offset=0)
    if len(data) < 12:
        raise ContainerError("container truncated in header", offset=len(data))
    (version,) = struct.unpack_from("<I", data, 4)
    if version != FORMAT_VERSION:
        raise ContainerError(f"unsupported format version {version}", offset=4)
    (count,) = struct.unpack_from("<I", data, 8)

    table: dict[str, Tensor] = {}
    offset = 12
    for _ in range(count):
        if offset + 2 > len(data):
            raise ContainerError("container truncated before tensor name", offset=offset)
        (name_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        if offset + name_len + 2 > len(data):
            raise ContainerError("container truncated inside tensor header", offset=offset)
        name = data[offset:offset + name_len].decode("utf-8")
        offset += name_len
        dtype_code, rank = struct.unpack_from("<BB", data, offset)
        offset += 2
        if dtype_code not in _CODE_DTYPES:
            raise ContainerError(f"tensor {name!r}: unknown dtype code {dtype_code}",
                                 offset=offset - 2)
        if not 1 <= rank <= MAX_RANK:
            raise ContainerError(f"tensor {name!r}: rank {rank} outside 1..{MAX_RANK}",
                                 offset=offset - 1)
        if offset + 4 * rank > len(data):
            raise ContainerError(f"tensor {name!r}: container truncated in dims", offset=offset)
        dims = struct.unpack_from(f"<{rank}I", data, offset)
        offset += 4 * rank
        size = 1
        for d in dims:
            if d < 1:
                raise ContainerError(f"tensor {name!r}: dim {d} must be positive", offset=offset)
            size *= d
        nbytes = size * _ITEM_SIZES[dtype_code]
        if offset + nbytes > len(data):
            raise ContainerError(
                f"truncated payload for tensor {name!r}: need {nbytes} bytes", offset=offset)
        arr = np.frombuffer(data, dtype=_CODE_DTYPES[dtype_code], count=size, offset=offset)
        offset += nbytes
        if name in table:
            raise ContainerError(f"duplicate tensor name {name!r}", offset=offset)
        table[name] = Tensor(arr.astype(arr.dtype.newbyteorder("=")).reshape(dims))
    if offset != len(data):
        raise ContainerError(f"{len(data) - offset} trailing bytes after last tensor",
                             offset=offset)
    return table


def save_weights(table: dict[str, Tensor], path: str | Path) -> None:
    Path(path).write_bytes(encode_weights(table))


def load_weights(path: str | Path) -> dict[str, Tensor]:
    return decode_weights(Path(path).read_bytes())
