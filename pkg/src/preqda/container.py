"""Self-describing binary container for checkpoints.

Layout (all integers little-endian):
  magic   b"PQDA"
  u32     format version (currently 1)
  u32     number of entries
  entry*  u16 name length, name (utf-8), u8 dtype (0=f64, 1=i64),
          u8 ndim, ndim * u64 dims, u64 absolute byte offset of the payload
  payloads, little-endian, in directory order
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"PQDA"
VERSION = 1
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<i8")}
_CODES = {np.dtype("float64"): 0, np.dtype("int64"): 1}


class ContainerError(ValueError):
    pass


def write_container(path, arrays: dict[str, np.ndarray]) -> None:
    entries = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype not in _CODES:
            if arr.dtype.kind not in "iuf b":
                raise ContainerError(
                    f"entry {name!r}: unsupported dtype {arr.dtype} "
                    "(only real numeric arrays are stored)")
            arr = arr.astype(np.float64)
        entries.append((name, arr))

    header = bytearray()
    header += MAGIC
    header += struct.pack("<II", VERSION, len(entries))
    dir_size = sum(2 + len(name.encode()) + 1 + 1 + 8 * arr.ndim + 8
                   for name, arr in entries)
    offset = len(header) + dir_size
    payload = bytearray()
    for name, arr in entries:
        enc = name.encode()
        header += struct.pack("<H", len(enc)) + enc
        header += struct.pack("<BB", _CODES[arr.dtype], arr.ndim)
        header += struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b""
        header += struct.pack("<Q", offset)
        data = arr.astype(arr.dtype.newbyteorder("<")).tobytes()
        payload += data
        offset += len(data)
    with open(path, "wb") as fh:
        fh.write(bytes(header) + bytes(payload))


def read_container(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise ContainerError(f"{path}: bad magic (not a PQDA container)")
    version, n_entries = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise ContainerError(f"{path}: unsupported container version {version}")
    pos = 12
    out = {}
    for _ in range(n_entries):
        (name_len,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        name = blob[pos:pos + name_len].decode()
        pos += name_len
        code, ndim = struct.unpack_from("<BB", blob, pos)
        pos += 2
        shape = struct.unpack_from(f"<{ndim}Q", blob, pos) if ndim else ()
        pos += 8 * ndim
        (offset,) = struct.unpack_from("<Q", blob, pos)
        pos += 8
        if code not in _DTYPES:
            raise ContainerError(f"{path}: unknown dtype code {code}")
        dtype = _DTYPES[code]
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype=dtype, count=count, offset=offset)
        out[name] = arr.reshape(shape).copy()
    return out
