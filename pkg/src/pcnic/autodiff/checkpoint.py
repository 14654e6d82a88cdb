"""Named-array checkpoint container ("PCNW").

Byte layout, all integers little-endian:

    offset  size  field
    0       4     magic, ASCII "PCNW"
    4       2     format version (currently 1), uint16
    6       4     number of named arrays, uint32
    then per array, in file order:
            2     name length in bytes, uint16
            n     array name, UTF-8
            1     rank, uint8 (0 for scalars)
            4*r   dims, uint32 each, C-order
            4*k   values, IEEE-754 float32 little-endian, C-order

Values are stored as float32 regardless of the in-memory dtype.  Loading
returns float32 arrays in file order; callers cast as needed.
"""

from __future__ import annotations

import struct

import numpy as np

from pcnic.errors import FormatError

MAGIC = b"PCNW"
VERSION = 1


def save_arrays(path, arrays: dict[str, np.ndarray]) -> None:
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<HI", VERSION, len(arrays))
    for name, arr in arrays.items():
        raw = np.ascontiguousarray(arr, dtype="<f4")
        name_b = name.encode("utf-8")
        if len(name_b) > 0xFFFF:
            raise FormatError(f"array name too long: {len(name_b)} bytes")
        if raw.ndim > 0xFF:
            raise FormatError(f"array rank too large: {raw.ndim}")
        blob += struct.pack("<H", len(name_b))
        blob += name_b
        blob += struct.pack("<B", raw.ndim)
        for d in raw.shape:
            blob += struct.pack("<I", d)
        blob += raw.tobytes()
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(
                f"truncated checkpoint: wanted {n} bytes at offset {self.pos}, "
                f"file has {len(self.data)}"
            )
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_arrays(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        data = fh.read()
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise FormatError("not a PCNW checkpoint (bad magic)")
    (version, count) = r.unpack("<HI")
    if version != VERSION:
        raise FormatError(f"unsupported PCNW version {version}")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (rank,) = r.unpack("<B")
        dims = tuple(r.unpack("<" + "I" * rank)) if rank else ()
        n_values = int(np.prod(dims)) if rank else 1
        raw = r.take(4 * n_values)
        arr = np.frombuffer(raw, dtype="<f4").reshape(dims).copy()
        if name in out:
            raise FormatError(f"duplicate array name in checkpoint: {name!r}")
        out[name] = arr
    if r.pos != len(data):
        raise FormatError(
            f"trailing bytes in checkpoint: {len(data) - r.pos} after arrays"
        )
    return out
