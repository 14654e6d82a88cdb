"""Bitstream container ("PCNI") for one compressed sample.

Byte layout, integers little-endian:

    offset  size  field
    0       4     magic, ASCII "PCNI"
    4       1     format version (currently 1), uint8
    5       4     config hash, uint32 (binds stream to a checkpoint)
    9       1     lambda index, uint8 (255 when not from the standard ladder)
    10      2     image height, uint16
    12      2     image width, uint16
    14      4     hyper-latent payload length in bytes, uint32
    18      -     hyper-latent payload, then main-latent payload to EOF
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from pcnic.errors import FormatError

MAGIC = b"PCNI"
VERSION = 1
_HEADER = struct.Struct("<BIBHHI")


@dataclass
class Bitstream:
    config_hash: int
    lambda_index: int
    height: int
    width: int
    z_payload: bytes
    y_payload: bytes


def serialize_bitstream(bs: Bitstream) -> bytes:
    if not (0 <= bs.height <= 0xFFFF and 0 <= bs.width <= 0xFFFF):
        raise FormatError(f"image size {bs.height}x{bs.width} exceeds u16 header")
    head = MAGIC + _HEADER.pack(
        VERSION,
        bs.config_hash & 0xFFFFFFFF,
        bs.lambda_index & 0xFF,
        bs.height,
        bs.width,
        len(bs.z_payload),
    )
    return head + bs.z_payload + bs.y_payload


def deserialize_bitstream(data: bytes) -> Bitstream:
    if len(data) < 4 or data[:4] != MAGIC:
        raise FormatError("not a PCNI bitstream (bad magic)")
    if len(data) < 4 + _HEADER.size:
        raise FormatError("PCNI header truncated")
    version, config_hash, lam_idx, height, width, z_len = _HEADER.unpack(
        data[4:4 + _HEADER.size]
    )
    if version != VERSION:
        raise FormatError(f"unsupported PCNI version {version}")
    body = data[4 + _HEADER.size:]
    if len(body) < z_len:
        raise FormatError(
            f"PCNI payload truncated: header claims {z_len} hyper bytes, "
            f"{len(body)} present"
        )
    return Bitstream(
        config_hash=config_hash,
        lambda_index=lam_idx,
        height=height,
        width=width,
        z_payload=body[:z_len],
        y_payload=body[z_len:],
    )
