"""Carry-less range coder.

64-bit state, renormalized 32 bits at a time, 16-bit probability precision.
The carry problem is avoided the classic way: when the top 32 bits of ``low``
and ``low + range`` disagree and the range has shrunk below ``BOTTOM``, the
interval is truncated down to the next BOTTOM boundary instead of propagating
a carry.  With BOTTOM = 2**28 the divider ``range // TOTAL_FREQ`` keeps at
least 12 bits, so the truncation loss stays around 3e-4 bits per symbol.

Streams are self-terminating only in length: the encoder flushes 8 bytes and
the decoder consumes exactly the emitted byte count, so payload boundaries
must be tracked by the container.
"""

from __future__ import annotations

from pcnic.coding.gaussian import BYTE_TABLE, TOTAL_FREQ, CdfTable, residual_bytes, residual_value
from pcnic.errors import FormatError

_MASK = (1 << 64) - 1
_TOP = 1 << 32
_BOTTOM = 1 << 28
_WRAP = 1 << 64


class RangeEncoder:
    def __init__(self):
        self.low = 0
        self.range = _MASK
        self._out = bytearray()

    def _encode_freq(self, cum: int, freq: int) -> None:
        r = self.range // TOTAL_FREQ
        self.low += cum * r
        self.range = freq * r
        while True:
            if (self.low ^ (self.low + self.range)) < _TOP:
                pass
            elif self.range < _BOTTOM:
                self.range = (_WRAP - self.low) & (_BOTTOM - 1)
            else:
                break
            self._out += (self.low >> 32).to_bytes(4, "big")
            self.low = (self.low << 32) & _MASK
            self.range <<= 32

    def encode_value(self, value: int, table: CdfTable) -> None:
        """Encode one integer; out-of-range values take the escape path."""
        idx = table.index_for(value)
        self._encode_freq(int(table.cum[idx]), int(table.counts[idx]))
        if idx == table.escape_index:
            hi, lo = residual_bytes(value)
            self._encode_freq(int(BYTE_TABLE.cum[hi]), int(BYTE_TABLE.counts[hi]))
            self._encode_freq(int(BYTE_TABLE.cum[lo]), int(BYTE_TABLE.counts[lo]))

    def finish(self) -> bytes:
        for _ in range(2):
            self._out += (self.low >> 32).to_bytes(4, "big")
            self.low = (self.low << 32) & _MASK
        return bytes(self._out)


class RangeDecoder:
    def __init__(self, data: bytes):
        self._data = data
        self._pos = 0
        self.low = 0
        self.range = _MASK
        self.code = 0
        for _ in range(2):
            self.code = (self.code << 32) | self._read32()

    def _read32(self) -> int:
        if self._pos + 4 > len(self._data):
            raise FormatError(
                f"range-coded payload truncated at byte {self._pos} of "
                f"{len(self._data)}"
            )
        v = int.from_bytes(self._data[self._pos:self._pos + 4], "big")
        self._pos += 4
        return v

    def _decode_freq(self, table) -> int:
        r = self.range // TOTAL_FREQ
        target = (self.code - self.low) // r
        if target >= TOTAL_FREQ:
            target = TOTAL_FREQ - 1
        idx = table.find(int(target))
        self.low += int(table.cum[idx]) * r
        self.range = int(table.counts[idx]) * r
        while True:
            if (self.low ^ (self.low + self.range)) < _TOP:
                pass
            elif self.range < _BOTTOM:
                self.range = (_WRAP - self.low) & (_BOTTOM - 1)
            else:
                break
            self.code = ((self.code << 32) | self._read32()) & _MASK
            self.low = (self.low << 32) & _MASK
            self.range <<= 32
        return idx

    def decode_value(self, table: CdfTable) -> int:
        idx = self._decode_freq(table)
        if idx == table.escape_index:
            hi = self._decode_freq(BYTE_TABLE)
            lo = self._decode_freq(BYTE_TABLE)
            return residual_value(hi, lo)
        return table.value_for(idx)

    def bytes_consumed(self) -> int:
        return self._pos


def range_encode(symbols, tables) -> bytes:
    """Encode integer symbols against per-symbol tables (entries may repeat)."""
    symbols = list(symbols)
    tables = list(tables)
    if len(symbols) != len(tables):
        raise ValueError(
            f"got {len(symbols)} symbols but {len(tables)} tables"
        )
    enc = RangeEncoder()
    for value, table in zip(symbols, tables):
        enc.encode_value(int(value), table)
    return enc.finish()


def range_decode(data: bytes, tables) -> list[int]:
    """Decode exactly one symbol per table from a finished stream."""
    tables = list(tables)
    dec = RangeDecoder(data)
    return [dec.decode_value(table) for table in tables]
