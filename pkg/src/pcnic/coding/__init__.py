"""Range coding with quantized Gaussian conditional tables."""

from pcnic.coding.gaussian import (
    DEFAULT_TAIL,
    PROBABILITY_BITS,
    TOTAL_FREQ,
    CdfTable,
    build_cdf,
    build_cdf_batch,
)
from pcnic.coding.range_coder import RangeDecoder, RangeEncoder, range_decode, range_encode
from pcnic.coding.container import Bitstream, deserialize_bitstream, serialize_bitstream

__all__ = [
    "Bitstream",
    "CdfTable",
    "DEFAULT_TAIL",
    "PROBABILITY_BITS",
    "RangeDecoder",
    "RangeEncoder",
    "TOTAL_FREQ",
    "build_cdf",
    "build_cdf_batch",
    "deserialize_bitstream",
    "range_decode",
    "range_encode",
    "serialize_bitstream",
]
