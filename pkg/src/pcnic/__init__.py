"""pcnic: a point-cloud-assisted neural image codec for KITTI-style captures.

The package bundles a small reverse-mode autodiff engine, KITTI sensor-fusion
I/O, a dual-branch learned codec with channel-attention fusion, a range coder
with Gaussian conditional tables, and rate-distortion evaluation tools.
"""

from pcnic.errors import FormatError, NumericalError, PcnicError, UsageError

__all__ = ["FormatError", "NumericalError", "PcnicError", "UsageError"]

__version__ = "0.1.0"
