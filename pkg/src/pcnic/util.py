"""Small shared helpers."""

import numpy as np


def round_half_away(x):
    """Round to the nearest integer, halves away from zero.

    numpy's ``round`` rounds halves to even, which is the wrong convention
    for quantizing latents and pixel coordinates here: 1.5 -> 2, -1.5 -> -2,
    0.5 -> 1.
    """
    x = np.asarray(x)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def fmt_trim(value: float, decimals: int = 3) -> str:
    """Format with a fixed number of decimals, then strip trailing zeros.

    2.101 -> "2.101", 1.7300 -> "1.73", 0.0 -> "0".
    """
    s = f"{value:.{decimals}f}"
    if "." in s:
        s = s.rstrip("0").rstrip(".")
    if s == "-0":
        s = "0"
    return s
