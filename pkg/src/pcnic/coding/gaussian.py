"""Quantized Gaussian CDF tables for the range coder.

A table covers the integer symbols -t..t plus one escape slot.  Bin masses
come from the Gaussian CDF evaluated at half-integer edges; they are scaled
to a fixed 16-bit total (65536) by largest-remainder rounding with every bin
held at >= 1 count, so every symbol stays codable.

The CDF is evaluated through a fixed rational approximation of erf
(Abramowitz & Stegun 7.1.26, max abs error 1.5e-7) with a hand-rolled
exponential, using only IEEE-754 add/sub/mul/div/floor/ldexp.  Those
operations are correctly rounded everywhere, so the tables come out
bit-identical across platforms; a libm exp() would not guarantee that.
"""

from __future__ import annotations

import numpy as np

from pcnic.errors import FormatError

PROBABILITY_BITS = 16
TOTAL_FREQ = 1 << PROBABILITY_BITS

SIGMA_MIN = 0.11
DEFAULT_TAIL = 24

# Cody-Waite split of ln(2) for argument reduction.
_LN2_HI = 6.93147180369123816490e-01
_LN2_LO = 1.90821492927058770002e-10
_LOG2E = 1.4426950408889634074
_SQRT1_2 = 0.70710678118654752440

# Abramowitz & Stegun 7.1.26 coefficients.
_ERF_P = 0.3275911
_ERF_A1 = 0.254829592
_ERF_A2 = -0.284496736
_ERF_A3 = 1.421413741
_ERF_A4 = -1.453152027
_ERF_A5 = 1.061405429

_EXP_TERMS = 13


def det_exp(y: np.ndarray) -> np.ndarray:
    """Deterministic exp() from correctly-rounded primitives.

    Reduces y = n*ln2 + f with |f| <= ln2/2, evaluates a fixed-degree Taylor
    series of exp(f) in Horner form, then scales by 2**n via ldexp (exact).
    Relative error is a few 1e-17 over the domain used here.
    """
    y = np.asarray(y, dtype=np.float64)
    n = np.floor(y * _LOG2E + 0.5)
    f = (y - n * _LN2_HI) - n * _LN2_LO
    r = np.ones_like(f)
    for k in range(_EXP_TERMS, 0, -1):
        r = 1.0 + (f / k) * r
    return np.ldexp(r, n.astype(np.int64))


def det_erf(x: np.ndarray) -> np.ndarray:
    """Odd-symmetric erf approximation; deterministic across platforms."""
    x = np.asarray(x, dtype=np.float64)
    ax = np.abs(x)
    t = 1.0 / (1.0 + _ERF_P * ax)
    poly = ((((_ERF_A5 * t + _ERF_A4) * t + _ERF_A3) * t + _ERF_A2) * t
            + _ERF_A1) * t
    y = 1.0 - poly * det_exp(-(ax * ax))
    return np.where(x >= 0, y, -y)


class CdfTable:
    """Frequency table over symbols -t..t plus a trailing escape slot.

    ``counts`` has ``2*t + 2`` entries summing to ``TOTAL_FREQ`` with every
    entry >= 1; ``cum`` is the exclusive prefix sum with a leading 0.
    """

    __slots__ = ("t", "counts", "cum")

    def __init__(self, t: int, counts: np.ndarray, cum: np.ndarray):
        self.t = t
        self.counts = counts
        self.cum = cum

    @property
    def escape_index(self) -> int:
        return 2 * self.t + 1

    def index_for(self, value: int) -> int:
        """Symbol slot for an integer value; escape when out of range."""
        if -self.t <= value <= self.t:
            return int(value) + self.t
        return self.escape_index

    def value_for(self, index: int) -> int:
        if index == self.escape_index:
            raise ValueError("escape slot has no inline value")
        return index - self.t

    def find(self, target: int) -> int:
        """Slot whose [cum, cum+count) interval contains ``target``."""
        return int(np.searchsorted(self.cum, target, side="right")) - 1


class ByteTable:
    """Flat 256-way table used for the raw escape residual bytes."""

    __slots__ = ("counts", "cum")

    def __init__(self):
        self.counts = np.full(256, TOTAL_FREQ // 256, dtype=np.int64)
        self.cum = np.concatenate(([0], np.cumsum(self.counts)))

    def find(self, target: int) -> int:
        return target // (TOTAL_FREQ // 256)


BYTE_TABLE = ByteTable()


def build_cdf_batch(mus, sigmas, t: int = DEFAULT_TAIL) -> list[CdfTable]:
    """Vectorized table construction for one (mu, sigma) pair per symbol."""
    mus = np.asarray(mus, dtype=np.float64).reshape(-1)
    sigmas = np.asarray(sigmas, dtype=np.float64).reshape(-1)
    if mus.shape != sigmas.shape:
        raise ValueError(f"mu/sigma shape mismatch: {mus.shape} vs {sigmas.shape}")
    if t < 1:
        raise ValueError(f"tail bound t must be >= 1, got {t}")
    if sigmas.size and float(sigmas.min()) < SIGMA_MIN - 1e-9:
        raise ValueError(
            f"sigma {float(sigmas.min())} below lower bound {SIGMA_MIN}"
        )
    n = mus.shape[0]
    n_bins = 2 * t + 2

    # CDF at the 2t+2 half-integer bin edges, shared between neighbours.
    edges = np.arange(-t, t + 2, dtype=np.float64) - 0.5
    u = (edges[None, :] - mus[:, None]) / sigmas[:, None]
    e = det_erf(u * _SQRT1_2)
    masses = np.empty((n, n_bins), dtype=np.float64)
    masses[:, :-1] = 0.5 * (e[:, 1:] - e[:, :-1])
    # Escape carries both tails.
    masses[:, -1] = 1.0 - 0.5 * (e[:, -1] - e[:, 0])
    np.maximum(masses, 0.0, out=masses)

    # Largest-remainder rounding to TOTAL_FREQ with a floor of 1 per bin.
    totals = masses.sum(axis=1)
    totals[totals <= 0.0] = 1.0
    target = masses / totals[:, None]
    budget = TOTAL_FREQ - n_bins
    scaled = target * budget
    base = np.floor(scaled)
    frac = scaled - base
    leftover = budget - base.sum(axis=1).astype(np.int64)
    order = np.argsort(-frac, axis=1, kind="stable")
    ranks = np.empty_like(order)
    np.put_along_axis(ranks, order, np.arange(n_bins)[None, :], axis=1)
    bonus = ranks < leftover[:, None]
    counts = base.astype(np.int64) + bonus + 1

    cum = np.zeros((n, n_bins + 1), dtype=np.int64)
    np.cumsum(counts, axis=1, out=cum[:, 1:])
    return [CdfTable(t, counts[i], cum[i]) for i in range(n)]


def build_cdf(mu: float, sigma: float, t: int = DEFAULT_TAIL) -> CdfTable:
    """Quantized Gaussian table for a single symbol position."""
    return build_cdf_batch([mu], [sigma], t)[0]


def residual_bytes(value: int) -> tuple[int, int]:
    """16-bit two's-complement split of an escape residual."""
    if not -32768 <= value <= 32767:
        raise FormatError(
            f"escaped symbol {value} outside 16-bit residual range"
        )
    raw = value & 0xFFFF
    return raw >> 8, raw & 0xFF


def residual_value(hi: int, lo: int) -> int:
    raw = (hi << 8) | lo
    return raw - 0x10000 if raw >= 0x8000 else raw
