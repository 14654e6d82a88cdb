"""Quality metrics and Bjontegaard-delta comparisons between RD curves.

PSNR uses peak 1.0 (images are normalized floats).  MS-SSIM is the standard
five-scale form: per-scale contrast-structure terms on an 11x11 Gaussian
window (sigma 1.5), luminance only at the coarsest scale, weights
(0.0448, 0.2856, 0.3001, 0.2363, 0.1333), computed per channel and averaged.
Downsampling pads odd sizes by edge replication before 2x2 mean pooling, so
a side of at least 161 px survives all five scales.

BD deltas follow the classic recipe: cubic polynomial fit of quality against
log10(rate) (and the swapped fit for BD-rate), integrated analytically over
the overlapping range.  BD-SSIM operates on raw MS-SSIM values.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from pcnic.errors import UsageError
from pcnic.util import fmt_trim

MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
MS_SSIM_MIN_SIDE = 161
_WINDOW = 11
_SIGMA = 1.5
_C1 = 0.01 ** 2
_C2 = 0.03 ** 2


# ---------------------------------------------------------------------------
# PSNR
# ---------------------------------------------------------------------------


def psnr(a, b) -> float:
    """10*log10(1/MSE) against peak 1.0; identical inputs give math.inf."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


# ---------------------------------------------------------------------------
# MS-SSIM
# ---------------------------------------------------------------------------


def _gaussian_window() -> np.ndarray:
    idx = np.arange(_WINDOW, dtype=np.float64) - (_WINDOW - 1) / 2.0
    g = np.exp(-(idx ** 2) / (2.0 * _SIGMA ** 2))
    g /= g.sum()
    return np.outer(g, g)


def _filter_valid(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    win = np.lib.stride_tricks.sliding_window_view(img, kernel.shape)
    return np.einsum("ijkl,kl->ij", win, kernel)


def _ssim_terms(a: np.ndarray, b: np.ndarray, kernel: np.ndarray):
    """Mean luminance*cs map and mean cs map over valid positions."""
    mu_a = _filter_valid(a, kernel)
    mu_b = _filter_valid(b, kernel)
    var_a = np.maximum(_filter_valid(a * a, kernel) - mu_a ** 2, 0.0)
    var_b = np.maximum(_filter_valid(b * b, kernel) - mu_b ** 2, 0.0)
    cov = _filter_valid(a * b, kernel) - mu_a * mu_b
    lum = (2.0 * mu_a * mu_b + _C1) / (mu_a ** 2 + mu_b ** 2 + _C1)
    cs = (2.0 * cov + _C2) / (var_a + var_b + _C2)
    return float(np.mean(lum * cs)), float(np.mean(cs))


def _downsample(img: np.ndarray) -> np.ndarray:
    h, w = img.shape
    if h % 2:
        img = np.concatenate([img, img[-1:, :]], axis=0)
    if w % 2:
        img = np.concatenate([img, img[:, -1:]], axis=1)
    return (img[0::2, 0::2] + img[1::2, 0::2]
            + img[0::2, 1::2] + img[1::2, 1::2]) * 0.25


def _ms_ssim_channel(a: np.ndarray, b: np.ndarray, kernel: np.ndarray) -> float:
    value = 1.0
    levels = len(MS_SSIM_WEIGHTS)
    for k in range(levels):
        ssim_mean, cs_mean = _ssim_terms(a, b, kernel)
        if k == levels - 1:
            value *= max(ssim_mean, 0.0) ** MS_SSIM_WEIGHTS[k]
        else:
            value *= max(cs_mean, 0.0) ** MS_SSIM_WEIGHTS[k]
            a = _downsample(a)
            b = _downsample(b)
    return value


def ms_ssim(a, b) -> float:
    """Five-scale MS-SSIM in (0, 1]; accepts (H, W) or (C, H, W) arrays."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[None]
        b = b[None]
    if a.ndim != 3:
        raise ValueError(f"expected 2-D or 3-D image, got {a.shape}")
    h, w = a.shape[1], a.shape[2]
    if min(h, w) < MS_SSIM_MIN_SIDE:
        raise UsageError(
            f"image {h}x{w} too small for 5-scale MS-SSIM "
            f"(needs at least {MS_SSIM_MIN_SIDE} px per side)")
    kernel = _gaussian_window()
    vals = [_ms_ssim_channel(a[c], b[c], kernel) for c in range(a.shape[0])]
    return float(np.mean(vals))


# ---------------------------------------------------------------------------
# RD curves
# ---------------------------------------------------------------------------


@dataclass
class RDPoint:
    bpp: float
    psnr: float
    msssim: float
    label: str = ""

    def __post_init__(self):
        if not self.bpp > 0:
            raise ValueError(f"bpp must be positive, got {self.bpp}")


@dataclass
class RDCurve:
    method: str
    points: list = field(default_factory=list)

    def __post_init__(self):
        self.points = sorted(self.points, key=lambda p: p.bpp)
        bpps = [p.bpp for p in self.points]
        for lo, hi in zip(bpps, bpps[1:]):
            if hi <= lo:
                raise ValueError(f"duplicate bpp {hi} in curve {self.method!r}")

    def bpps(self) -> np.ndarray:
        return np.array([p.bpp for p in self.points], dtype=np.float64)

    def quality(self, metric: str) -> np.ndarray:
        if metric == "psnr":
            vals = [p.psnr for p in self.points]
        elif metric == "msssim":
            vals = [p.msssim for p in self.points]
        else:
            raise ValueError(f"unknown quality metric {metric!r}")
        return np.array(vals, dtype=np.float64)


CURVE_CSV_HEADER = "bpp,psnr,msssim"


def curve_to_csv(curve: RDCurve) -> str:
    lines = [CURVE_CSV_HEADER]
    for p in curve.points:
        lines.append(f"{p.bpp!r},{p.psnr!r},{p.msssim!r}")
    return "\n".join(lines) + "\n"


def curve_from_csv(text: str, method: str = "") -> RDCurve:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].strip() != CURVE_CSV_HEADER:
        raise ValueError(f"curve CSV must start with header {CURVE_CSV_HEADER!r}")
    points = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != 3:
            raise ValueError(f"bad curve CSV row {ln!r}")
        points.append(RDPoint(float(parts[0]), float(parts[1]), float(parts[2])))
    return RDCurve(method, points)


# ---------------------------------------------------------------------------
# Bjontegaard deltas
# ---------------------------------------------------------------------------


@dataclass
class BDResult:
    bd_quality: float
    bd_rate_percent: float


def _check_curve(curve: RDCurve, metric: str) -> tuple[np.ndarray, np.ndarray]:
    if len(curve.points) < 4:
        raise ValueError(
            f"curve {curve.method!r} has {len(curve.points)} points, "
            "BD needs at least 4")
    rates = curve.bpps()
    quality = curve.quality(metric)
    if not np.all(np.isfinite(quality)):
        raise ValueError(f"curve {curve.method!r} has non-finite {metric} values")
    if not np.all(np.diff(quality) > 0):
        warnings.warn(
            f"curve {curve.method!r} is not monotone in {metric}; "
            "BD fit may be unreliable", RuntimeWarning, stacklevel=3)
    return np.log10(rates), quality


def _poly_mean(x: np.ndarray, y: np.ndarray, lo: float, hi: float) -> float:
    coeffs = np.polyfit(x, y, 3)
    integral = np.polyint(coeffs)
    return float((np.polyval(integral, hi) - np.polyval(integral, lo)) / (hi - lo))


def bd_metrics(ref: RDCurve, test: RDCurve, metric: str = "psnr") -> BDResult:
    """BD-quality and BD-rate of ``test`` relative to ``ref``."""
    lr_ref, q_ref = _check_curve(ref, metric)
    lr_test, q_test = _check_curve(test, metric)

    lo = max(lr_ref.min(), lr_test.min())
    hi = min(lr_ref.max(), lr_test.max())
    if hi <= lo:
        raise ValueError("curves have no overlapping rate range")
    bd_quality = (_poly_mean(lr_test, q_test, lo, hi)
                  - _poly_mean(lr_ref, q_ref, lo, hi))

    qlo = max(q_ref.min(), q_test.min())
    qhi = min(q_ref.max(), q_test.max())
    if qhi <= qlo:
        raise ValueError("curves have no overlapping quality range")
    avg_log_diff = (_poly_mean(q_test, lr_test, qlo, qhi)
                    - _poly_mean(q_ref, lr_ref, qlo, qhi))
    bd_rate = (10.0 ** avg_log_diff - 1.0) * 100.0
    return BDResult(bd_quality=bd_quality, bd_rate_percent=bd_rate)


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

REPORT_COLUMNS = ("method", "bd_psnr_db", "bd_rate_psnr_pct",
                  "bd_ssim", "bd_rate_msssim_pct")


@dataclass
class ReportRow:
    method: str
    bd_psnr: float
    bd_rate_psnr: float
    bd_ssim: float
    bd_rate_msssim: float

    def cells(self) -> tuple[str, ...]:
        return (self.method,
                fmt_trim(self.bd_psnr),
                fmt_trim(self.bd_rate_psnr),
                fmt_trim(self.bd_ssim),
                fmt_trim(self.bd_rate_msssim))


def baseline_row(method: str) -> ReportRow:
    return ReportRow(method, 0.0, 0.0, 0.0, 0.0)


def emit_report(rows) -> str:
    """Aligned plain-text table: one row per method, BD columns."""
    table = [REPORT_COLUMNS] + [r.cells() for r in rows]
    widths = [max(len(row[i]) for row in table) for i in range(len(REPORT_COLUMNS))]
    lines = []
    for row in table:
        cells = [row[0].ljust(widths[0])]
        cells += [row[i].rjust(widths[i]) for i in range(1, len(row))]
        lines.append("  ".join(cells).rstrip())
    return "\n".join(lines) + "\n"


def report_csv(rows) -> str:
    lines = [",".join(REPORT_COLUMNS)]
    for r in rows:
        lines.append(",".join(r.cells()))
    return "\n".join(lines) + "\n"
