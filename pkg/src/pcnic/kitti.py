"""KITTI-style sensor ingestion and the unified 4-channel sample.

Covers raw LiDAR scans (float32 x,y,z,reflectance records), object-benchmark
calibration text files, point projection into the left color camera,
z-buffered depth rasterization, and the packed 4xHxW sample (RGB plus a
normalized depth channel) consumed by the codec.

The unified sample round-trips through a small container ("PCNU"):

    offset  size  field
    0       4     magic, ASCII "PCNU"
    4       1     format version (currently 1), uint8
    5       1     dtype code, uint8: 0 = float32, 1 = float64
    6       1     rank, uint8 (always 3)
    7       12    dims, uint32 little-endian each (4, H, W)
    19      2     metadata length, uint16
    21      n     metadata, UTF-8 JSON (source, crop_origin, d_max)
    then    -     values, little-endian, C-order
"""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass

import numpy as np
from PIL import Image

from pcnic.errors import FormatError
from pcnic.util import round_half_away

PCNU_MAGIC = b"PCNU"
PCNU_VERSION = 1

DEFAULT_D_MAX = 80.0

# Points closer to the image plane than this are considered behind the camera.
W_EPS = 1e-6

DEPTH_SOURCES = ("camera-z", "lidar-x")


@dataclass
class Calibration:
    """Projection matrices for the left color camera.

    p_rect2 is 3x4, r_rect0 is 3x3, tr_velo_cam is 3x4; all float64.
    """

    p_rect2: np.ndarray
    r_rect0: np.ndarray
    tr_velo_cam: np.ndarray

    def composed(self) -> np.ndarray:
        """Single 3x4 map from homogeneous LiDAR points to image space."""
        r4 = np.eye(4)
        r4[:3, :3] = self.r_rect0
        t4 = np.eye(4)
        t4[:3, :] = self.tr_velo_cam
        return self.p_rect2 @ r4 @ t4


@dataclass
class DepthMap:
    """Sparse depth raster: zeros where no LiDAR return landed."""

    values: np.ndarray            # (1, H, W)
    mask: np.ndarray              # (H, W) bool


@dataclass
class UnifiedSample:
    """4xHxW stack: RGB in [0,1] plus depth normalized by d_max."""

    data: np.ndarray
    source: str = ""
    crop_origin: tuple[int, int] = (0, 0)
    d_max: float = DEFAULT_D_MAX

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    def image(self) -> np.ndarray:
        return self.data[:3]

    def depth(self) -> np.ndarray:
        return self.data[3:4]


# ---------------------------------------------------------------------------
# LiDAR scans
# ---------------------------------------------------------------------------


def parse_velodyne(data: bytes) -> np.ndarray:
    """Decode a raw scan into an (N, 4) float64 array of x,y,z,reflectance."""
    if len(data) % 16 != 0:
        raise FormatError(
            f"velodyne payload length {len(data)} is not a multiple of 16"
        )
    pts = np.frombuffer(data, dtype="<f4").reshape(-1, 4).astype(np.float64)
    bad = ~np.isfinite(pts).all(axis=1)
    if bad.any():
        idx = int(np.argmax(bad))
        raise FormatError(f"non-finite coordinate in velodyne point {idx}")
    return pts


def read_velodyne(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return parse_velodyne(fh.read())


def write_velodyne(path, points: np.ndarray) -> None:
    arr = np.ascontiguousarray(points, dtype="<f4")
    if arr.ndim != 2 or arr.shape[1] != 4:
        raise FormatError(f"points must be (N, 4), got {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(arr.tobytes())


# ---------------------------------------------------------------------------
# calibration
# ---------------------------------------------------------------------------

_REQUIRED_KEYS = {"P2": (3, 4), "R0_rect": (3, 3), "Tr_velo_to_cam": (3, 4)}


def parse_calibration(text: str) -> Calibration:
    """Parse a KITTI object-benchmark calibration file."""
    fields: dict[str, np.ndarray] = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or ":" not in line:
            continue
        key, _, rest = line.partition(":")
        key = key.strip()
        try:
            values = np.array([float(tok) for tok in rest.split()])
        except ValueError:
            continue
        fields[key] = values

    mats: dict[str, np.ndarray] = {}
    for key, shape in _REQUIRED_KEYS.items():
        if key not in fields:
            raise FormatError(f"calibration is missing required key {key!r}")
        want = shape[0] * shape[1]
        got = fields[key].size
        if got != want:
            raise FormatError(
                f"calibration key {key!r} has {got} values, expected {want}"
            )
        mats[key] = fields[key].reshape(shape)

    r = mats["R0_rect"]
    skew = float(np.abs(r @ r.T - np.eye(3)).max())
    if skew > 1e-3:
        warnings.warn(
            f"R0_rect deviates from orthonormal by {skew:.2e}", stacklevel=2
        )
    return Calibration(mats["P2"], mats["R0_rect"], mats["Tr_velo_to_cam"])


def read_calibration(path) -> Calibration:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_calibration(fh.read())


# ---------------------------------------------------------------------------
# projection and rasterization
# ---------------------------------------------------------------------------


def project_points(points: np.ndarray, calib: Calibration,
                   depth_source: str = "camera-z"):
    """Project LiDAR points into the image plane.

    Returns ``(proj, dropped)`` where proj is (M, 3) rows of (u, v, depth)
    for the points in front of the camera and dropped counts the rest.
    ``depth_source`` picks the value stored per pixel: "camera-z" uses the
    third homogeneous coordinate, "lidar-x" the sensor-forward distance.
    """
    if depth_source not in DEPTH_SOURCES:
        raise ValueError(
            f"depth_source must be one of {DEPTH_SOURCES}, got {depth_source!r}"
        )
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] < 3:
        raise FormatError(f"points must be (N, >=3), got {pts.shape}")
    t = calib.composed()
    hom = np.concatenate([pts[:, :3], np.ones((pts.shape[0], 1))], axis=1)
    img = hom @ t.T                      # (N, 3)
    keep = img[:, 2] > W_EPS
    kept = img[keep]
    u = kept[:, 0] / kept[:, 2]
    v = kept[:, 1] / kept[:, 2]
    if depth_source == "camera-z":
        depth = kept[:, 2]
    else:
        depth = pts[keep, 0]
    dropped = int(pts.shape[0] - kept.shape[0])
    return np.stack([u, v, depth], axis=1), dropped


def rasterize_depth(proj: np.ndarray, height: int, width: int) -> DepthMap:
    """Z-buffer projected points into a sparse depth raster.

    Pixel indices are (round(v), round(u)) with halves rounded away from
    zero.  Points outside the raster are discarded; collisions keep the
    smallest depth.  Points with depth <= 0 are discarded as well since the
    raster encodes "no return" as 0.
    """
    proj = np.asarray(proj, dtype=np.float64)
    if proj.ndim != 2 or proj.shape[1] != 3:
        raise FormatError(f"projections must be (M, 3), got {proj.shape}")
    grid = np.full((height, width), np.inf)
    if proj.shape[0]:
        ui = round_half_away(proj[:, 0]).astype(np.int64)
        vi = round_half_away(proj[:, 1]).astype(np.int64)
        depth = proj[:, 2]
        ok = (ui >= 0) & (ui < width) & (vi >= 0) & (vi < height) & (depth > 0)
        np.minimum.at(grid, (vi[ok], ui[ok]), depth[ok])
    mask = np.isfinite(grid)
    values = np.where(mask, grid, 0.0)[None]
    return DepthMap(values=values, mask=mask)


def make_unified_sample(image: np.ndarray, depth: DepthMap,
                        d_max: float = DEFAULT_D_MAX,
                        source: str = "") -> UnifiedSample:
    """Stack RGB and clamp(depth / d_max, 0, 1) into a 4xHxW sample."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] != 3:
        raise FormatError(f"image must be (3, H, W), got {img.shape}")
    if depth.values.shape[1:] != img.shape[1:]:
        raise FormatError(
            f"depth raster {depth.values.shape[1:]} does not match image "
            f"{img.shape[1:]}"
        )
    if d_max <= 0:
        raise ValueError(f"d_max must be positive, got {d_max}")
    if img.min() < -1e-9 or img.max() > 1 + 1e-9:
        raise FormatError("image channels must lie in [0, 1]")
    ch = np.clip(depth.values / d_max, 0.0, 1.0)
    data = np.concatenate([np.clip(img, 0.0, 1.0), ch], axis=0)
    return UnifiedSample(data=data, source=source, d_max=float(d_max))


def crop_sample(sample: UnifiedSample, top: int, left: int,
                height: int, width: int) -> UnifiedSample:
    """Crop a window whose sides are multiples of 16, tracking the origin."""
    if height <= 0 or width <= 0 or height % 16 or width % 16:
        raise ValueError(
            f"crop window {height}x{width} must be positive multiples of 16"
        )
    if top < 0 or left < 0 or top + height > sample.height \
            or left + width > sample.width:
        raise ValueError(
            f"crop [{top}:{top + height}, {left}:{left + width}] outside "
            f"sample {sample.height}x{sample.width}"
        )
    data = np.ascontiguousarray(sample.data[:, top:top + height, left:left + width])
    return UnifiedSample(
        data=data,
        source=sample.source,
        crop_origin=(sample.crop_origin[0] + top, sample.crop_origin[1] + left),
        d_max=sample.d_max,
    )


def assemble_sample(image_path, lidar_path, calib_path,
                    depth_source: str = "camera-z",
                    d_max: float = DEFAULT_D_MAX) -> UnifiedSample:
    """Load one capture triplet and fuse it into a unified sample."""
    image = load_image(image_path)
    points = read_velodyne(lidar_path)
    calib = read_calibration(calib_path)
    proj, _ = project_points(points, calib, depth_source=depth_source)
    depth = rasterize_depth(proj, image.shape[1], image.shape[2])
    # The sample records the depth convention, not file paths: written
    # PCNU bytes stay identical no matter where the inputs lived.
    return make_unified_sample(image, depth, d_max=d_max, source=depth_source)


# ---------------------------------------------------------------------------
# image and container I/O
# ---------------------------------------------------------------------------


def load_image(path) -> np.ndarray:
    """8-bit PNG (or anything Pillow reads) -> (3, H, W) float64 in [0,1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr.transpose(2, 0, 1) / 255.0


def save_image(path, image: np.ndarray) -> None:
    """(3, H, W) float in [0,1] -> 8-bit PNG."""
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    raw = round_half_away(arr * 255.0).astype(np.uint8).transpose(1, 2, 0)
    Image.fromarray(raw, mode="RGB").save(path)


def save_depth_png16(path, depth01: np.ndarray) -> None:
    """(H, W) float in [0,1] -> 16-bit grayscale PNG."""
    arr = np.clip(np.asarray(depth01, dtype=np.float64), 0.0, 1.0)
    raw = round_half_away(arr * 65535.0).astype(np.uint16)
    Image.fromarray(raw, mode="I;16").save(path)


_DTYPE_CODES = {0: "<f4", 1: "<f8"}
_CODE_FOR = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


def save_unified(path, sample: UnifiedSample) -> None:
    code = _CODE_FOR.get(sample.data.dtype, 1)
    raw = np.ascontiguousarray(sample.data, dtype=_DTYPE_CODES[code])
    meta = json.dumps({
        "source": sample.source,
        "crop_origin": list(sample.crop_origin),
        "d_max": sample.d_max,
    }).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(PCNU_MAGIC)
        fh.write(struct.pack("<BBB", PCNU_VERSION, code, 3))
        fh.write(struct.pack("<III", *raw.shape))
        fh.write(struct.pack("<H", len(meta)))
        fh.write(meta)
        fh.write(raw.tobytes())


def load_unified(path) -> UnifiedSample:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 4 or data[:4] != PCNU_MAGIC:
        raise FormatError("not a PCNU sample (bad magic)")
    if len(data) < 21:
        raise FormatError("PCNU header truncated")
    version, code, rank = struct.unpack("<BBB", data[4:7])
    if version != PCNU_VERSION:
        raise FormatError(f"unsupported PCNU version {version}")
    if rank != 3:
        raise FormatError(f"PCNU rank must be 3, got {rank}")
    if code not in _DTYPE_CODES:
        raise FormatError(f"unknown PCNU dtype code {code}")
    dims = struct.unpack("<III", data[7:19])
    if dims[0] != 4:
        raise FormatError(f"unified sample needs 4 channels, got {dims[0]}")
    (meta_len,) = struct.unpack("<H", data[19:21])
    meta_end = 21 + meta_len
    body = data[meta_end:]
    want = int(np.prod(dims)) * np.dtype(_DTYPE_CODES[code]).itemsize
    if len(data) < meta_end or len(body) != want:
        raise FormatError(
            f"PCNU payload has {len(body)} bytes, expected {want}"
        )
    try:
        meta = json.loads(data[21:meta_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"PCNU metadata is not valid JSON: {exc}") from exc
    values = np.frombuffer(body, dtype=_DTYPE_CODES[code]).reshape(dims)
    return UnifiedSample(
        data=values.astype(values.dtype.newbyteorder("=")),
        source=str(meta.get("source", "")),
        crop_origin=tuple(meta.get("crop_origin", (0, 0))),
        d_max=float(meta.get("d_max", DEFAULT_D_MAX)),
    )
