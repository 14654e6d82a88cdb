"""Shared fixtures: synthetic capture triplets and toy codec configs.

The calibration mimics the usual sensor arrangement: LiDAR x points forward,
the camera looks along it, so Tr_velo_to_cam permutes axes (cam x = -y_l,
cam y = -z_l, cam z = x_l) plus a small offset, and R0_rect is a slight
rotation about the optical axis.
"""

import numpy as np
import pytest
from PIL import Image

from pcnic.codec.model import CodecConfig, CodecModel


def kitti_like_calibration(f=120.0, cx=48.0, cy=32.0, angle=0.01,
                           tx=0.05, ty=-0.03, tz=-0.02):
    p2 = np.array([
        [f, 0.0, cx, 2.5],
        [0.0, f, cy, 0.1],
        [0.0, 0.0, 1.0, 0.003],
    ])
    c, s = np.cos(angle), np.sin(angle)
    r0 = np.array([
        [c, -s, 0.0],
        [s, c, 0.0],
        [0.0, 0.0, 1.0],
    ])
    tr = np.array([
        [0.0, -1.0, 0.0, tx],
        [0.0, 0.0, -1.0, ty],
        [1.0, 0.0, 0.0, tz],
    ])
    return p2, r0, tr


def calibration_text(p2, r0, tr):
    def row(name, mat):
        return name + ": " + " ".join(repr(float(v))
                                      for v in np.asarray(mat).ravel())

    return "\n".join([
        row("P0", np.zeros((3, 4))),
        row("P1", np.zeros((3, 4))),
        row("P2", p2),
        row("P3", np.zeros((3, 4))),
        row("R0_rect", r0),
        row("Tr_velo_to_cam", tr),
        row("Tr_imu_to_velo", np.zeros((3, 4))),
    ]) + "\n"


def forward_points(rng, count, x_range=(3.0, 35.0)):
    """LiDAR points in front of the sensor, most landing inside the frame."""
    pts = np.empty((count, 4))
    pts[:, 0] = rng.uniform(*x_range, size=count)
    pts[:, 1] = rng.uniform(-6.0, 6.0, size=count)
    pts[:, 2] = rng.uniform(-2.0, 2.0, size=count)
    pts[:, 3] = rng.random(count)
    return pts


def smooth_image(rng, height, width, base=0.5, amp=0.022):
    """Gentle ramps kept between the round(x*15)/15 quantizer levels."""
    yy, xx = np.meshgrid(np.linspace(0, 1, height), np.linspace(0, 1, width),
                         indexing="ij")
    chans = []
    for _ in range(3):
        a, phase = rng.random(2)
        ch = base + amp * 2.0 * (a * xx + (1 - a) * yy - 0.5) \
            + 0.006 * np.sin(2 * np.pi * (0.6 * xx + 0.3 * yy + phase))
        chans.append(ch)
    return np.clip(np.stack(chans), 0.0, 1.0)


def write_png(path, image):
    arr = np.clip(np.asarray(image), 0.0, 1.0)
    u8 = np.round(arr * 255.0).astype(np.uint8).transpose(1, 2, 0)
    Image.fromarray(u8, mode="RGB").save(path)


def make_triplet(dirpath, stem, rng, height=64, width=96, points=400):
    """Write an image/LiDAR/calibration triplet; returns the three paths."""
    for sub in ("image_2", "velodyne", "calib"):
        (dirpath / sub).mkdir(parents=True, exist_ok=True)
    img_path = dirpath / "image_2" / f"{stem}.png"
    lidar_path = dirpath / "velodyne" / f"{stem}.bin"
    calib_path = dirpath / "calib" / f"{stem}.txt"

    write_png(img_path, smooth_image(rng, height, width))
    pts = forward_points(rng, points).astype("<f4")
    lidar_path.write_bytes(pts.tobytes())
    p2, r0, tr = kitti_like_calibration(cx=width / 2.0, cy=height / 2.0)
    calib_path.write_text(calibration_text(p2, r0, tr), encoding="utf-8")
    return img_path, lidar_path, calib_path


@pytest.fixture
def triplet(tmp_path):
    rng = np.random.default_rng(11)
    return make_triplet(tmp_path, "000000", rng)


@pytest.fixture
def toy_config():
    return CodecConfig(n=8, m=12, depth=4, context=False, attention=True,
                       lam=0.0075)


@pytest.fixture
def toy_model(toy_config):
    return CodecModel(toy_config, np.random.default_rng(21), dtype=np.float32)


@pytest.fixture
def unified_batch():
    """Eight smooth 64x64 samples with sparse synthetic depth."""
    rng = np.random.default_rng(5)
    out = []
    for _ in range(8):
        img = smooth_image(rng, 64, 64, amp=0.08)
        depth = np.zeros((1, 64, 64))
        ij = rng.integers(0, 64, size=(2, 120))
        depth[0, ij[0], ij[1]] = rng.random(120)
        out.append(np.concatenate([img, depth]))
    return out
