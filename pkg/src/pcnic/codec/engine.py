"""Compression engine: bind the model's entropy parameters to the range coder.

Latent traversal orders are part of the format.  The hyper latent z is coded
channel-major (c, i, j); the main latent y is coded position-major (i, j, c)
so that the causal context model sees completed positions.  Both orders hold
whether or not the context model is active.

Symbols are coded relative to the rounded prediction: for each element the
coder transmits k = round(v) - round(mu) against a table built at the
fractional mean mu - round(mu).  Shifting a Gaussian by an integer does not
change the transmitted probabilities, and it keeps symbols inside the table
support for any latent magnitude the synthesis can usefully absorb.

Coding is only deterministic when encoder and decoder hold bit-identical
weights, so models used for coding should come from (or round-trip through)
a float32 checkpoint; ``load_model`` restores exactly the stored bytes.
"""

from __future__ import annotations

import json
import os
import zlib

import numpy as np
from scipy.special import ndtr

from pcnic.autodiff import Tensor, load_arrays, no_grad, save_arrays
from pcnic.codec.context import SerialContext
from pcnic.codec.model import (
    LAMBDA_LADDER,
    LIKELIHOOD_FLOOR,
    CodecConfig,
    CodecModel,
    hyper_latent_hw,
)
from pcnic.coding import (
    DEFAULT_TAIL,
    RangeDecoder,
    RangeEncoder,
    build_cdf_batch,
    deserialize_bitstream,
    serialize_bitstream,
)
from pcnic.coding.container import Bitstream
from pcnic.errors import FormatError
from pcnic.kitti import UnifiedSample
from pcnic.util import round_half_away

LAMBDA_INDEX_NONE = 255


def config_hash(model: CodecModel) -> int:
    """CRC32 over the config sidecar and all parameters as little-endian f32.

    Identifies a (architecture, weights) pair well enough to reject mismatched
    bitstreams up front instead of decoding garbage.
    """
    crc = zlib.crc32(model.config.sidecar_json().encode("utf-8"))
    for name, p in model.named_parameters():
        crc = zlib.crc32(name.encode("utf-8"), crc)
        crc = zlib.crc32(np.ascontiguousarray(p.data, dtype="<f4").tobytes(), crc)
    return crc & 0xFFFFFFFF


def lambda_index(lam: float) -> int:
    for i, v in enumerate(LAMBDA_LADDER):
        if abs(lam - v) <= 1e-12 + 1e-9 * v:
            return i
    return LAMBDA_INDEX_NONE


def _est_bits(values: np.ndarray, mus: np.ndarray, sigmas: np.ndarray) -> float:
    """Model estimate of the coded size: -sum log2 p under the same floored
    Gaussian integer likelihood the training loss uses."""
    v = values.astype(np.float64)
    mu = mus.astype(np.float64)
    sigma = sigmas.astype(np.float64)
    p = ndtr((v - mu + 0.5) / sigma) - ndtr((v - mu - 0.5) / sigma)
    p = np.clip(p, LIKELIHOOD_FLOOR, 1.0)
    return float(-np.sum(np.log2(p)))


def _encode_stream(values: np.ndarray, mus: np.ndarray, sigmas: np.ndarray,
                   tail: int) -> bytes:
    centers = round_half_away(mus.astype(np.float64))
    symbols = round_half_away(values.astype(np.float64)) - centers
    tables = build_cdf_batch(mus.astype(np.float64) - centers,
                             sigmas.astype(np.float64), tail)
    enc = RangeEncoder()
    for s, table in zip(symbols.astype(np.int64), tables):
        enc.encode_value(int(s), table)
    return enc.finish()


def _decode_stream(dec: RangeDecoder, mus: np.ndarray, sigmas: np.ndarray,
                   tail: int) -> np.ndarray:
    centers = round_half_away(mus.astype(np.float64))
    tables = build_cdf_batch(mus.astype(np.float64) - centers,
                             sigmas.astype(np.float64), tail)
    out = np.empty(len(tables), dtype=np.float64)
    for i, table in enumerate(tables):
        out[i] = dec.decode_value(table) + centers[i]
    return out


def _z_prior_grids(model: CodecModel, zh: int, zw: int):
    mu = model.z_mu.data.astype(np.float64)
    sigma = np.maximum(
        np.logaddexp(0.0, model.z_sigma_raw.data.astype(np.float64)),
        model.config.sigma_min)
    mus = np.repeat(mu, zh * zw)
    sigmas = np.repeat(sigma, zh * zw)
    return mus, sigmas


def _sample_array(sample) -> np.ndarray:
    data = sample.data if isinstance(sample, UnifiedSample) else np.asarray(sample)
    if data.ndim != 3 or data.shape[0] != 4:
        raise FormatError(f"expected a (4, H, W) sample, got {data.shape}")
    return data


def compress(model: CodecModel, sample, *,
             tail: int = DEFAULT_TAIL) -> tuple[bytes, dict]:
    """Encode a unified sample; returns (bitstream bytes, stats dict)."""
    data = _sample_array(sample)
    height, width = data.shape[1], data.shape[2]
    stride = 2 ** model.config.depth
    if height % stride or width % stride:
        raise FormatError(
            f"sample size {height}x{width} not a multiple of {stride}")

    with no_grad():
        x = Tensor(data.astype(model.dtype))
        y = model.encode_latent(x)
        z = model.hyper_a(y)
    y_np = y.data
    h, w = y_np.shape[1], y_np.shape[2]
    zh, zw = z.data.shape[1], z.data.shape[2]

    z_hat = round_half_away(z.data.astype(np.float64))
    z_mus, z_sigmas = _z_prior_grids(model, zh, zw)
    z_vals = z_hat.reshape(-1)  # channel-major
    z_payload = _encode_stream(z_vals, z_mus, z_sigmas, tail)
    est_z = _est_bits(z_vals, z_mus, z_sigmas)

    with no_grad():
        params = model.hyper_s(Tensor(z_hat.astype(model.dtype)), (h, w))
    mu_h = params.mu.data
    sigma_h = params.sigma.data

    y_hat = round_half_away(y_np.astype(np.float64))
    if model.ctx is None:
        mus = mu_h.transpose(1, 2, 0).reshape(-1)
        sigmas = sigma_h.transpose(1, 2, 0).reshape(-1)
        y_vals = y_hat.transpose(1, 2, 0).reshape(-1)
        y_payload = _encode_stream(y_vals, mus, sigmas, tail)
        est_y = _est_bits(y_vals, mus, sigmas)
    else:
        serial = SerialContext(model.ctx)
        y_buf = y_hat.astype(model.dtype)
        enc = RangeEncoder()
        est_y = 0.0
        for i in range(h):
            for j in range(w):
                mu_v, sig_v = serial.params_at(y_buf, mu_h, sigma_h, i, j)
                mu64 = mu_v.astype(np.float64)
                sig64 = sig_v.astype(np.float64)
                centers = round_half_away(mu64)
                tables = build_cdf_batch(mu64 - centers, sig64, tail)
                vals = y_hat[:, i, j]
                for c, table in enumerate(tables):
                    enc.encode_value(int(vals[c] - centers[c]), table)
                est_y += _est_bits(vals, mu64, sig64)
        y_payload = enc.finish()

    blob = serialize_bitstream(Bitstream(
        config_hash=config_hash(model),
        lambda_index=lambda_index(model.config.lam),
        height=height,
        width=width,
        z_payload=z_payload,
        y_payload=y_payload,
    ))
    num_pixels = height * width
    stats = {
        "height": height,
        "width": width,
        "bytes": len(blob),
        "bpp": 8.0 * len(blob) / num_pixels,
        "z_bytes": len(z_payload),
        "y_bytes": len(y_payload),
        "est_z_bits": est_z,
        "est_y_bits": est_y,
        "est_bpp": (est_z + est_y) / num_pixels,
    }
    return blob, stats


def _latent_hw(height: int, width: int, depth: int) -> tuple[int, int]:
    h, w = height, width
    for _ in range(depth):
        h = -(-h // 2)
        w = -(-w // 2)
    return h, w


def decompress(model: CodecModel, blob: bytes, *,
               tail: int = DEFAULT_TAIL) -> tuple[np.ndarray, Bitstream]:
    """Decode a bitstream back to a clipped (3, H, W) float64 image."""
    bs = deserialize_bitstream(blob)
    expected = config_hash(model)
    if bs.config_hash != expected:
        raise FormatError(
            f"bitstream config hash {bs.config_hash:#010x} does not match "
            f"model hash {expected:#010x}")

    h, w = _latent_hw(bs.height, bs.width, model.config.depth)
    zh, zw = hyper_latent_hw(h, w)
    n, m = model.config.n, model.config.m

    z_mus, z_sigmas = _z_prior_grids(model, zh, zw)
    dec = RangeDecoder(bs.z_payload)
    z_hat = _decode_stream(dec, z_mus, z_sigmas, tail).reshape(n, zh, zw)

    with no_grad():
        params = model.hyper_s(Tensor(z_hat.astype(model.dtype)), (h, w))
    mu_h = params.mu.data
    sigma_h = params.sigma.data

    dec = RangeDecoder(bs.y_payload)
    if model.ctx is None:
        mus = mu_h.transpose(1, 2, 0).reshape(-1)
        sigmas = sigma_h.transpose(1, 2, 0).reshape(-1)
        flat = _decode_stream(dec, mus, sigmas, tail)
        y_hat = flat.reshape(h, w, m).transpose(2, 0, 1)
    else:
        serial = SerialContext(model.ctx)
        y_hat = np.zeros((m, h, w), dtype=np.float64)
        y_buf = np.zeros((m, h, w), dtype=model.dtype)
        for i in range(h):
            for j in range(w):
                mu_v, sig_v = serial.params_at(y_buf, mu_h, sigma_h, i, j)
                mu64 = mu_v.astype(np.float64)
                sig64 = sig_v.astype(np.float64)
                centers = round_half_away(mu64)
                tables = build_cdf_batch(mu64 - centers, sig64, tail)
                for c, table in enumerate(tables):
                    v = dec.decode_value(table) + centers[c]
                    y_hat[c, i, j] = v
                    y_buf[c, i, j] = v

    with no_grad():
        x_hat = model.synthesis(Tensor(y_hat.astype(model.dtype)))
    out = np.clip(x_hat.data.astype(np.float64), 0.0, 1.0)
    if out.shape[1] != bs.height or out.shape[2] != bs.width:
        raise FormatError(
            f"decoded size {out.shape[1]}x{out.shape[2]} does not match "
            f"header {bs.height}x{bs.width}")
    return out, bs


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def _sidecar_path(path) -> str:
    return str(path) + ".json"


def save_checkpoint(model: CodecModel, path, *, optimizer=None,
                    extra: dict | None = None) -> None:
    """Write weights (plus optional optimizer state) and a config sidecar."""
    arrays = {name: p.data for name, p in model.named_parameters()}
    if optimizer is not None:
        arrays.update(optimizer.state_arrays())
    if extra:
        arrays.update(extra)
    save_arrays(path, arrays)
    with open(_sidecar_path(path), "w", encoding="utf-8") as fh:
        fh.write(model.config.sidecar_json())
        fh.write("\n")


def load_model(path, *, dtype=np.float32, image_only: bool = False) -> CodecModel:
    sidecar = _sidecar_path(path)
    if not os.path.exists(sidecar):
        raise FormatError(f"missing config sidecar {sidecar}")
    with open(sidecar, "r", encoding="utf-8") as fh:
        config = CodecConfig.from_sidecar(json.load(fh))
    model = CodecModel(config, np.random.default_rng(0), dtype=dtype)
    arrays = load_arrays(path)
    for name, p in model.named_parameters():
        if name not in arrays:
            raise FormatError(f"checkpoint missing array {name!r}")
        stored = arrays[name]
        if tuple(stored.shape) != tuple(p.data.shape):
            raise FormatError(
                f"checkpoint array {name!r} has shape {stored.shape}, "
                f"model expects {p.data.shape}")
        p.data = stored.astype(dtype)
    model.image_only = image_only
    return model
