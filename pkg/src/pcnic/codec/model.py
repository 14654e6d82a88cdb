"""The dual-branch codec model and its rate-distortion objective.

A 4xHxW unified sample is split into the RGB image and the depth channel;
each runs through its own analysis transform, the two N-channel latents are
fused into an M-channel joint latent, and a hyper-latent carries the
Gaussian parameters used to code the joint latent.  Synthesis sees only the
quantized joint latent, so the decoder never needs the point cloud.

Distortion compares the reconstruction against the RGB channels only; the
depth channel steers the latent but is never itself reconstructed or scored.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from pcnic.autodiff import Tensor, ops
from pcnic.codec.layers import (
    ChannelAttention,
    Conv2d,
    ConvTranspose2d,
    FusionBlock,
    GatedResidualBlock,
    MaskedConv2d,
    Module,
    ResidualBlock,
)
from pcnic.errors import FormatError

# Rate-distortion tradeoffs trained for the standard quality ladder.
LAMBDA_LADDER = (0.0016, 0.0032, 0.0075, 0.015, 0.03, 0.045)

LIKELIHOOD_FLOOR = 2.0 ** -16
_LN2 = float(np.log(2.0))


@dataclass
class CodecConfig:
    """Architecture and coding knobs; serialized as the checkpoint sidecar."""

    n: int = 192
    m: int = 288
    depth: int = 4
    context: bool = False
    attention: bool = True
    lam: float = 0.015
    sigma_min: float = 0.11
    d_max: float = 80.0

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise ValueError(f"channel counts must be >= 1, got n={self.n} m={self.m}")
        if self.depth < 1:
            raise ValueError(f"downsample depth must be >= 1, got {self.depth}")
        if self.lam <= 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")
        if self.sigma_min <= 0:
            raise ValueError(f"sigma_min must be positive, got {self.sigma_min}")

    def sidecar_dict(self) -> dict:
        return {
            "n": self.n,
            "m": self.m,
            "depth": self.depth,
            "context": self.context,
            "attention": self.attention,
            "lambda": self.lam,
            "sigma_min": self.sigma_min,
            "d_max": self.d_max,
        }

    def sidecar_json(self) -> str:
        return json.dumps(self.sidecar_dict(), sort_keys=True)

    @classmethod
    def from_sidecar(cls, d: dict) -> "CodecConfig":
        try:
            return cls(
                n=int(d["n"]),
                m=int(d["m"]),
                depth=int(d["depth"]),
                context=bool(d["context"]),
                attention=bool(d["attention"]),
                lam=float(d["lambda"]),
                sigma_min=float(d["sigma_min"]),
                d_max=float(d["d_max"]),
            )
        except KeyError as exc:
            raise FormatError(f"checkpoint sidecar is missing key {exc}") from exc


class GaussianParams(NamedTuple):
    mu: Tensor
    sigma: Tensor


@dataclass
class CodecOutput:
    """Training-mode forward results; rates and distortion stay in the graph."""

    x_hat: Tensor
    y_tilde: Tensor
    z_tilde: Tensor
    rate_y: Tensor            # bits, scalar
    rate_z: Tensor            # bits, scalar
    distortion: Tensor        # image-only MSE, scalar


# ---------------------------------------------------------------------------
# transforms
# ---------------------------------------------------------------------------


class AnalysisBranch(Module):
    """Stride-2 conv stack: [conv -> leaky -> residual] per stage, with one
    gated attention block mid-stack and one at the end."""

    def __init__(self, cin: int, n: int, depth: int, *, rng, dtype):
        self.depth = depth
        self.convs = []
        self.resblocks = []
        for i in range(depth):
            self.convs.append(Conv2d(cin if i == 0 else n, n, 3, stride=2,
                                     rng=rng, dtype=dtype))
            self.resblocks.append(ResidualBlock(n, rng=rng, dtype=dtype))
        self.attn_mid = (GatedResidualBlock(n, rng=rng, dtype=dtype)
                         if depth >= 2 else None)
        self.attn_end = GatedResidualBlock(n, rng=rng, dtype=dtype)
        self._mid_after = depth // 2

    def __call__(self, x: Tensor) -> Tensor:
        for i in range(self.depth):
            x = self.resblocks[i](ops.leaky_relu(self.convs[i](x)))
            if self.attn_mid is not None and i + 1 == self._mid_after:
                x = self.attn_mid(x)
        return self.attn_end(x)


class SynthesisTransform(Module):
    """Mirror of the analysis branch with transposed convs; emits RGB."""

    def __init__(self, n: int, m: int, depth: int, *, rng, dtype):
        self.depth = depth
        self.attn_start = GatedResidualBlock(m, rng=rng, dtype=dtype)
        self.deconvs = []
        self.resblocks = []
        for i in range(depth):
            cin = m if i == 0 else n
            cout = 3 if i == depth - 1 else n
            self.deconvs.append(ConvTranspose2d(
                cin, cout, 3, stride=2, padding=1, output_padding=1,
                rng=rng, dtype=dtype,
            ))
            if i < depth - 1:
                self.resblocks.append(ResidualBlock(n, rng=rng, dtype=dtype))
        self.attn_mid = (GatedResidualBlock(n, rng=rng, dtype=dtype)
                         if depth >= 2 else None)
        # Mirrors the analysis placement: as many stages remain after the
        # block here as had run before it there.
        self._mid_after = depth - depth // 2

    def __call__(self, y_hat: Tensor) -> Tensor:
        x = self.attn_start(y_hat)
        for i in range(self.depth):
            x = self.deconvs[i](x)
            if i < self.depth - 1:
                x = self.resblocks[i](ops.leaky_relu(x))
                if self.attn_mid is not None and i + 1 == self._mid_after:
                    x = self.attn_mid(x)
        return x


class HyperAnalysis(Module):
    """Two stride-2 convs squeezing the joint latent into the hyper-latent."""

    def __init__(self, m: int, n: int, *, rng, dtype):
        self.conv1 = Conv2d(m, n, 3, stride=2, rng=rng, dtype=dtype)
        self.conv2 = Conv2d(n, n, 3, stride=2, rng=rng, dtype=dtype)

    def __call__(self, y: Tensor) -> Tensor:
        return self.conv2(ops.leaky_relu(self.conv1(y)))


def _ceil_half(v: int) -> int:
    return (v + 1) // 2


def hyper_latent_hw(h: int, w: int) -> tuple[int, int]:
    """Spatial dims of the hyper-latent for a joint latent of h x w."""
    return _ceil_half(_ceil_half(h)), _ceil_half(_ceil_half(w))


class HyperSynthesis(Module):
    """Two stride-2 transposed convs mapping the hyper-latent to 2M params.

    Upsampled maps are cropped to the exact target size, which matters when
    the latent sides are not multiples of 4.  The 2M channels split into the
    mean and a raw scale; sigma = max(softplus(raw), sigma_min).
    """

    def __init__(self, n: int, m: int, sigma_min: float, *, rng, dtype):
        self.m = m
        self.sigma_min = sigma_min
        self.deconv1 = ConvTranspose2d(n, m, 3, stride=2, padding=1,
                                       output_padding=1, rng=rng, dtype=dtype)
        self.deconv2 = ConvTranspose2d(m, 2 * m, 3, stride=2, padding=1,
                                       output_padding=1, rng=rng, dtype=dtype)

    def __call__(self, z_hat: Tensor, target_hw: tuple[int, int]) -> GaussianParams:
        h, w = target_hw
        x = self.deconv1(z_hat)
        x = ops.crop_spatial(x, min(_ceil_half(h), x.shape[1]),
                             min(_ceil_half(w), x.shape[2]))
        x = self.deconv2(ops.leaky_relu(x))
        x = ops.crop_spatial(x, h, w)
        mu = ops.slice_channels(x, 0, self.m)
        sigma_raw = ops.slice_channels(x, self.m, 2 * self.m)
        sigma = ops.lower_bound(ops.softplus(sigma_raw), self.sigma_min)
        return GaussianParams(mu, sigma)


class ContextModel(Module):
    """Causal spatial context refinement of the Gaussian parameters.

    A 5x5 masked conv summarizes raster-earlier latent values; the summary
    is concatenated with the hyper parameters and passed through three 1x1
    convs to produce refined (mu, sigma).
    """

    def __init__(self, m: int, sigma_min: float, *, rng, dtype):
        self.m = m
        self.sigma_min = sigma_min
        hidden = 3 * m
        self.masked = MaskedConv2d(m, 2 * m, 5, rng=rng, dtype=dtype)
        self.net1 = Conv2d(4 * m, hidden, 1, rng=rng, dtype=dtype)
        self.net2 = Conv2d(hidden, hidden, 1, rng=rng, dtype=dtype)
        self.net3 = Conv2d(hidden, 2 * m, 1, rng=rng, dtype=dtype)

    def __call__(self, y_hat: Tensor, params: GaussianParams) -> GaussianParams:
        ctx = self.masked(y_hat)
        x = ops.concat_channels([ctx, params.mu, params.sigma])
        x = ops.leaky_relu(self.net1(x))
        x = ops.leaky_relu(self.net2(x))
        x = self.net3(x)
        mu = ops.slice_channels(x, 0, self.m)
        sigma_raw = ops.slice_channels(x, self.m, 2 * self.m)
        sigma = ops.lower_bound(ops.softplus(sigma_raw), self.sigma_min)
        return GaussianParams(mu, sigma)


# ---------------------------------------------------------------------------
# quantization, likelihood, loss
# ---------------------------------------------------------------------------


def quantize(v: Tensor, mode: str, rng: np.random.Generator | None = None) -> Tensor:
    """Train mode adds U(-0.5, 0.5) noise; infer mode rounds half away from
    zero.  Both are straight-through for gradients."""
    if mode == "train":
        if rng is None:
            raise ValueError("train-mode quantization needs an rng")
        noise = rng.uniform(-0.5, 0.5, size=v.shape).astype(v.dtype)
        return v + Tensor(noise)
    if mode == "infer":
        return ops.round_ste(v)
    raise ValueError(f"unknown quantization mode {mode!r}")


def gaussian_likelihood(values: Tensor, mu: Tensor, sigma: Tensor,
                        floor: float = LIKELIHOOD_FLOOR) -> Tensor:
    """Per-element probability mass of the unit-width bin around ``values``.

    p = Phi((v - mu + 0.5)/sigma) - Phi((v - mu - 0.5)/sigma), clamped below
    at ``floor`` so the rate stays finite.
    """
    centered = values - mu
    upper = ops.std_normal_cdf((centered + 0.5) / sigma)
    lower = ops.std_normal_cdf((centered - 0.5) / sigma)
    return ops.lower_bound(upper - lower, floor)


def rate_bits(p: Tensor) -> Tensor:
    """Total information content of per-element probabilities, in bits."""
    return ops.sum_all(ops.log(p)) * (-1.0 / _LN2)


def rd_loss(out: CodecOutput, lam: float, num_pixels: int) -> Tensor:
    """bits-per-pixel + lambda * 255^2 * MSE, the training objective."""
    bpp = (out.rate_y + out.rate_z) * (1.0 / num_pixels)
    return bpp + (lam * 255.0 ** 2) * out.distortion


# ---------------------------------------------------------------------------
# the model
# ---------------------------------------------------------------------------


def softplus_inv(y: float) -> float:
    return float(np.log(np.expm1(y)))


class CodecModel(Module):
    """End-to-end codec over unified samples.

    ``image_only`` is a runtime ablation switch: the point-cloud branch
    output is replaced by zeros, so fusion sees no depth information.
    """

    def __init__(self, config: CodecConfig, rng: np.random.Generator,
                 dtype=np.float32):
        n, m = config.n, config.m
        self.img_branch = AnalysisBranch(3, n, config.depth, rng=rng, dtype=dtype)
        self.pc_branch = AnalysisBranch(1, n, config.depth, rng=rng, dtype=dtype)
        self.fusion = FusionBlock(n, m, config.attention, rng=rng, dtype=dtype)
        self.hyper_a = HyperAnalysis(m, n, rng=rng, dtype=dtype)
        self.hyper_s = HyperSynthesis(n, m, config.sigma_min, rng=rng, dtype=dtype)
        self.synthesis = SynthesisTransform(n, m, config.depth, rng=rng, dtype=dtype)
        self.ctx = (ContextModel(m, config.sigma_min, rng=rng, dtype=dtype)
                    if config.context else None)
        # Per-channel factorized Gaussian prior over the hyper-latent.
        self.z_mu = Tensor(np.zeros(n, dtype=dtype), requires_grad=True)
        self.z_sigma_raw = Tensor(
            np.full(n, softplus_inv(1.0), dtype=dtype), requires_grad=True)
        # Plain attributes; the parameter walk skips non-Tensor values.
        self.config = config
        self.dtype = np.dtype(dtype)
        self.image_only = False

    # -- pieces --------------------------------------------------------------

    def encode_latent(self, x: Tensor) -> Tensor:
        """Unified sample -> joint latent (M channels)."""
        if x.ndim != 3 or x.shape[0] != 4:
            raise ValueError(f"unified sample must be (4, H, W), got {x.shape}")
        side = 1 << self.config.depth
        if x.shape[1] % side or x.shape[2] % side:
            raise ValueError(
                f"sample dims {x.shape[1]}x{x.shape[2]} must be multiples of {side}"
            )
        img = ops.slice_channels(x, 0, 3)
        y_img = self.img_branch(img)
        if self.image_only:
            y_pc = Tensor(np.zeros(y_img.shape, dtype=y_img.dtype))
        else:
            y_pc = self.pc_branch(ops.slice_channels(x, 3, 4))
        return self.fusion(y_img, y_pc)

    def z_prior(self) -> GaussianParams:
        sigma = ops.lower_bound(ops.softplus(self.z_sigma_raw),
                                self.config.sigma_min)
        return GaussianParams(self.z_mu, sigma)

    def latent_params(self, z_hat: Tensor, target_hw: tuple[int, int],
                      y_hat: Tensor | None = None) -> GaussianParams:
        """Gaussian parameters for the joint latent, context-refined if on."""
        params = self.hyper_s(z_hat, target_hw)
        if self.ctx is not None:
            if y_hat is None:
                raise ValueError("context model needs the quantized latent")
            params = self.ctx(y_hat, params)
        return params

    # -- training forward ----------------------------------------------------

    def forward_train(self, sample: np.ndarray,
                      rng: np.random.Generator) -> CodecOutput:
        x = Tensor(np.asarray(sample, dtype=self.dtype))
        img = ops.slice_channels(x, 0, 3)
        y = self.encode_latent(x)
        z = self.hyper_a(y)
        y_tilde = quantize(y, "train", rng)
        z_tilde = quantize(z, "train", rng)
        params = self.latent_params(z_tilde, (y.shape[1], y.shape[2]),
                                    y_hat=y_tilde)
        p_y = gaussian_likelihood(y_tilde, params.mu, params.sigma)
        zp = self.z_prior()
        p_z = gaussian_likelihood(z_tilde, zp.mu, zp.sigma)
        x_hat = self.synthesis(y_tilde)
        return CodecOutput(
            x_hat=x_hat,
            y_tilde=y_tilde,
            z_tilde=z_tilde,
            rate_y=rate_bits(p_y),
            rate_z=rate_bits(p_z),
            distortion=ops.mse(x_hat, img),
        )
