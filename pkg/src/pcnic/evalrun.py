"""Evaluation harness: RD-curve assembly, ablation comparisons, reports.

Reported bpp always comes from real bitstream bytes.  Reported quality is
computed against the reconstruction quantized to 8-bit levels, i.e. exactly
the pixel values a decoded PNG holds, so the eval numbers equal what an
external check of the written files would measure.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from pcnic.codec.engine import compress, decompress, load_model
from pcnic.codec.train import RunConfig, Trainer, lambda_tag
from pcnic.kitti import UnifiedSample
from pcnic.metrics import RDCurve, RDPoint, ms_ssim, psnr
from pcnic.util import round_half_away

ABLATIONS = ("no-attention", "image-only")


def quantize8(img: np.ndarray) -> np.ndarray:
    """Snap a [0,1] float image to the 256 levels a PNG can store."""
    return round_half_away(np.clip(img, 0.0, 1.0) * 255.0) / 255.0


def _sample_image(sample) -> np.ndarray:
    if isinstance(sample, UnifiedSample):
        return sample.image()
    data = np.asarray(sample)
    return data[:3]


def evaluate_checkpoint(path, samples, *, image_only: bool = False,
                        with_msssim: bool = True) -> dict:
    """Mean bpp / PSNR / MS-SSIM of one checkpoint over the samples."""
    model = load_model(path, image_only=image_only)
    bpps, psnrs, ssims = [], [], []
    for sample in samples:
        blob, _ = compress(model, sample)
        recon, _ = decompress(model, blob)
        ref = _sample_image(sample)
        decoded = quantize8(recon)
        bpps.append(8.0 * len(blob) / (ref.shape[1] * ref.shape[2]))
        psnrs.append(psnr(decoded, ref))
        if with_msssim:
            ssims.append(ms_ssim(decoded, ref))
    return {
        "bpp": float(np.mean(bpps)),
        "psnr": float(np.mean(psnrs)),
        "msssim": float(np.mean(ssims)) if with_msssim else float("nan"),
        "lambda": model.config.lam,
    }


def rd_curve_assemble(method: str, checkpoint_paths, samples, *,
                      image_only: bool = False,
                      with_msssim: bool = True) -> RDCurve:
    """Encode and decode every sample per checkpoint; one RD point per λ."""
    points = []
    for path in checkpoint_paths:
        stats = evaluate_checkpoint(path, samples, image_only=image_only,
                                    with_msssim=with_msssim)
        points.append(RDPoint(stats["bpp"], stats["psnr"], stats["msssim"],
                              label=Path(str(path)).stem))
    return RDCurve(method, points)


def rate_comparison(fused_paths, image_only_paths, samples) -> list[dict]:
    """Per-λ bpp and PSNR of the fused model against the image-only one."""
    if len(fused_paths) != len(image_only_paths):
        raise ValueError("need one image-only checkpoint per fused checkpoint")
    rows = []
    for fp, ip in zip(fused_paths, image_only_paths):
        fused = evaluate_checkpoint(fp, samples, with_msssim=False)
        img = evaluate_checkpoint(ip, samples, image_only=True,
                                  with_msssim=False)
        rows.append({
            "lambda": fused["lambda"],
            "bpp_fused": fused["bpp"],
            "bpp_image_only": img["bpp"],
            "psnr_fused": fused["psnr"],
            "psnr_image_only": img["psnr"],
        })
    return rows


def rate_comparison_text(rows) -> str:
    header = ("lambda", "bpp_fused", "bpp_image_only",
              "psnr_fused", "psnr_image_only")
    table = [header] + [
        tuple(f"{row[k]:.6g}" for k in header) for row in rows
    ]
    widths = [max(len(r[i]) for r in table) for i in range(len(header))]
    lines = ["  ".join(r[i].rjust(widths[i]) for i in range(len(header))).rstrip()
             for r in table]
    return "\n".join(lines) + "\n"


def _variant_run(run: RunConfig, variant: str) -> RunConfig:
    cfg = RunConfig(**{**run.__dict__})
    if variant == "no-attention":
        cfg.attention = False
    cfg.out_dir = str(Path(run.out_dir) / variant)
    return cfg


def train_variant(run: RunConfig, variant: str, samples, *,
                  reuse: bool = True) -> list[Path]:
    """Train (or reuse) one checkpoint per λ for a variant; returns paths."""
    if variant not in ("fused",) + ABLATIONS:
        raise ValueError(f"unknown variant {variant!r}")
    vrun = _variant_run(run, variant)
    paths = []
    for lam in vrun.lambdas:
        trainer = Trainer(vrun, lam, samples=samples)
        if not (reuse and trainer.resume() and trainer.epoch >= vrun.epochs):
            if variant == "image-only":
                trainer.model.image_only = True
            trainer.train()
        paths.append(trainer.ckpt_path)
    return paths


def ablation_curves(run: RunConfig, variants, train_samples, eval_samples, *,
                    reuse: bool = True, with_msssim: bool = True) -> dict:
    """Train and evaluate the fused model plus requested ablations.

    Returns {variant: (RDCurve, checkpoint paths)} with "fused" always
    present as the reference.
    """
    out = {}
    for variant in ("fused",) + tuple(v for v in variants if v != "fused"):
        paths = train_variant(run, variant, train_samples, reuse=reuse)
        curve = rd_curve_assemble(variant, paths, eval_samples,
                                  image_only=(variant == "image-only"),
                                  with_msssim=with_msssim)
        out[variant] = (curve, paths)
    return out
