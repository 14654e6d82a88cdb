"""Command-line entry point.

Subcommands: project (build a unified sample from an image/LiDAR/calibration
triplet), train, encode, decode, eval (train-and-compare harness including
ablations), bd (compare RD-curve CSVs).

Exit codes: 0 success, 1 usage error, 2 data or format error, 3 numerical
failure.  Every command is deterministic under a fixed seed and config.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from pcnic.errors import FormatError, NumericalError, PcnicError, UsageError


class _Parser(argparse.ArgumentParser):
    """argparse replacement that reports usage problems via exit code 1."""

    def error(self, message):
        raise UsageError(message)


def _parse_crop(text: str):
    parts = text.split(",")
    if len(parts) != 4:
        raise UsageError(f"--crop wants top,left,height,width, got {text!r}")
    try:
        return tuple(int(p) for p in parts)
    except ValueError:
        raise UsageError(f"--crop values must be integers, got {text!r}") from None


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_project(args) -> int:
    from pcnic import kitti

    sample = kitti.assemble_sample(args.image, args.lidar, args.calib,
                                   depth_source=args.depth_source,
                                   d_max=args.d_max)
    if args.crop is not None:
        top, left, height, width = _parse_crop(args.crop)
        sample = kitti.crop_sample(sample, top, left, height, width)
    kitti.save_unified(args.output, sample)
    filled = float((sample.data[3] > 0).mean())
    print(f"wrote {args.output}: 4x{sample.height}x{sample.width}, "
          f"depth fill {filled:.1%}, source {sample.source}")
    return 0


def cmd_train(args) -> int:
    from pcnic.codec.train import RunConfig, train_run

    run = RunConfig.from_file(args.config)
    if args.out_dir:
        run.out_dir = args.out_dir
    results = train_run(run, resume=args.resume)
    for tag, loss in results.items():
        print(f"{tag}: final mean loss {loss!r}")
    print(f"checkpoints under {run.out_dir}")
    return 0


def cmd_encode(args) -> int:
    from pcnic import kitti
    from pcnic.codec.engine import compress, load_model

    sample = kitti.load_unified(args.sample)
    model = load_model(args.checkpoint, image_only=args.image_only)
    blob, stats = compress(model, sample)
    with open(args.output, "wb") as fh:
        fh.write(blob)
    print(f"wrote {args.output}: {stats['bytes']} bytes, "
          f"{stats['bpp']:.4f} bpp (model estimate {stats['est_bpp']:.4f})")
    return 0


def cmd_decode(args) -> int:
    from pcnic import kitti
    from pcnic.codec.engine import decompress, load_model

    with open(args.bitstream, "rb") as fh:
        blob = fh.read()
    model = load_model(args.checkpoint)
    recon, bs = decompress(model, blob)
    kitti.save_image(args.output, recon)
    print(f"wrote {args.output}: {bs.height}x{bs.width}")
    return 0


def cmd_eval(args) -> int:
    from pcnic import kitti
    from pcnic.codec.train import RunConfig, load_dataset
    from pcnic.evalrun import (
        ablation_curves,
        rate_comparison,
        rate_comparison_text,
    )
    from pcnic.metrics import baseline_row, bd_metrics, curve_to_csv, \
        emit_report, report_csv, ReportRow

    run = RunConfig.from_file(args.config)
    if args.out_dir:
        run.out_dir = args.out_dir
    train_samples = load_dataset(run)
    if args.samples:
        eval_samples = [kitti.load_unified(p) for p in args.samples]
    else:
        eval_samples = train_samples
    with_msssim = not args.no_msssim

    variants = tuple(dict.fromkeys(args.ablate))
    curves = ablation_curves(run, variants, train_samples, eval_samples,
                             reuse=not args.retrain, with_msssim=with_msssim)

    out = Path(run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, (curve, _) in curves.items():
        path = out / f"curve_{name}.csv"
        path.write_text(curve_to_csv(curve), encoding="utf-8")
        print(f"wrote {path}")

    rows = [baseline_row("fused")]
    ref_curve = curves["fused"][0]
    for name, (curve, _) in curves.items():
        if name == "fused":
            continue
        if len(curve.points) >= 4 and len(ref_curve.points) >= 4:
            bd_p = bd_metrics(ref_curve, curve, "psnr")
            bd_s = (bd_metrics(ref_curve, curve, "msssim") if with_msssim
                    else None)
            rows.append(ReportRow(
                name, bd_p.bd_quality, bd_p.bd_rate_percent,
                bd_s.bd_quality if bd_s else float("nan"),
                bd_s.bd_rate_percent if bd_s else float("nan")))
        else:
            print(f"note: {name} curve has fewer than 4 points, skipping BD row")
    table = emit_report(rows)
    (out / "report.txt").write_text(table, encoding="utf-8")
    (out / "report.csv").write_text(report_csv(rows), encoding="utf-8")
    print(table, end="")

    if "image-only" in curves:
        comparison = rate_comparison(
            curves["fused"][1], curves["image-only"][1], eval_samples)
        text = rate_comparison_text(comparison)
        (out / "rate_comparison.txt").write_text(text, encoding="utf-8")
        print(text, end="")
    return 0


def cmd_bd(args) -> int:
    from pcnic.metrics import baseline_row, bd_metrics, curve_from_csv, \
        emit_report, report_csv, ReportRow

    ref = curve_from_csv(Path(args.reference).read_text(encoding="utf-8"),
                         method=args.reference_label)
    rows = [baseline_row(args.reference_label)]
    for path in args.test:
        curve = curve_from_csv(Path(path).read_text(encoding="utf-8"),
                               method=Path(path).stem)
        bd_p = bd_metrics(ref, curve, "psnr")
        bd_s = bd_metrics(ref, curve, "msssim")
        rows.append(ReportRow(curve.method, bd_p.bd_quality,
                              bd_p.bd_rate_percent, bd_s.bd_quality,
                              bd_s.bd_rate_percent))
    table = emit_report(rows)
    if args.output:
        Path(args.output).write_text(report_csv(rows), encoding="utf-8")
    print(table, end="")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _build_parser() -> _Parser:
    parser = _Parser(prog="pcnic",
                     description="point-cloud-assisted learned image codec")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("project", help="build a unified sample",
                       description="Project a LiDAR scan into the image and "
                                   "write a unified 4-channel sample.")
    p.add_argument("--image", required=True)
    p.add_argument("--lidar", required=True)
    p.add_argument("--calib", required=True)
    p.add_argument("--output", "-o", required=True)
    p.add_argument("--depth-source", choices=("camera-z", "lidar-x"),
                   default="camera-z")
    p.add_argument("--d-max", type=float, default=80.0)
    p.add_argument("--crop", default=None,
                   help="top,left,height,width (multiples of 16)")
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("train", help="train checkpoints per lambda")
    p.add_argument("config", help="run config JSON")
    p.add_argument("--out-dir", default=None)
    p.add_argument("--resume", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("encode", help="compress a unified sample")
    p.add_argument("sample")
    p.add_argument("checkpoint")
    p.add_argument("--output", "-o", required=True)
    p.add_argument("--image-only", action="store_true",
                   help="zero the point-cloud branch at encode time")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="decompress a bitstream to PNG")
    p.add_argument("bitstream")
    p.add_argument("checkpoint")
    p.add_argument("--output", "-o", required=True)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("eval", help="train variants, assemble curves, report")
    p.add_argument("config", help="run config JSON")
    p.add_argument("--out-dir", default=None)
    p.add_argument("--samples", nargs="*", default=None,
                   help="unified sample files for evaluation "
                        "(default: the training set)")
    p.add_argument("--ablate", action="append", default=[],
                   choices=("no-attention", "image-only"),
                   help="also train/evaluate an ablated variant")
    p.add_argument("--retrain", action="store_true",
                   help="ignore existing checkpoints")
    p.add_argument("--no-msssim", action="store_true",
                   help="skip MS-SSIM (for images under 161 px)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bd", help="Bjontegaard report from curve CSVs")
    p.add_argument("--reference", required=True)
    p.add_argument("--reference-label", default="reference")
    p.add_argument("--test", nargs="+", required=True)
    p.add_argument("--output", "-o", default=None,
                   help="also write the report as CSV")
    p.set_defaults(func=cmd_bd)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except PcnicError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
