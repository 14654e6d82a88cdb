"""Package-level acceptance checks.

Each test pins one of the behavioural bars the package promises: exact
projection geometry, trustworthy gradients, a lossless and tight entropy
coder, encoder/decoder symmetry, training that actually descends, a working
ablation harness, correct BD math, and a CLI pipeline that beats a dumb
uniform quantizer on its own fixtures.  Budgets are wall-clock seconds on a
single laptop core.
"""

import dataclasses
import json
import math
import time
import warnings

import numpy as np
import pytest

from conftest import kitti_like_calibration, forward_points, make_triplet, \
    smooth_image
from test_kitti import project_oracle
from test_range_coder import draw_symbols, ideal_bits

from pcnic import kitti
from pcnic.autodiff import Tensor, ops
from pcnic.autodiff.optim import Adam
from pcnic.cli import main
from pcnic.codec.context import SerialContext
from pcnic.codec.engine import compress, decompress, load_model
from pcnic.codec.model import (
    CodecConfig,
    CodecModel,
    quantize,
    rd_loss,
)
from pcnic.codec.train import RunConfig, train_step
from pcnic.coding import build_cdf_batch, range_decode, range_encode
from pcnic.evalrun import ablation_curves
from pcnic.metrics import (
    RDCurve,
    RDPoint,
    ReportRow,
    baseline_row,
    bd_metrics,
    emit_report,
    ms_ssim,
    psnr,
)
from pcnic.util import round_half_away


def _sq(t):
    return t * t


def _depth_sprinkle(rng, h, w, count):
    depth = np.zeros((1, h, w))
    pts = rng.integers(0, min(h, w), size=(count, 2))
    depth[0, pts[:, 0] % h, pts[:, 1] % w] = rng.uniform(0.1, 0.9, count)
    return depth


def _smooth_sample(rng, h, w, hits):
    img = smooth_image(rng, h, w, amp=0.08)
    return np.concatenate([img, _depth_sprinkle(rng, h, w, hits)])


class TestProjectionOracle:
    def test_fuzz_against_explicit_matrix_chain(self):
        start = time.monotonic()
        rng = np.random.default_rng(101)
        calibs = [
            kitti.Calibration(*kitti_like_calibration()),
            kitti.Calibration(*kitti_like_calibration(
                f=700.0, cx=600.0, cy=180.0, angle=0.0)),
            kitti.Calibration(*kitti_like_calibration(
                f=250.0, angle=-0.04, tx=-0.3, ty=0.2)),
            kitti.Calibration(*kitti_like_calibration(
                f=90.0, cx=20.0, cy=70.0, angle=0.08, tz=0.4)),
            kitti.Calibration(*kitti_like_calibration(
                f=400.0, cx=300.0, cy=100.0, angle=0.02, tx=1.5)),
        ]
        for calib in calibs:
            pts = forward_points(rng, 1000)
            proj, dropped = kitti.project_points(pts, calib)
            expected = [project_oracle(p, calib) for p in pts]
            kept = [(u, v) for u, v, w in expected if w > 1e-6]
            assert len(kept) + dropped == 1000
            assert proj.shape[0] == len(kept)
            for row, (u, v) in zip(proj, kept):
                assert abs(row[0] - u) < 1e-9
                assert abs(row[1] - v) < 1e-9
        assert time.monotonic() - start < 1.0


class TestGradientSuite:
    PRIM_RTOL = 1e-4

    def test_primitives_match_finite_differences(self):
        from gradcheck import fd_check

        start = time.monotonic()
        rng = np.random.default_rng(7)

        x = Tensor(rng.standard_normal((2, 6, 6)), requires_grad=True)
        w = Tensor(rng.standard_normal((3, 2, 3, 3)) * 0.4,
                   requires_grad=True)
        b = Tensor(rng.standard_normal(3) * 0.1, requires_grad=True)
        fd_check(lambda: ops.sum_all(
            _sq(ops.conv2d(x, w, b, stride=2, padding=1))), [x, w, b],
            rtol=self.PRIM_RTOL)

        wt = Tensor(rng.standard_normal((2, 3, 3, 3)) * 0.4,
                    requires_grad=True)
        fd_check(lambda: ops.sum_all(
            _sq(ops.conv_transpose2d(x, wt, b, stride=2, padding=1,
                                     output_padding=1))), [x, wt, b],
            rtol=self.PRIM_RTOL)

        v = Tensor(rng.standard_normal(40), requires_grad=True)
        fd_check(lambda: ops.sum_all(_sq(ops.leaky_relu(v))), [v],
                 rtol=self.PRIM_RTOL)
        fd_check(lambda: ops.sum_all(ops.sigmoid(v)), [v],
                 rtol=self.PRIM_RTOL)
        fd_check(lambda: ops.sum_all(ops.softplus(v)), [v],
                 rtol=self.PRIM_RTOL)
        fd_check(lambda: ops.sum_all(ops.std_normal_cdf(v)), [v],
                 rtol=self.PRIM_RTOL)

        pos = Tensor(rng.uniform(0.5, 2.0, 40), requires_grad=True)
        fd_check(lambda: ops.sum_all(ops.log(pos)), [pos],
                 rtol=self.PRIM_RTOL)
        bounded = Tensor(rng.uniform(0.3, 1.7, 40), requires_grad=True)
        fd_check(lambda: ops.sum_all(_sq(ops.lower_bound(bounded, 0.11))),
                 [bounded], rtol=self.PRIM_RTOL)

        a2 = Tensor(rng.standard_normal((3, 5, 5)), requires_grad=True)
        b2 = Tensor(rng.standard_normal((3, 5, 5)), requires_grad=True)
        fd_check(lambda: ops.mse(a2, b2), [a2, b2], rtol=self.PRIM_RTOL)
        fd_check(lambda: ops.sum_all(ops.global_avg_pool(a2)
                                     + ops.global_max_pool(a2)), [a2],
                 rtol=self.PRIM_RTOL)
        assert time.monotonic() - start < 60.0

    def test_end_to_end_codec_gradients(self):
        start = time.monotonic()
        cfg = CodecConfig(n=8, m=12, depth=4, lam=0.0075)
        model = CodecModel(cfg, np.random.default_rng(2), dtype=np.float64)
        sample = np.random.default_rng(3).random((4, 32, 32))

        def loss():
            out = model.forward_train(sample, np.random.default_rng(17))
            return rd_loss(out, cfg.lam, 32 * 32)

        loss().backward()
        h = 1e-5
        for name, p in model.named_parameters():
            grad = p.grad
            idx = np.unravel_index(np.argmax(np.abs(grad)), grad.shape)
            keep = p.data[idx]
            p.data[idx] = keep + h
            up = float(loss().data)
            p.data[idx] = keep - h
            down = float(loss().data)
            p.data[idx] = keep
            fd = (up - down) / (2 * h)
            rel = abs(fd - grad[idx]) / max(abs(fd), abs(grad[idx]), 1e-12)
            assert rel < 1e-3, f"{name}: fd {fd} vs backward {grad[idx]}"
        assert time.monotonic() - start < 60.0


class TestEntropyCoder:
    def test_ten_thousand_symbol_fuzz_lossless_and_tight(self):
        start = time.monotonic()
        rng = np.random.default_rng(202)
        n = 10_000
        mus = rng.uniform(-40.0, 40.0, n)
        sigmas = rng.uniform(0.11, 15.0, n)
        tables = build_cdf_batch(mus, sigmas)
        symbols = draw_symbols(rng, tables)

        payload = range_encode(symbols, tables)
        assert range_decode(payload, tables) == symbols

        bound = ideal_bits(symbols, tables) / 8.0 + 2 * n / 1000 + 16
        assert len(payload) <= bound
        assert time.monotonic() - start < 10.0


class TestRateModelConsistency:
    def test_estimate_tracks_coder_per_stream(self, toy_model):
        for seed, hw in ((3, (64, 96)), (5, (64, 64)), (9, (96, 96))):
            sample = np.random.default_rng(seed).random((4, *hw))
            sample[3] *= 0.6
            _, stats = compress(toy_model, sample)
            for est, actual in ((stats["est_z_bits"], 8 * stats["z_bytes"]),
                                (stats["est_y_bits"], 8 * stats["y_bytes"])):
                assert abs(est - actual) <= 0.01 * actual + 64


class TestContextSymmetry:
    def test_decoder_side_params_bit_exact(self, toy_config):
        cfg = dataclasses.replace(toy_config, context=True)
        model = CodecModel(cfg, np.random.default_rng(8), dtype=np.float32)
        sample = np.random.default_rng(9).random((4, 64, 64))
        sample[3] *= 0.5

        x = Tensor(sample.astype(np.float32))
        y_hat = quantize(model.encode_latent(x), "infer")
        assert y_hat.shape[1:] == (4, 4)
        z_hat = quantize(model.hyper_a(y_hat), "infer")
        hyper = model.hyper_s(z_hat, (4, 4))

        buf_full = y_hat.data.astype(np.float64)
        mu_h = hyper.mu.data.astype(np.float64)
        sigma_h = hyper.sigma.data.astype(np.float64)
        serial = SerialContext(model.ctx)

        encode_side = [serial.params_at(buf_full, mu_h, sigma_h, i, j)
                       for i in range(4) for j in range(4)]

        progressive = np.full_like(buf_full, np.inf)
        k = 0
        for i in range(4):
            for j in range(4):
                mu, sigma = serial.params_at(progressive, mu_h, sigma_h, i, j)
                np.testing.assert_array_equal(mu, encode_side[k][0])
                np.testing.assert_array_equal(sigma, encode_side[k][1])
                progressive[:, i, j] = buf_full[:, i, j]
                k += 1

        blob, _ = compress(model, sample)
        recon, _ = decompress(model, blob)
        assert recon.shape == (3, 64, 64)


class TestTrainingDescent:
    def _batch(self):
        rng = np.random.default_rng(5)
        return [_smooth_sample(rng, 64, 64, 100) for _ in range(8)]

    def _run(self):
        batch = self._batch()
        cfg = CodecConfig(n=16, m=24, depth=4, lam=0.015)
        rng = np.random.default_rng(33)
        model = CodecModel(cfg, rng)
        opt = Adam(model.parameters_dict(), lr=1e-3)
        return [train_step(batch, model, opt, 0.015, rng)
                for _ in range(200)]

    def test_two_hundred_steps_descend_and_repeat_bitwise(self):
        start = time.monotonic()
        first = self._run()
        assert first[-1] < 0.7 * first[0]
        assert self._run() == first
        assert time.monotonic() - start < 600.0


class TestAblationHarness:
    def test_variants_train_and_report_emits(self, tmp_path):
        rng = np.random.default_rng(6)
        train = [_smooth_sample(rng, 48, 48, 60) for _ in range(4)]
        evalset = [_smooth_sample(np.random.default_rng(sd), 176, 176, 600)
                   for sd in (60, 61)]
        run = RunConfig(out_dir=str(tmp_path / "runs"), n=6, m=8, depth=4,
                        lambdas=[0.003, 0.02, 0.1, 0.5], epochs=4,
                        steps_per_epoch=50, batch_size=2, crop=32, seed=4,
                        lr=2e-3)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            curves = ablation_curves(run, ("no-attention", "image-only"),
                                     train, evalset, with_msssim=True)

            rows = [baseline_row("fused")]
            for name in ("no-attention", "image-only"):
                curve = curves[name][0]
                assert len(curve.points) == 4
                bd_p = bd_metrics(curves["fused"][0], curve, "psnr")
                bd_s = bd_metrics(curves["fused"][0], curve, "msssim")
                rows.append(ReportRow(name, bd_p.bd_quality,
                                      bd_p.bd_rate_percent, bd_s.bd_quality,
                                      bd_s.bd_rate_percent))
        report = emit_report(rows)
        lines = report.splitlines()
        assert lines[0].split()[0] == "method"
        assert len(lines) == 4
        assert lines[1].split()[0] == "fused"
        assert {lines[2].split()[0], lines[3].split()[0]} == {
            "no-attention", "image-only"}

    def test_disabled_attention_is_bare_fusion_conv(self, tmp_path):
        """The no-attention variant must reduce the fusion block to its
        projection conv, exactly."""
        run = RunConfig(out_dir=str(tmp_path / "runs"), n=6, m=8, depth=4,
                        lambdas=[0.01], epochs=1, steps_per_epoch=5,
                        batch_size=2, crop=32, seed=4, lr=1e-3, attention=False)
        rng = np.random.default_rng(6)
        from pcnic.codec.train import Trainer
        trainer = Trainer(run, 0.01,
                          samples=[_smooth_sample(rng, 48, 48, 60)
                                   for _ in range(2)])
        trainer.train()
        model = load_model(trainer.ckpt_path)

        data = np.random.default_rng(12)
        y_img = Tensor(data.standard_normal((6, 5, 5)).astype(np.float32))
        y_pc = Tensor(data.standard_normal((6, 5, 5)).astype(np.float32))
        fused = model.fusion(y_img, y_pc)
        bare = ops.conv2d(ops.concat_channels([y_img, y_pc]),
                          model.fusion.project.weight,
                          model.fusion.project.bias, stride=1, padding=1)
        np.testing.assert_array_equal(fused.data, bare.data)


class TestBdMetrics:
    def test_identical_curves_give_zero(self):
        pts = [(0.1, 30.0), (0.25, 33.5), (0.55, 36.0), (1.1, 38.5)]
        a = RDCurve("a", [RDPoint(r, q, 1 - 1 / q) for r, q in pts])
        b = RDCurve("b", [RDPoint(r, q, 1 - 1 / q) for r, q in pts])
        res = bd_metrics(a, b)
        assert res.bd_quality == pytest.approx(0.0, abs=1e-12)
        assert res.bd_rate_percent == pytest.approx(0.0, abs=1e-9)

    def test_one_db_shift(self):
        pts = [(0.1, 30.0), (0.25, 33.5), (0.55, 36.0), (1.1, 38.5)]
        a = RDCurve("a", [RDPoint(r, q, 0.9) for r, q in pts])
        b = RDCurve("b", [RDPoint(r, q + 1.0, 0.9) for r, q in pts])
        assert bd_metrics(a, b).bd_quality == pytest.approx(1.0, abs=1e-6)

    def test_matches_dense_numerical_integration(self):
        rates_a = [0.12, 0.3, 0.62, 1.3]
        rates_b = [0.1, 0.27, 0.5, 1.05]
        qual_a = [31.0, 34.2, 36.9, 39.4]
        qual_b = [31.8, 34.9, 37.2, 39.9]
        a = RDCurve("a", [RDPoint(r, q, 0.9)
                          for r, q in zip(rates_a, qual_a)])
        b = RDCurve("b", [RDPoint(r, q, 0.9)
                          for r, q in zip(rates_b, qual_b)])
        res = bd_metrics(a, b)

        la, lb = np.log10(rates_a), np.log10(rates_b)
        xs = np.linspace(max(la.min(), lb.min()), min(la.max(), lb.max()),
                         100_001)
        diff = (np.polyval(np.polyfit(lb, qual_b, 3), xs)
                - np.polyval(np.polyfit(la, qual_a, 3), xs))
        want_q = np.trapezoid(diff, xs) / (xs[-1] - xs[0])
        assert res.bd_quality == pytest.approx(want_q, rel=1e-4)

        qs = np.linspace(max(min(qual_a), min(qual_b)),
                         min(max(qual_a), max(qual_b)), 100_001)
        diff_r = (np.polyval(np.polyfit(qual_b, lb, 3), qs)
                  - np.polyval(np.polyfit(qual_a, la, 3), qs))
        want_r = (10.0 ** (np.trapezoid(diff_r, qs) / (qs[-1] - qs[0]))
                  - 1.0) * 100.0
        assert res.bd_rate_percent == pytest.approx(want_r, rel=1e-4)


class TestMetricSentinels:
    def test_psnr_identity_is_infinite(self):
        a = np.random.default_rng(1).random((3, 32, 32))
        assert psnr(a, a) == math.inf

    def test_ms_ssim_identity_is_one(self):
        a = np.random.default_rng(2).random((161, 161))
        assert ms_ssim(a, a) == 1.0

    def test_uniform_offset_is_twenty_db(self):
        a = np.random.default_rng(3).random((3, 24, 24)) * 0.5
        assert psnr(a, a + 0.1) == pytest.approx(20.0, abs=1e-12)


class TestCliPipeline:
    def test_project_train_encode_decode_beats_uniform_quantizer(
            self, tmp_path):
        start = time.monotonic()
        data = tmp_path / "data"
        rng = np.random.default_rng(23)
        stems = [f"{k:06d}" for k in range(4)]
        for stem in stems:
            make_triplet(data, stem, rng)

        for stem in stems:
            assert main([
                "project",
                "--image", str(data / "image_2" / f"{stem}.png"),
                "--lidar", str(data / "velodyne" / f"{stem}.bin"),
                "--calib", str(data / "calib" / f"{stem}.txt"),
                "-o", str(tmp_path / f"{stem}.pcnu")]) == 0

        cfg = dict(out_dir=str(tmp_path / "runs"), dataset=str(data),
                   n=16, m=24, depth=4, lambdas=[0.15], epochs=12,
                   steps_per_epoch=100, batch_size=4, crop=64, seed=0,
                   lr=1e-3)
        cfg_path = tmp_path / "run.json"
        cfg_path.write_text(json.dumps(cfg))
        assert main(["train", str(cfg_path)]) == 0

        ckpt = tmp_path / "runs" / "lam0.15.pcnw"
        blob = tmp_path / "sample.pcni"
        png = tmp_path / "recon.png"
        assert main(["encode", str(tmp_path / "000000.pcnu"), str(ckpt),
                     "-o", str(blob)]) == 0
        assert main(["decode", str(blob), str(ckpt), "-o", str(png)]) == 0

        orig = kitti.load_image(data / "image_2" / "000000.png")
        recon = kitti.load_image(png)
        codec_psnr = psnr(recon, orig)
        codec_bpp = 8 * blob.stat().st_size / (64 * 96)

        uniform = round_half_away(orig * 15.0) / 15.0
        uniform_psnr = psnr(uniform, orig)
        uniform_bpp = 3 * 4.0          # 16 levels, three channels

        assert codec_bpp <= uniform_bpp
        assert codec_psnr > uniform_psnr
        assert time.monotonic() - start < 900.0


class TestReportFormatting:
    def test_published_row_renders_verbatim(self):
        row = ReportRow("context", 2.101, -54.518, 1.001, -29.315)
        assert row.cells() == ("context", "2.101", "-54.518", "1.001",
                               "-29.315")

    def test_reference_row_is_zero(self):
        assert baseline_row("reference").cells()[1:] == ("0", "0", "0", "0")
