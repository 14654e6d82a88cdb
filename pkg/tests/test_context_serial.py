"""The serial context walker must agree with the vectorized context model,
and it must give identical answers whether it sees the full quantized latent
or a buffer filled progressively in raster order.  The decoder relies on the
second property: it only ever has the already-decoded prefix."""

import numpy as np

from pcnic.autodiff import Tensor
from pcnic.codec.context import SerialContext
from pcnic.codec.model import ContextModel, GaussianParams


def _setup(m=6, h=5, w=7, seed=0):
    rng = np.random.default_rng(seed)
    ctx = ContextModel(m, 0.11, rng=rng, dtype=np.float64)
    y_hat = rng.integers(-6, 7, size=(m, h, w)).astype(np.float64)
    mu_h = rng.standard_normal((m, h, w))
    sigma_h = rng.uniform(0.2, 2.5, (m, h, w))
    return ctx, y_hat, mu_h, sigma_h


class TestAgainstVectorized:
    def test_matches_full_context_model(self):
        ctx, y_hat, mu_h, sigma_h = _setup()
        params = ctx(Tensor(y_hat), GaussianParams(Tensor(mu_h), Tensor(sigma_h)))
        serial = SerialContext(ctx)
        m, h, w = y_hat.shape
        for i in range(h):
            for j in range(w):
                mu, sigma = serial.params_at(y_hat, mu_h, sigma_h, i, j)
                np.testing.assert_allclose(mu, params.mu.data[:, i, j],
                                           rtol=1e-9, atol=1e-12)
                np.testing.assert_allclose(sigma, params.sigma.data[:, i, j],
                                           rtol=1e-9, atol=1e-12)


class TestProgressiveBuffer:
    def test_prefix_only_buffer_is_bitwise_identical(self):
        """Decode-side call pattern: positions at or after (i, j) still hold
        garbage when (i, j) is processed."""
        ctx, y_hat, mu_h, sigma_h = _setup(seed=3)
        serial = SerialContext(ctx)
        m, h, w = y_hat.shape

        full = [serial.params_at(y_hat, mu_h, sigma_h, i, j)
                for i in range(h) for j in range(w)]

        buf = np.full_like(y_hat, 1e9)        # poison everywhere
        got = []
        for i in range(h):
            for j in range(w):
                got.append(serial.params_at(buf, mu_h, sigma_h, i, j))
                buf[:, i, j] = y_hat[:, i, j]  # reveal only after use

        for (mu_a, sg_a), (mu_b, sg_b) in zip(full, got):
            np.testing.assert_array_equal(mu_a, mu_b)
            np.testing.assert_array_equal(sg_a, sg_b)

    def test_sigma_respects_floor(self):
        ctx, y_hat, mu_h, sigma_h = _setup(seed=5)
        ctx.net3.weight.data[:] = 0.0
        ctx.net3.bias.data[ctx.m:] = -25.0
        serial = SerialContext(ctx)
        _, sigma = serial.params_at(y_hat, mu_h, sigma_h, 2, 2)
        np.testing.assert_array_equal(sigma, np.full(ctx.m, 0.11))

    def test_corner_positions_have_no_taps(self):
        """(0, 0) has no causal neighbors: output must not depend on y_hat
        at all."""
        ctx, y_hat, mu_h, sigma_h = _setup(seed=7)
        serial = SerialContext(ctx)
        a = serial.params_at(y_hat, mu_h, sigma_h, 0, 0)
        b = serial.params_at(y_hat * 0 + 123.0, mu_h, sigma_h, 0, 0)
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])
