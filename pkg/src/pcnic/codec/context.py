"""Position-serial evaluation of the context refinement for the coding path.

Encoder and decoder both call :meth:`SerialContext.params_at` position by
position in raster order, so the Gaussian parameters that drive the range
coder are bit-identical on both sides even though the decoder only has the
raster-earlier part of the latent.  The strictly causal kernel mask is
realized by gathering only the causal window taps, so values at or after
the current position are never read at all.

The vectorized training path lives in :class:`pcnic.codec.model.ContextModel`;
this module is inference-only numpy code.
"""

from __future__ import annotations

import numpy as np


def _leaky(x: np.ndarray) -> np.ndarray:
    return np.where(x >= 0, x, x * np.asarray(0.01, dtype=x.dtype))


class SerialContext:
    def __init__(self, ctx_model):
        self.m = ctx_model.m
        self.sigma_min = ctx_model.sigma_min
        w = ctx_model.masked.weight.data * ctx_model.masked.mask.data
        self.k = w.shape[-1]
        self.half = self.k // 2
        # Taps strictly before the center in raster order, row-major.
        self.offsets = [
            (ki, kj)
            for ki in range(self.k)
            for kj in range(self.k)
            if ki < self.half or (ki == self.half and kj < self.half)
        ]
        self.w_taps = [np.ascontiguousarray(w[:, :, ki, kj])
                       for ki, kj in self.offsets]
        self.b_masked = ctx_model.masked.bias.data
        self.w1 = ctx_model.net1.weight.data.reshape(
            ctx_model.net1.weight.shape[0], -1)
        self.b1 = ctx_model.net1.bias.data
        self.w2 = ctx_model.net2.weight.data.reshape(
            ctx_model.net2.weight.shape[0], -1)
        self.b2 = ctx_model.net2.bias.data
        self.w3 = ctx_model.net3.weight.data.reshape(
            ctx_model.net3.weight.shape[0], -1)
        self.b3 = ctx_model.net3.bias.data
        self._wsel_cache: dict[int, np.ndarray] = {}

    def _selected_weights(self, included: list[int]) -> np.ndarray:
        key = 0
        for i in included:
            key |= 1 << i
        wsel = self._wsel_cache.get(key)
        if wsel is None:
            wsel = np.concatenate([self.w_taps[i] for i in included], axis=1)
            self._wsel_cache[key] = wsel
        return wsel

    def params_at(self, y_hat: np.ndarray, mu_h: np.ndarray,
                  sigma_h: np.ndarray, i: int, j: int):
        """Refined (mu, sigma) vectors for all channels at position (i, j).

        ``y_hat`` is the (M, h, w) quantized latent buffer; entries at or
        after (i, j) in raster order are never touched.
        """
        h, w = y_hat.shape[1:]
        included = []
        vals = []
        for idx, (ki, kj) in enumerate(self.offsets):
            r = i + ki - self.half
            s = j + kj - self.half
            if 0 <= r < h and 0 <= s < w:
                included.append(idx)
                vals.append(y_hat[:, r, s])
        if included:
            wsel = self._selected_weights(included)
            ctx = wsel @ np.concatenate(vals) + self.b_masked
        else:
            ctx = self.b_masked.copy()
        x = np.concatenate([ctx, mu_h[:, i, j], sigma_h[:, i, j]])
        x = _leaky(self.w1 @ x + self.b1)
        x = _leaky(self.w2 @ x + self.b2)
        x = self.w3 @ x + self.b3
        mu = x[:self.m]
        sigma = np.maximum(np.logaddexp(np.asarray(0.0, dtype=x.dtype),
                                        x[self.m:]), self.sigma_min)
        return mu, sigma
