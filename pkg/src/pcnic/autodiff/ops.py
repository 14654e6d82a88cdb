"""Differentiable operations over :class:`~pcnic.autodiff.tensor.Tensor`.

Feature maps are laid out channels-first, ``(C, H, W)``, with no batch axis;
training code loops over samples.  Convolutions run as im2col/col2im plus one
matmul, which keeps reduction order fixed for a given geometry.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit, ndtr

from pcnic.autodiff.tensor import Tensor
from pcnic.util import round_half_away

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _shape_err(op: str, detail: str) -> ValueError:
    return ValueError(f"{op}: {detail}")


# ---------------------------------------------------------------------------
# im2col / col2im helpers
# ---------------------------------------------------------------------------


def _windows(xp: np.ndarray, k: int, stride: int, n_h: int, n_w: int) -> np.ndarray:
    """Gather k-by-k patches of a padded map into a (C*k*k, n_h*n_w) matrix."""
    sw = sliding_window_view(xp, (k, k), axis=(1, 2))
    sw = sw[:, ::stride, ::stride][:, :n_h, :n_w]
    c = xp.shape[0]
    cols = sw.transpose(0, 3, 4, 1, 2).reshape(c * k * k, n_h * n_w)
    return np.ascontiguousarray(cols)


def _scatter(cols: np.ndarray, c: int, buf_h: int, buf_w: int, k: int,
             stride: int, n_h: int, n_w: int, dtype) -> np.ndarray:
    """Adjoint of :func:`_windows`: scatter-add patches into a padded map."""
    out = np.zeros((c, buf_h, buf_w), dtype=dtype)
    blocks = cols.reshape(c, k, k, n_h, n_w)
    for ki in range(k):
        for kj in range(k):
            out[:, ki:ki + n_h * stride:stride, kj:kj + n_w * stride:stride] \
                += blocks[:, ki, kj]
    return out


# ---------------------------------------------------------------------------
# convolutions
# ---------------------------------------------------------------------------


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-D convolution (cross-correlation), square kernel.

    ``x`` is (C_in, H, W), ``weight`` is (C_out, C_in, k, k), ``bias`` is
    (C_out,) or None.  Output is (C_out, H', W') with
    ``H' = (H + 2*padding - k) // stride + 1``.
    """
    cin, h, w = x.data.shape
    cout, cin_w, k, k2 = weight.data.shape
    if k != k2:
        raise _shape_err("conv2d", f"kernel must be square, got {weight.data.shape}")
    if cin != cin_w:
        raise _shape_err(
            "conv2d",
            f"input channels {x.data.shape} do not match weight {weight.data.shape}",
        )
    if bias is not None and bias.data.shape != (cout,):
        raise _shape_err(
            "conv2d",
            f"bias shape {bias.data.shape} does not match weight {weight.data.shape}",
        )
    hp, wp = h + 2 * padding, w + 2 * padding
    if hp < k or wp < k:
        raise _shape_err(
            "conv2d",
            f"kernel {k}x{k} larger than padded input {hp}x{wp}",
        )
    n_h = (hp - k) // stride + 1
    n_w = (wp - k) // stride + 1

    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding)))
    cols = _windows(xp, k, stride, n_h, n_w)
    w2 = weight.data.reshape(cout, cin * k * k)
    y = w2 @ cols
    if bias is not None:
        y = y + bias.data[:, None]
    y = y.reshape(cout, n_h, n_w)

    def grad_fn(g):
        g2 = g.reshape(cout, n_h * n_w)
        gw = (g2 @ cols.T).reshape(weight.data.shape)
        gb = g2.sum(axis=1) if bias is not None else None
        gcols = w2.T @ g2
        gx_pad = _scatter(gcols, cin, hp, wp, k, stride, n_h, n_w, g.dtype)
        gx = gx_pad[:, padding:padding + h, padding:padding + w]
        if bias is not None:
            return gx, gw, gb
        return gx, gw

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._make(y, parents, grad_fn)


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
                     stride: int = 1, padding: int = 0,
                     output_padding: int = 0) -> Tensor:
    """Transposed 2-D convolution, the adjoint of :func:`conv2d`.

    ``x`` is (C_in, H, W), ``weight`` is (C_in, C_out, k, k).  Output is
    (C_out, H', W') with ``H' = (H-1)*stride - 2*padding + k + output_padding``.
    With matched geometry this computes exactly the input-gradient of conv2d,
    so ``<conv2d(x), y> == <x, conv_transpose2d(y)>`` for shared weights.
    """
    cin, h, w = x.data.shape
    cin_w, cout, k, k2 = weight.data.shape
    if k != k2:
        raise _shape_err(
            "conv_transpose2d", f"kernel must be square, got {weight.data.shape}"
        )
    if cin != cin_w:
        raise _shape_err(
            "conv_transpose2d",
            f"input channels {x.data.shape} do not match weight {weight.data.shape}",
        )
    if output_padding < 0 or (stride > 1 and output_padding >= stride) \
            or (stride == 1 and output_padding != 0):
        raise _shape_err(
            "conv_transpose2d",
            f"output_padding {output_padding} invalid for stride {stride}",
        )
    out_h = (h - 1) * stride - 2 * padding + k + output_padding
    out_w = (w - 1) * stride - 2 * padding + k + output_padding
    if out_h < 1 or out_w < 1:
        raise _shape_err(
            "conv_transpose2d", f"output would be empty ({out_h}x{out_w})"
        )
    # Scatter into a padded buffer, then crop the interior.  The buffer is
    # extended when output_padding reaches past the last tap.
    buf_h = max((h - 1) * stride + k, padding + out_h)
    buf_w = max((w - 1) * stride + k, padding + out_w)

    w2 = weight.data.reshape(cin, cout * k * k)
    x2 = x.data.reshape(cin, h * w)
    cols = w2.T @ x2
    buf = _scatter(cols, cout, buf_h, buf_w, k, stride, h, w, x.data.dtype)
    y = buf[:, padding:padding + out_h, padding:padding + out_w]
    if bias is not None:
        if bias.data.shape != (cout,):
            raise _shape_err(
                "conv_transpose2d",
                f"bias shape {bias.data.shape} does not match weight "
                f"{weight.data.shape}",
            )
        y = y + bias.data[:, None, None]
    y = np.ascontiguousarray(y)

    def grad_fn(g):
        gp = np.zeros((cout, buf_h, buf_w), dtype=g.dtype)
        gp[:, padding:padding + out_h, padding:padding + out_w] = g
        gcols = _windows(gp, k, stride, h, w)
        gx = (w2 @ gcols).reshape(x.data.shape)
        gw = (x2 @ gcols.T).reshape(weight.data.shape)
        if bias is not None:
            return gx, gw, g.sum(axis=(1, 2))
        return gx, gw

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._make(y, parents, grad_fn)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map of a vector: (C_in,) x (C_out, C_in) -> (C_out,)."""
    if x.data.ndim != 1 or weight.data.ndim != 2 \
            or weight.data.shape[1] != x.data.shape[0]:
        raise _shape_err(
            "linear",
            f"incompatible shapes {x.data.shape} and {weight.data.shape}",
        )
    y = weight.data @ x.data
    if bias is not None:
        y = y + bias.data

    def grad_fn(g):
        gx = weight.data.T @ g
        gw = np.outer(g, x.data)
        if bias is not None:
            return gx, gw, g
        return gx, gw

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._make(y, parents, grad_fn)


# ---------------------------------------------------------------------------
# activations and pointwise maps
# ---------------------------------------------------------------------------


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    mask = x.data >= 0
    y = np.where(mask, x.data, slope * x.data)

    def grad_fn(g):
        return (np.where(mask, g, np.asarray(slope, dtype=g.dtype) * g),)

    return Tensor._make(y, (x,), grad_fn)


def sigmoid(x: Tensor) -> Tensor:
    y = expit(x.data)

    def grad_fn(g):
        return (g * y * (1.0 - y),)

    return Tensor._make(y, (x,), grad_fn)


def softplus(x: Tensor) -> Tensor:
    y = np.logaddexp(np.asarray(0.0, dtype=x.data.dtype), x.data)

    def grad_fn(g):
        return (g * expit(x.data),)

    return Tensor._make(y, (x,), grad_fn)


def log(x: Tensor) -> Tensor:
    y = np.log(x.data)

    def grad_fn(g):
        return (g / x.data,)

    return Tensor._make(y, (x,), grad_fn)


def std_normal_cdf(x: Tensor) -> Tensor:
    """Standard normal CDF, elementwise; derivative is the normal pdf."""
    y = ndtr(x.data)

    def grad_fn(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data)
        return (g * pdf.astype(g.dtype, copy=False),)

    return Tensor._make(y, (x,), grad_fn)


def lower_bound(x: Tensor, bound: float) -> Tensor:
    """Elementwise max(x, bound) with a one-sided straight-through gradient.

    The gradient passes where x is above the bound, and also wherever the
    incoming gradient would push x upward out of the clamp; that keeps
    parameters from getting stuck exactly on the bound during training.
    """
    y = np.maximum(x.data, bound)

    def grad_fn(g):
        passthrough = (x.data >= bound) | (g < 0)
        return (np.where(passthrough, g, 0.0).astype(g.dtype, copy=False),)

    return Tensor._make(y, (x,), grad_fn)


def round_ste(x: Tensor) -> Tensor:
    """Round halves away from zero; identity (straight-through) gradient."""
    y = round_half_away(x.data).astype(x.data.dtype, copy=False)

    def grad_fn(g):
        return (g,)

    return Tensor._make(y, (x,), grad_fn)


# ---------------------------------------------------------------------------
# structure ops
# ---------------------------------------------------------------------------


def concat_channels(tensors) -> Tensor:
    """Concatenate (C_i, H, W) maps along the channel axis."""
    tensors = list(tensors)
    if not tensors:
        raise _shape_err("concat_channels", "need at least one tensor")
    hw = tensors[0].data.shape[1:]
    for t in tensors:
        if t.data.ndim != 3 or t.data.shape[1:] != hw:
            raise _shape_err(
                "concat_channels",
                f"spatial dims differ: {[t.data.shape for t in tensors]}",
            )
    y = np.concatenate([t.data for t in tensors], axis=0)
    sizes = [t.data.shape[0] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def grad_fn(g):
        return tuple(g[offsets[i]:offsets[i + 1]] for i in range(len(sizes)))

    return Tensor._make(y, tuple(tensors), grad_fn)


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    c = x.data.shape[0]
    if not (0 <= start < stop <= c):
        raise _shape_err(
            "slice_channels", f"range [{start}, {stop}) invalid for {c} channels"
        )
    y = np.ascontiguousarray(x.data[start:stop])

    def grad_fn(g):
        gx = np.zeros_like(x.data)
        gx[start:stop] = g
        return (gx,)

    return Tensor._make(y, (x,), grad_fn)


def crop_spatial(x: Tensor, h: int, w: int) -> Tensor:
    """Keep the top-left h-by-w window of a (C, H, W) map."""
    _, xh, xw = x.data.shape
    if h > xh or w > xw or h < 1 or w < 1:
        raise _shape_err(
            "crop_spatial", f"crop {h}x{w} invalid for input {x.data.shape}"
        )
    y = np.ascontiguousarray(x.data[:, :h, :w])

    def grad_fn(g):
        gx = np.zeros_like(x.data)
        gx[:, :h, :w] = g
        return (gx,)

    return Tensor._make(y, (x,), grad_fn)


def reshape(x: Tensor, shape) -> Tensor:
    y = x.data.reshape(shape)

    def grad_fn(g):
        return (g.reshape(x.data.shape),)

    return Tensor._make(y, (x,), grad_fn)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def global_avg_pool(x: Tensor) -> Tensor:
    """(C, H, W) -> (C,) mean over the spatial axes."""
    if x.data.ndim != 3:
        raise _shape_err("global_avg_pool", f"need (C,H,W), got {x.data.shape}")
    _, h, w = x.data.shape
    y = x.data.mean(axis=(1, 2))

    def grad_fn(g):
        scale = np.asarray(1.0 / (h * w), dtype=g.dtype)
        return (np.broadcast_to((g * scale)[:, None, None], x.data.shape).copy(),)

    return Tensor._make(y, (x,), grad_fn)


def global_max_pool(x: Tensor) -> Tensor:
    """(C, H, W) -> (C,) max over the spatial axes.

    Ties route the gradient to the first maximum in row-major order.
    """
    if x.data.ndim != 3:
        raise _shape_err("global_max_pool", f"need (C,H,W), got {x.data.shape}")
    c = x.data.shape[0]
    flat = x.data.reshape(c, -1)
    idx = flat.argmax(axis=1)
    y = flat[np.arange(c), idx]

    def grad_fn(g):
        gx = np.zeros_like(flat)
        gx[np.arange(c), idx] = g
        return (gx.reshape(x.data.shape),)

    return Tensor._make(y, (x,), grad_fn)


def sum_all(x: Tensor) -> Tensor:
    y = x.data.sum()

    def grad_fn(g):
        return (np.broadcast_to(g, x.data.shape).astype(x.data.dtype, copy=True),)

    return Tensor._make(y, (x,), grad_fn)


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean squared error over all elements; scalar output."""
    if a.data.shape != b.data.shape:
        raise _shape_err(
            "mse", f"shape mismatch {a.data.shape} vs {b.data.shape}"
        )
    diff = a.data - b.data
    y = np.mean(diff * diff)
    n = diff.size

    def grad_fn(g):
        scale = np.asarray(2.0 / n, dtype=diff.dtype)
        common = g * scale * diff
        return common, -common

    return Tensor._make(y, (a, b), grad_fn)
