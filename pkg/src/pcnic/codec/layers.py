"""Network building blocks on top of the autodiff ops.

Weights use He-style initialization (normal with std sqrt(2 / fan_in)),
biases start at zero, and every layer takes an explicit numpy Generator so
model construction is reproducible from a seed.
"""

from __future__ import annotations

import numpy as np

from pcnic.autodiff import Tensor, ops


class Module:
    """Parameter container; submodules and tensors register via attributes."""

    def named_parameters(self, prefix: str = ""):
        for key, value in self.__dict__.items():
            name = f"{prefix}{key}" if not prefix else f"{prefix}.{key}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name)
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}")

    def parameters_dict(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())


def _he(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    std = np.sqrt(2.0 / fan_in)
    return rng.normal(0.0, std, size=shape).astype(dtype)


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, k: int, stride: int = 1,
                 padding: int | None = None, *, rng, dtype):
        self.stride = stride
        self.padding = k // 2 if padding is None else padding
        self.weight = Tensor(_he(rng, (cout, cin, k, k), cin * k * k, dtype),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias,
                          stride=self.stride, padding=self.padding)


class ConvTranspose2d(Module):
    def __init__(self, cin: int, cout: int, k: int, stride: int = 1,
                 padding: int | None = None, output_padding: int = 0,
                 *, rng, dtype):
        self.stride = stride
        self.padding = k // 2 if padding is None else padding
        self.output_padding = output_padding
        self.weight = Tensor(_he(rng, (cin, cout, k, k), cin * k * k, dtype),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv_transpose2d(
            x, self.weight, self.bias, stride=self.stride,
            padding=self.padding, output_padding=self.output_padding,
        )


class Linear(Module):
    def __init__(self, cin: int, cout: int, *, rng, dtype):
        self.weight = Tensor(_he(rng, (cout, cin), cin, dtype),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class ResidualBlock(Module):
    """Two 3x3 convs with a leaky ReLU between, plus the identity skip."""

    def __init__(self, channels: int, *, rng, dtype):
        self.conv1 = Conv2d(channels, channels, 3, rng=rng, dtype=dtype)
        self.conv2 = Conv2d(channels, channels, 3, rng=rng, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return x + self.conv2(ops.leaky_relu(self.conv1(x)))


class GatedResidualBlock(Module):
    """Simplified attention block: residual trunk gated by a sigmoid branch.

    out = x + trunk(x) * sigmoid(gate(x)).  With zero biases and zero input
    the output is exactly zero, since the trunk contributes nothing.
    """

    def __init__(self, channels: int, *, rng, dtype):
        self.trunk1 = Conv2d(channels, channels, 3, rng=rng, dtype=dtype)
        self.trunk2 = Conv2d(channels, channels, 3, rng=rng, dtype=dtype)
        self.gate = Conv2d(channels, channels, 3, rng=rng, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        trunk = self.trunk2(ops.leaky_relu(self.trunk1(x)))
        return x + trunk * ops.sigmoid(self.gate(x))


class ChannelAttention(Module):
    """Squeeze-style channel gate over pooled descriptors.

    A shared two-layer bottleneck is applied to the global average and the
    global max descriptor; the gate is sigmoid of their sum.
    """

    def __init__(self, channels: int, reduction: int = 4, *, rng, dtype):
        hidden = max(1, channels // reduction)
        self.fc1 = Linear(channels, hidden, rng=rng, dtype=dtype)
        self.fc2 = Linear(hidden, channels, rng=rng, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        avg = self.fc2(ops.leaky_relu(self.fc1(ops.global_avg_pool(x))))
        mx = self.fc2(ops.leaky_relu(self.fc1(ops.global_max_pool(x))))
        return ops.sigmoid(avg + mx)


class FusionBlock(Module):
    """Merge the image and point-cloud latents into the joint latent.

    Concatenates both N-channel maps, projects to M channels with a 3x3
    conv, then (optionally) applies the channel-attention refinement
    y = x + x * gate(x).  With attention off the bare projection is the
    entire block.
    """

    def __init__(self, n: int, m: int, attention: bool, *, rng, dtype):
        self.attention = attention
        self.project = Conv2d(2 * n, m, 3, rng=rng, dtype=dtype)
        if attention:
            self.gate = ChannelAttention(m, reduction=4, rng=rng, dtype=dtype)

    def __call__(self, y_img: Tensor, y_pc: Tensor) -> Tensor:
        x = self.project(ops.concat_channels([y_img, y_pc]))
        if not self.attention:
            return x
        s = self.gate(x)
        return x + x * s


class MaskedConv2d(Module):
    """Conv whose kernel is zeroed at and after the spatial center.

    The mask enforces strict raster-scan causality: the output at (i, j)
    depends only on inputs at raster-earlier positions, never on (i, j)
    itself.  The mask multiplies the weight inside the graph, so gradients
    of masked taps are zero and the taps stay zero under training.
    """

    def __init__(self, cin: int, cout: int, k: int = 5, *, rng, dtype):
        if k % 2 == 0:
            raise ValueError(f"masked conv kernel must be odd, got {k}")
        self.padding = k // 2
        self.weight = Tensor(_he(rng, (cout, cin, k, k), cin * k * k, dtype),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)
        mask = np.zeros((k, k), dtype=dtype)
        c = k // 2
        mask[:c, :] = 1.0
        mask[c, :c] = 1.0
        self.mask = Tensor(np.broadcast_to(mask, (cout, cin, k, k)).copy())

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight * self.mask, self.bias,
                          stride=1, padding=self.padding)
