"""Reverse-mode automatic differentiation on dense numpy arrays."""

from pcnic.autodiff.tensor import Tensor, as_tensor, grad_enabled, no_grad
from pcnic.autodiff import ops
from pcnic.autodiff.optim import Adam
from pcnic.autodiff.checkpoint import load_arrays, save_arrays

__all__ = [
    "Adam",
    "Tensor",
    "as_tensor",
    "grad_enabled",
    "load_arrays",
    "no_grad",
    "ops",
    "save_arrays",
]
