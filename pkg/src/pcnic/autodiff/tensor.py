"""Core tensor type and the reverse-mode differentiation graph.

A :class:`Tensor` wraps a float32 or float64 numpy array.  Operations build an
immutable DAG; ``backward()`` on a scalar walks a topological order of that
DAG and accumulates gradients into ``.grad`` of every node that requires
them.  Calling ``backward()`` twice without clearing gradients accumulates
exactly twice; there is no hidden graph reset.

Reduction orders inside every op are fixed, so identical inputs produce
bitwise-identical outputs and gradients run to run.
"""

from __future__ import annotations

import numpy as np

_FLOAT_DTYPES = (np.float32, np.float64)

_grad_enabled = True


def grad_enabled() -> bool:
    return _grad_enabled


class no_grad:
    """Context manager that disables graph construction (inference mode)."""

    def __enter__(self):
        global _grad_enabled
        self._saved = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._saved
        return False


def _coerce(data) -> np.ndarray:
    arr = np.asarray(data)
    if arr.dtype not in _FLOAT_DTYPES:
        arr = arr.astype(np.float64)
    return arr


class Tensor:
    """A dense real-valued array plus optional gradient bookkeeping."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_grad_fn")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _coerce(data)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._grad_fn = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    # -- graph construction -------------------------------------------------

    @staticmethod
    def _make(data, parents, grad_fn) -> "Tensor":
        """Create an op result; attaches the graph only when gradients flow."""
        out = Tensor(data)
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._grad_fn = grad_fn
        return out

    # -- backward pass ------------------------------------------------------

    def backward(self) -> None:
        """Accumulate dself/dnode into ``.grad`` over the whole graph.

        Only defined for scalar tensors.  Raises ``ValueError`` for
        non-scalar roots and for graphs containing a cycle (which cannot be
        built through the public API, but is guarded against anyway).
        """
        if self.data.ndim != 0:
            raise ValueError(
                f"backward() requires a scalar, got shape {self.data.shape}"
            )
        order = self._toposort()
        grads: dict[int, np.ndarray] = {
            id(self): np.ones((), dtype=self.data.dtype)
        }
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            node.grad = g if node.grad is None else node.grad + g
            if node._grad_fn is None:
                continue
            parent_grads = node._grad_fn(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    def _toposort(self) -> list["Tensor"]:
        """Reverse topological order of the grad-relevant subgraph."""
        WHITE, GRAY, BLACK = 0, 1, 2
        state: dict[int, int] = {}
        order: list[Tensor] = []
        stack: list[Tensor] = [self]
        while stack:
            node = stack[-1]
            st = state.get(id(node), WHITE)
            if st == WHITE:
                state[id(node)] = GRAY
                for parent in node._parents:
                    if not parent.requires_grad:
                        continue
                    pst = state.get(id(parent), WHITE)
                    if pst == GRAY:
                        raise ValueError("cycle detected in autodiff graph")
                    if pst == WHITE:
                        stack.append(parent)
            else:
                stack.pop()
                if st == GRAY:
                    state[id(node)] = BLACK
                    order.append(node)
        order.reverse()
        return order

    # -- arithmetic ----------------------------------------------------------

    def _binary(self, other, fwd, bwd_a, bwd_b):
        other = as_tensor(other, dtype=self.data.dtype)
        a, b = _align_channel(self.data, other.data)
        data = fwd(a, b)

        def grad_fn(g):
            ga = _unbroadcast(bwd_a(g, a, b), a.shape).reshape(self.data.shape)
            gb = _unbroadcast(bwd_b(g, a, b), b.shape).reshape(other.data.shape)
            return ga, gb

        return Tensor._make(data, (self, other), grad_fn)

    def __add__(self, other):
        return self._binary(
            other,
            lambda a, b: a + b,
            lambda g, a, b: g,
            lambda g, a, b: g,
        )

    __radd__ = __add__

    def __sub__(self, other):
        return self._binary(
            other,
            lambda a, b: a - b,
            lambda g, a, b: g,
            lambda g, a, b: -g,
        )

    def __rsub__(self, other):
        return as_tensor(other, dtype=self.data.dtype).__sub__(self)

    def __mul__(self, other):
        return self._binary(
            other,
            lambda a, b: a * b,
            lambda g, a, b: g * b,
            lambda g, a, b: g * a,
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self._binary(
            other,
            lambda a, b: a / b,
            lambda g, a, b: g / b,
            lambda g, a, b: -g * a / (b * b),
        )

    def __rtruediv__(self, other):
        return as_tensor(other, dtype=self.data.dtype).__truediv__(self)

    def __neg__(self):
        return Tensor._make(-self.data, (self,), lambda g: (-g,))


def as_tensor(value, dtype=None) -> Tensor:
    """Wrap scalars/arrays as constant tensors; pass tensors through."""
    if isinstance(value, Tensor):
        return value
    arr = np.asarray(value, dtype=dtype if dtype is not None else np.float64)
    return Tensor(arr)


def _align_channel(a: np.ndarray, b: np.ndarray):
    """Line up a channel vector (C,) with a feature map (C,H,W).

    Plain numpy broadcasting aligns from the trailing axis, which is not what
    per-channel scaling wants, so that one case is special-cased here.  All
    other shape combinations fall through to numpy's own broadcasting rules.
    """
    if a.ndim == 3 and b.ndim == 1 and b.shape[0] == a.shape[0]:
        return a, b.reshape(-1, 1, 1)
    if b.ndim == 3 and a.ndim == 1 and a.shape[0] == b.shape[0]:
        return a.reshape(-1, 1, 1), b
    return a, b


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g
