"""Adam optimizer over named parameter tensors."""

from __future__ import annotations

import numpy as np

from pcnic.autodiff.tensor import Tensor


class Adam:
    """Adam with bias correction (beta1=0.9, beta2=0.999, eps=1e-8).

    ``params`` is an ordered name -> Tensor mapping; the names also key the
    optimizer state when it is exported for checkpointing, so training can
    resume exactly.
    """

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step_count = 0
        self._m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self._v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        """Apply one update from the gradients currently stored on params.

        Parameters whose ``.grad`` is None are skipped.  With lr == 0 the
        update is a no-op on the parameter values (moments still advance).
        """
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            g = np.asarray(g, dtype=p.data.dtype)
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            m_hat = m / bc1
            v_hat = v / bc2
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    # -- state export for exact resume ---------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {"opt.step": np.array(float(self.step_count))}
        for name in self.params:
            out[f"opt.m.{name}"] = self._m[name]
            out[f"opt.v.{name}"] = self._v[name]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.step_count = int(np.asarray(arrays["opt.step"]).reshape(-1)[0])
        for name, p in self.params.items():
            self._m[name] = np.asarray(
                arrays[f"opt.m.{name}"], dtype=p.data.dtype
            ).reshape(p.data.shape).copy()
            self._v[name] = np.asarray(
                arrays[f"opt.v.{name}"], dtype=p.data.dtype
            ).reshape(p.data.shape).copy()
