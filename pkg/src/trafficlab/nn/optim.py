"""Adam with the standard bias-corrected moments and a linear lr schedule."""
from __future__ import annotations

import numpy as np

from .params import ParamStore


class GradientNaNError(RuntimeError):
    """Raised before any update is applied when a gradient contains NaN."""


def linear_lr(step: int, total_steps: int, lr_start: float = 3e-4, lr_end: float = 3e-5) -> float:
    """Learning rate decayed linearly from ``lr_start`` to ``lr_end``."""
    if total_steps <= 1:
        return lr_start
    frac = min(max(step / (total_steps - 1), 0.0), 1.0)
    return lr_start + (lr_end - lr_start) * frac


class Adam:
    def __init__(self, store: ParamStore, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.store = store
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self.t = 0  # this optimizer's own step count (bias correction)

    def step(self, lr: float) -> None:
        """Apply one update to all unfrozen parameters from their ``grad``.

        Parameters without an accumulated gradient are skipped.  If any
        gradient contains NaN the whole update aborts and no parameter is
        touched.
        """
        grads = self.store.gradients()
        for name, g in grads.items():
            if np.isnan(g).any():
                raise GradientNaNError(f"NaN gradient for parameter {name!r}; no update applied")
        self.store.step += 1
        self.t += 1
        t = self.t
        for name, g in grads.items():
            p = self.store[name]
            m = self._m.get(name)
            v = self._v.get(name)
            if m is None:
                m = np.zeros_like(p.data)
                v = np.zeros_like(p.data)
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * (g * g)
            self._m[name] = m
            self._v[name] = v
            m_hat = m / (1.0 - self.beta1**t)
            v_hat = v / (1.0 - self.beta2**t)
            p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + self.eps)
