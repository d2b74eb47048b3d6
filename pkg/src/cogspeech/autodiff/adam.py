"""Bias-corrected Adam over a named parameter set.

Supports partial updates: ``step(active)`` touches only the named subset,
leaving every other parameter (and its moment buffers) bitwise unchanged.
That is the mechanism the freeze schedule relies on.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class Adam:
    def __init__(
        self,
        params: dict[str, Tensor],
        lr: float = 1e-4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        if lr <= 0:
            raise ValueError(f"adam: lr must be positive, got {lr}")
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self._v = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def step(self, active=None):
        """One update of the ``active`` parameter names (all when None).

        The step counter advances exactly once per call, even for an
        empty active set.  Raises if an active parameter has no gradient
        buffer (zero_grads or backward must have populated it).
        """
        names = list(self.params.keys()) if active is None else list(active)
        for name in names:
            if name not in self.params:
                raise KeyError(f"adam: unknown parameter {name!r}")
            if self.params[name].grad is None:
                raise ValueError(f"adam: no gradient for active parameter {name!r}")
        self.step_count += 1
        t = self.step_count
        bias1 = 1.0 - self.beta1**t
        bias2 = 1.0 - self.beta2**t
        for name in names:
            p = self.params[name]
            g = p.grad
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)
