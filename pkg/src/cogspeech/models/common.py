"""Shared building blocks for the model zoo."""

from __future__ import annotations

import numpy as np

from ..autodiff import Tensor


def uniform_param(rng: np.random.Generator, shape, scale: float) -> Tensor:
    return Tensor(rng.uniform(-scale, scale, size=shape), requires_grad=True)


def zeros_param(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


class Linear:
    """Affine map y = x @ w + b; accepts any leading batch axes."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        scale = 1.0 / np.sqrt(in_dim)
        self.w = uniform_param(rng, (in_dim, out_dim), scale)
        self.b = zeros_param(out_dim)

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.w + self.b

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.w": self.w, f"{prefix}.b": self.b}
