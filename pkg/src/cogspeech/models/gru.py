"""Bidirectional gated recurrent classifier.

Cell recurrence: h' = (1 - z) * h + z * c with update gate z, reset gate
r and candidate c = tanh(W x + U (r * h) + b).  The layer walks the
sequence one step at a time with the same cell arithmetic as the exposed
``step``, so stepwise and full-layer paths agree bitwise.
"""

from __future__ import annotations

import numpy as np

from ..autodiff import ShapeError, Tensor, concat, sigmoid, stack, tanh
from .common import Linear, uniform_param, zeros_param


class GRUCell:
    def __init__(self, input_dim: int, hidden_dim: int, rng: np.random.Generator):
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        in_scale = 1.0 / np.sqrt(input_dim)
        h_scale = 1.0 / np.sqrt(hidden_dim)
        # input projections for the three gates z|r|c, fused
        self.w = uniform_param(rng, (input_dim, 3 * hidden_dim), in_scale)
        self.b = zeros_param(3 * hidden_dim)
        # recurrent projections: z|r fused, candidate separate (applied to r*h)
        self.u_zr = uniform_param(rng, (hidden_dim, 2 * hidden_dim), h_scale)
        self.u_c = uniform_param(rng, (hidden_dim, hidden_dim), h_scale)

    def step(self, x: Tensor, h: Tensor) -> Tensor:
        """One recurrence step; accepts (batch, dim) or bare (dim,) vectors."""
        squeeze = x.ndim == 1
        if squeeze:
            x = x.reshape(1, -1)
            h = h.reshape(1, -1)
        if x.shape[1] != self.input_dim or h.shape[1] != self.hidden_dim:
            raise ShapeError(
                f"gru step: got x {x.shape}, h {h.shape}; cell expects input "
                f"{self.input_dim}, hidden {self.hidden_dim}"
            )
        hd = self.hidden_dim
        proj = x @ self.w + self.b
        rec = h @ self.u_zr
        z = sigmoid(proj[:, :hd] + rec[:, :hd])
        r = sigmoid(proj[:, hd : 2 * hd] + rec[:, hd:])
        candidate = tanh(proj[:, 2 * hd :] + (r * h) @ self.u_c)
        out = (1.0 - z) * h + z * candidate
        return out.reshape(-1) if squeeze else out

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        return {
            f"{prefix}.w": self.w,
            f"{prefix}.b": self.b,
            f"{prefix}.u_zr": self.u_zr,
            f"{prefix}.u_c": self.u_c,
        }


class BiGRULayer:
    """Forward and backward passes run independently over the sequence."""

    def __init__(self, input_dim: int, hidden_dim: int, rng: np.random.Generator):
        self.fw = GRUCell(input_dim, hidden_dim, rng)
        self.bw = GRUCell(input_dim, hidden_dim, rng)
        self.hidden_dim = hidden_dim

    def forward(self, x: Tensor):
        """x (batch, steps, dim) -> (per-step outputs (batch, steps, 2H),
        (final forward state, final backward state))."""
        batch, steps, _ = x.shape
        if steps == 0:
            raise ValueError("empty sequence")
        h = Tensor(np.zeros((batch, self.hidden_dim)))
        forward_states = []
        for t in range(steps):
            h = self.fw.step(x[:, t, :], h)
            forward_states.append(h)
        h = Tensor(np.zeros((batch, self.hidden_dim)))
        backward_states = [None] * steps
        for t in reversed(range(steps)):
            h = self.bw.step(x[:, t, :], h)
            backward_states[t] = h
        outputs = stack(
            [concat([forward_states[t], backward_states[t]], axis=1) for t in range(steps)],
            axis=1,
        )
        return outputs, (forward_states[-1], backward_states[0])

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        return {**self.fw.parameters(f"{prefix}.fw"), **self.bw.parameters(f"{prefix}.bw")}


class BiGRUClassifier:
    """Two stacked bidirectional recurrent layers and a linear head.

    The clip representation is the concatenation of the second layer's
    final forward and final backward states.
    """

    def __init__(
        self,
        input_dim: int,
        hidden_dim: int = 64,
        num_classes: int = 3,
        rng: np.random.Generator | None = None,
    ):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.layer1 = BiGRULayer(input_dim, hidden_dim, rng)
        self.layer2 = BiGRULayer(2 * hidden_dim, hidden_dim, rng)
        self.head = Linear(2 * hidden_dim, num_classes, rng)

    def forward(self, x: Tensor) -> Tensor:
        """x (batch, steps, input_dim) -> logits (batch, num_classes)."""
        if x.ndim != 3:
            raise ShapeError(f"expected (batch, steps, dim) input, got {x.shape}")
        seq, _ = self.layer1.forward(x)
        _, (final_fw, final_bw) = self.layer2.forward(seq)
        return self.head(concat([final_fw, final_bw], axis=1))

    def parameters(self) -> dict[str, Tensor]:
        return {
            **self.layer1.parameters("layer1"),
            **self.layer2.parameters("layer2"),
            **self.head.parameters("head"),
        }
