"""Convolutional classifier with self-attention pooling.

Three strided unpadded convolutions with GELU, a single learned query
scoring every remaining step, softmax pooling over time, then two linear
layers.  No padding keeps the "uniform input, uniform attention"
property exact and gives the model a hard minimum input length.
"""

from __future__ import annotations

import numpy as np

from ..autodiff import ShapeError, Tensor, conv1d, gelu, softmax, transpose
from .common import Linear, uniform_param, zeros_param


def conv_output_length(length: int, kernel: int, stride: int) -> int:
    return (length - kernel) // stride + 1


class ACNNClassifier:
    def __init__(
        self,
        input_dim: int,
        conv_channels: tuple[int, ...] = (64, 64, 64),
        kernel: int = 5,
        stride: int = 2,
        hidden_dim: int = 32,
        num_classes: int = 3,
        rng: np.random.Generator | None = None,
    ):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.kernel = kernel
        self.stride = stride
        self.conv_weights = []
        self.conv_biases = []
        in_ch = input_dim
        for out_ch in conv_channels:
            scale = 1.0 / np.sqrt(in_ch * kernel)
            self.conv_weights.append(uniform_param(rng, (out_ch, in_ch, kernel), scale))
            self.conv_biases.append(zeros_param(out_ch))
            in_ch = out_ch
        self.query = uniform_param(rng, (in_ch,), 1.0 / np.sqrt(in_ch))
        self.fc1 = Linear(in_ch, hidden_dim, rng)
        self.fc2 = Linear(hidden_dim, num_classes, rng)

    def min_input_length(self) -> int:
        """Shortest sequence that survives every convolution."""
        required = 1
        for _ in self.conv_weights:
            required = (required - 1) * self.stride + self.kernel
        return required

    def forward_with_attention(self, x: Tensor):
        """x (batch, steps, dim) -> (logits (batch, classes), attention (batch, pooled_steps))."""
        if x.ndim != 3:
            raise ShapeError(f"expected (batch, steps, dim) input, got {x.shape}")
        steps = x.shape[1]
        minimum = self.min_input_length()
        if steps < minimum:
            raise ValueError(
                f"sequence of {steps} steps too short for the convolution stack; "
                f"minimum is {minimum}"
            )
        h = transpose(x, (0, 2, 1))  # (B, C, T)
        for w, b in zip(self.conv_weights, self.conv_biases):
            h = gelu(conv1d(h, w, b, stride=self.stride))
        h = transpose(h, (0, 2, 1))  # (B, T', C)
        scores = (h * self.query).sum(axis=2)  # (B, T')
        attention = softmax(scores, axis=1)
        pooled = (h * attention.reshape(attention.shape + (1,))).sum(axis=1)
        logits = self.fc2(gelu(self.fc1(pooled)))
        return logits, attention

    def forward(self, x: Tensor) -> Tensor:
        logits, _ = self.forward_with_attention(x)
        return logits

    def parameters(self) -> dict[str, Tensor]:
        params: dict[str, Tensor] = {}
        for i, (w, b) in enumerate(zip(self.conv_weights, self.conv_biases)):
            params[f"conv{i}.w"] = w
            params[f"conv{i}.b"] = b
        params["attention.query"] = self.query
        params.update(self.fc1.parameters("fc1"))
        params.update(self.fc2.parameters("fc2"))
        return params
