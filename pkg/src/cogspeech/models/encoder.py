"""Contrastive speech encoder: conv frontend, transformer context
layers, and a nearest-neighbor vector quantizer.

The local encoder maps raw 16 kHz waveform to one 32-dim latent per 320
samples (20 ms) through three conv blocks whose kernel equals their
stride, so the step count is exactly ``samples // 320``.  The context
encoder adds fixed sinusoidal position codes and runs two pre-norm
transformer layers.  The quantizer snaps latents to the nearest codebook
row; its backward rule is straight-through to the latents plus
scatter-accumulated gradients into the selected rows.
"""

from __future__ import annotations

import numpy as np

from ..autodiff import Tensor, gelu, layer_norm, matmul, softmax, transpose
from ..autodiff.tensor import _make
from .common import Linear, uniform_param, zeros_param

LATENT_STRIDE = 320  # samples per latent step: 40 * 4 * 2


class LocalEncoder:
    """Three conv blocks (conv -> layer norm -> GELU), strides 40, 4, 2.

    Kernel equals stride per block, so step counts compose by floor
    division and the cost of the full-rate first stage stays small.
    """

    def __init__(self, dim: int, rng: np.random.Generator):
        self.dim = dim
        self.specs = ((1, dim, 40), (dim, dim, 4), (dim, dim, 2))
        self.weights = []
        self.biases = []
        self.ln_gains = []
        self.ln_biases = []
        for in_ch, out_ch, k in self.specs:
            scale = 1.0 / np.sqrt(in_ch * k)
            self.weights.append(uniform_param(rng, (out_ch, in_ch, k), scale))
            self.biases.append(zeros_param(out_ch))
            self.ln_gains.append(Tensor(np.ones(out_ch), requires_grad=True))
            self.ln_biases.append(zeros_param(out_ch))

    def forward(self, waves: Tensor) -> Tensor:
        """waves (batch, samples) -> latents (batch, samples // 320, dim)."""
        from ..autodiff import conv1d

        if waves.ndim != 2:
            raise ValueError(f"expected (batch, samples) waveforms, got {waves.shape}")
        if waves.shape[1] < LATENT_STRIDE:
            raise ValueError(
                f"waveform of {waves.shape[1]} samples too short; "
                f"one latent step needs {LATENT_STRIDE}"
            )
        h = waves.reshape(waves.shape[0], 1, waves.shape[1])
        for (_, _, k), w, b, g, lb in zip(
            self.specs, self.weights, self.biases, self.ln_gains, self.ln_biases
        ):
            h = conv1d(h, w, b, stride=k)  # kernel == stride: step count composes
            h = transpose(h, (0, 2, 1))
            h = gelu(layer_norm(h, g, lb))
            h = transpose(h, (0, 2, 1))
        return transpose(h, (0, 2, 1))

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        params = {}
        for i in range(len(self.specs)):
            params[f"{prefix}.conv{i}.w"] = self.weights[i]
            params[f"{prefix}.conv{i}.b"] = self.biases[i]
            params[f"{prefix}.conv{i}.ln_gain"] = self.ln_gains[i]
            params[f"{prefix}.conv{i}.ln_bias"] = self.ln_biases[i]
        return params


class TransformerLayer:
    """Pre-norm self-attention block with a GELU MLP."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        if dim % heads != 0:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.ln1_gain = Tensor(np.ones(dim), requires_grad=True)
        self.ln1_bias = zeros_param(dim)
        self.wq = Linear(dim, dim, rng)
        self.wk = Linear(dim, dim, rng)
        self.wv = Linear(dim, dim, rng)
        self.wo = Linear(dim, dim, rng)
        self.ln2_gain = Tensor(np.ones(dim), requires_grad=True)
        self.ln2_bias = zeros_param(dim)
        self.mlp1 = Linear(dim, 2 * dim, rng)
        self.mlp2 = Linear(2 * dim, dim, rng)

    def _split_heads(self, x: Tensor, batch: int, steps: int) -> Tensor:
        x = x.reshape(batch, steps, self.heads, self.head_dim)
        x = transpose(x, (0, 2, 1, 3))
        return x.reshape(batch * self.heads, steps, self.head_dim)

    def forward(self, x: Tensor) -> Tensor:
        batch, steps, _ = x.shape
        normed = layer_norm(x, self.ln1_gain, self.ln1_bias)
        q = self._split_heads(self.wq(normed), batch, steps)
        k = self._split_heads(self.wk(normed), batch, steps)
        v = self._split_heads(self.wv(normed), batch, steps)
        scores = matmul(q, transpose(k, (0, 2, 1))) * (1.0 / np.sqrt(self.head_dim))
        attended = matmul(softmax(scores, axis=-1), v)
        attended = attended.reshape(batch, self.heads, steps, self.head_dim)
        attended = transpose(attended, (0, 2, 1, 3)).reshape(batch, steps, self.dim)
        x = x + self.wo(attended)
        normed = layer_norm(x, self.ln2_gain, self.ln2_bias)
        return x + self.mlp2(gelu(self.mlp1(normed)))

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        return {
            f"{prefix}.ln1_gain": self.ln1_gain,
            f"{prefix}.ln1_bias": self.ln1_bias,
            **self.wq.parameters(f"{prefix}.wq"),
            **self.wk.parameters(f"{prefix}.wk"),
            **self.wv.parameters(f"{prefix}.wv"),
            **self.wo.parameters(f"{prefix}.wo"),
            f"{prefix}.ln2_gain": self.ln2_gain,
            f"{prefix}.ln2_bias": self.ln2_bias,
            **self.mlp1.parameters(f"{prefix}.mlp1"),
            **self.mlp2.parameters(f"{prefix}.mlp2"),
        }


def sinusoidal_positions(steps: int, dim: int) -> np.ndarray:
    """Fixed sin/cos position codes; no parameters, any length."""
    positions = np.arange(steps)[:, None]
    rates = 1.0 / 10000.0 ** (2 * (np.arange(dim) // 2) / dim)
    angles = positions * rates[None, :]
    codes = np.empty((steps, dim))
    codes[:, 0::2] = np.sin(angles[:, 0::2])
    codes[:, 1::2] = np.cos(angles[:, 1::2])
    return codes


class Quantizer:
    """Nearest codebook row in Euclidean distance, ties to the lowest index."""

    def __init__(self, num_codes: int, dim: int, rng: np.random.Generator):
        self.codebook = Tensor(rng.normal(0.0, 1.0, size=(num_codes, dim)), requires_grad=True)

    def initialize_from_data(
        self, latents: np.ndarray, rng: np.random.Generator, shrink: float = 0.5
    ):
        """Reseed codebook rows from observed latents, shrunk toward their
        centroid (plus a little noise so no two rows coincide).

        Data-dependent initialization keeps codes live; the shrink keeps
        early code directions close enough that contrastive scores start
        near chance instead of being dominated by init spread.
        """
        latents = np.asarray(latents, dtype=np.float64).reshape(-1, self.codebook.shape[1])
        picks = rng.choice(latents.shape[0], size=self.codebook.shape[0], replace=True)
        centroid = latents.mean(axis=0)
        rows = centroid + shrink * (latents[picks] - centroid)
        spread = latents.std() + 1e-3
        self.codebook.data = rows + rng.normal(
            0.0, 0.02 * spread, size=self.codebook.shape
        )

    def quantize(self, z: Tensor):
        """z (steps, dim) -> (quantized (steps, dim), indices (steps,)).

        Backward treats quantization as identity toward z (straight-through)
        and scatter-adds the output gradient into the selected codebook rows.
        """
        if z.ndim != 2:
            raise ValueError(f"expected (steps, dim) latents, got {z.shape}")
        codebook = self.codebook
        # explicit differences: symmetric candidates give bitwise-equal
        # distances, so the first-minimum tie break is exact
        deltas = z.data[:, None, :] - codebook.data[None, :, :]
        distances = np.einsum("scd,scd->sc", deltas, deltas)
        indices = np.argmin(distances, axis=1)
        out_data = codebook.data[indices]

        def backward_fn(g):
            dcodebook = np.zeros_like(codebook.data)
            np.add.at(dcodebook, indices, g)
            return g, dcodebook

        return _make(out_data, (z, codebook), backward_fn), indices

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.codebook": self.codebook}


def mask_time_steps(
    z: Tensor,
    mask_embedding: Tensor,
    rng: np.random.Generator,
    mask_prob: float = 0.065,
    span: int = 4,
):
    """Replace random contiguous spans of latent steps with the mask embedding.

    Each step starts a span with probability ``mask_prob``; spans of
    ``span`` steps from each start are masked (union, clipped at the end).
    When no start is drawn the draw is retried, and if the probability is
    zero (or retries keep failing) a single uniformly-placed span is
    forced, so at least one step is always masked.

    Returns (masked latents, sorted masked index array).
    """
    steps = z.shape[0]
    if steps < span:
        raise ValueError(f"sequence of {steps} steps shorter than mask span {span}")
    starts = np.flatnonzero(rng.random(steps) < mask_prob)
    retries = 0
    while starts.size == 0 and mask_prob > 0.0 and retries < 100:
        starts = np.flatnonzero(rng.random(steps) < mask_prob)
        retries += 1
    if starts.size == 0:
        starts = np.array([int(rng.integers(0, steps))])
    masked = np.zeros(steps, dtype=bool)
    for s in starts:
        masked[s : s + span] = True
    indices = np.flatnonzero(masked)
    gate = masked.astype(np.float64)[:, None]
    masked_z = z * (1.0 - gate) + mask_embedding.reshape(1, -1) * gate
    return masked_z, indices


class ContrastiveSpeechEncoder:
    """Local encoder, transformer context stack, quantizer, mask embedding."""

    def __init__(
        self,
        dim: int = 32,
        heads: int = 2,
        context_layers: int = 2,
        num_codes: int = 64,
        seed: int = 0,
    ):
        rng = np.random.default_rng(seed)
        self.dim = dim
        self.local = LocalEncoder(dim, rng)
        self.context_layers = [
            TransformerLayer(dim, heads, rng) for _ in range(context_layers)
        ]
        self.quantizer = Quantizer(num_codes, dim, rng)
        self.mask_embedding = Tensor(
            rng.uniform(-1.0, 1.0, size=dim) / np.sqrt(dim), requires_grad=True
        )

    def encode_local(self, wave) -> Tensor:
        """Single waveform (samples,) -> latents (samples // 320, dim)."""
        wave = wave if isinstance(wave, Tensor) else Tensor(np.asarray(wave, dtype=np.float64))
        batched = self.local.forward(wave.reshape(1, -1))
        return batched.reshape(batched.shape[1], batched.shape[2])

    def encode_local_batch(self, waves) -> Tensor:
        waves = waves if isinstance(waves, Tensor) else Tensor(np.asarray(waves, dtype=np.float64))
        return self.local.forward(waves)

    def context(self, latents: Tensor) -> Tensor:
        """latents (batch, steps, dim) or (steps, dim) -> same-shape contexts."""
        single = latents.ndim == 2
        if single:
            latents = latents.reshape((1,) + latents.shape)
        steps = latents.shape[1]
        h = latents + sinusoidal_positions(steps, self.dim)
        for layer in self.context_layers:
            h = layer.forward(h)
        return h.reshape(h.shape[1:]) if single else h

    def forward_features(self, waves) -> Tensor:
        """Supervised path: waveform batch -> context features, no masking."""
        return self.context(self.encode_local_batch(waves))

    def mask(self, z: Tensor, rng: np.random.Generator, mask_prob: float = 0.065, span: int = 4):
        return mask_time_steps(z, self.mask_embedding, rng, mask_prob, span)

    def quantize(self, z: Tensor):
        return self.quantizer.quantize(z)

    def parameters(self) -> dict[str, Tensor]:
        params = self.local.parameters("local")
        for i, layer in enumerate(self.context_layers):
            params.update(layer.parameters(f"context{i}"))
        params.update(self.quantizer.parameters("quantizer"))
        params["mask_embedding"] = self.mask_embedding
        return params
