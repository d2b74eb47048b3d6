"""Classification and self-supervised losses.

The soft-weighted cross-entropy scales each sample's cross-entropy by
``exp(-(sum_{j != m} (p[m] - p[j])) / N)`` where m is the true class and
p the current softmax output.  Because the probabilities sum to one this
equals ``exp(1/N - p[m])``: confidently wrong samples get weights above
one, confidently right samples below one.  The implementation computes
the literal sum of signed differences; the closed form serves as an
independent oracle in the tests.

The contrastive loss scores the true quantized latent against distractor
candidates by temperature-scaled cosine similarity with the context
vector, averaged over all masked steps.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, as_tensor, concat, exp, log_softmax, softmax, sqrt

SIMPLEX_ATOL = 1e-9


def _check_logits_labels(logits: Tensor, labels: np.ndarray):
    if logits.ndim != 2:
        raise ValueError(f"expected logits of shape (batch, classes), got {logits.shape}")
    batch, n_classes = logits.shape
    if batch == 0:
        raise ValueError("empty batch")
    if labels.shape != (batch,):
        raise ValueError(f"labels shape {labels.shape} does not match batch {batch}")
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError(
            f"label out of range: valid classes are 0..{n_classes - 1}, got {labels}"
        )
    if not np.all(np.isfinite(logits.data)):
        raise ValueError("non-finite logits")


def _per_sample_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    # log-space throughout; the explicit softmax is never formed
    log_probs = log_softmax(logits, axis=1)
    return -log_probs[np.arange(labels.size), labels]


def cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-likelihood of the true labels.

    logits: (batch, classes) tensor; labels: (batch,) integer array.
    """
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    _check_logits_labels(logits, labels)
    return _per_sample_cross_entropy(logits, labels).mean()


def _check_simplex(p: np.ndarray, label: int):
    if p.ndim != 1 or p.size < 2:
        raise ValueError(f"expected a probability vector, got shape {p.shape}")
    if np.any(p < -SIMPLEX_ATOL) or abs(p.sum() - 1.0) > SIMPLEX_ATOL:
        raise ValueError(f"not a simplex vector (sum={p.sum()!r}, min={p.min()!r})")
    if not 0 <= label < p.size:
        raise ValueError(f"label {label} out of range for {p.size} classes")


def soft_weight(p, label: int) -> float:
    """Per-sample weight from the signed gaps between the true-class
    probability and every wrong-class probability.

    Detached: the returned float never contributes gradient.
    """
    p = np.asarray(p, dtype=np.float64)
    _check_simplex(p, label)
    n = p.size
    # literal sum over j of (p[m] - p[j]); the j == m term is zero
    gap_sum = (p[label] - p).sum()
    return float(np.exp(-gap_sum / n))


def batch_soft_weights(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Vectorized soft_weight over a (batch, classes) probability matrix."""
    n = probs.shape[1]
    p_true = probs[np.arange(labels.size), labels]
    gap_sums = (p_true[:, None] - probs).sum(axis=1)
    return np.exp(-gap_sums / n)


def swce_loss(logits, labels, weights=None, weight_gradient: bool = False) -> Tensor:
    """Soft-weighted cross-entropy, averaged over the batch.

    Weights are recomputed from the current softmax on every call and
    detached by default, making this a pure reweighting of the
    cross-entropy gradients.  ``weight_gradient=True`` lets gradient flow
    through the weights (ablation).  ``weights`` overrides the computed
    weights entirely; with all-ones it reproduces ``cross_entropy``
    bitwise.
    """
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    _check_logits_labels(logits, labels)
    per_sample = _per_sample_cross_entropy(logits, labels)

    if weights is not None:
        w = Tensor(np.asarray(weights, dtype=np.float64))
        if w.shape != (labels.size,):
            raise ValueError(f"weights shape {w.shape} does not match batch {labels.size}")
    elif weight_gradient:
        probs = softmax(logits, axis=1)
        p_true = probs[np.arange(labels.size), labels]
        gap_sums = (p_true.reshape(labels.size, 1) - probs).sum(axis=1)
        w = exp(-gap_sums / float(logits.shape[1]))
    else:
        probs = softmax(logits, axis=1).data
        w = Tensor(batch_soft_weights(probs, labels))

    return (w * per_sample).mean()


def contrastive_loss(context, positives, distractors, temperature: float = 0.1) -> Tensor:
    """Identify the true quantized latent among distractors.

    context: (M, D) context vectors at masked steps (or a single (D,) vector);
    positives: (M, D) true quantized latents; distractors: (M, K, D).
    Candidates are scored by cosine similarity with the context vector,
    divided by ``temperature``; the loss is the mean over the M masked
    steps of the negative log-probability of the true candidate.
    """
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    context = as_tensor(context)
    positives = as_tensor(positives)
    distractors = as_tensor(distractors)
    if context.ndim == 1:
        context = context.reshape(1, -1)
        positives = positives.reshape(1, -1)
        if distractors.ndim == 2:
            distractors = distractors.reshape((1,) + distractors.shape)
    m, dim = context.shape
    if positives.shape != (m, dim):
        raise ValueError(
            f"positives shape {positives.shape} does not match context {context.shape}"
        )
    if distractors.ndim != 3 or distractors.shape[0] != m or distractors.shape[2] != dim:
        raise ValueError(
            f"distractors shape {distractors.shape}, expected ({m}, K, {dim})"
        )

    candidates = concat([positives.reshape(m, 1, dim), distractors], axis=1)
    if np.any(np.linalg.norm(context.data, axis=1) == 0.0):
        raise ValueError("zero-norm context vector: cosine similarity undefined")
    if np.any(np.linalg.norm(candidates.data, axis=2) == 0.0):
        raise ValueError("zero-norm candidate vector: cosine similarity undefined")

    dots = (context.reshape(m, 1, dim) * candidates).sum(axis=2)  # (M, K+1)
    context_norm = sqrt((context * context).sum(axis=1)).reshape(m, 1)
    candidate_norm = sqrt((candidates * candidates).sum(axis=2))
    sims = dots / (context_norm * candidate_norm)
    scores = sims * (1.0 / temperature)
    return (-log_softmax(scores, axis=1)[:, 0]).mean()
