"""Supervised training with a freeze-then-joint schedule, contrastive
self-supervised pretraining, and evaluation.

During the first N optimizer steps only downstream parameters update;
from step N on the pretrained and downstream sets update jointly.
Gradients are still computed for frozen parameters and discarded by the
selector, which keeps the graph uniform at a small compute cost.  All
loops are seed-reproducible bitwise.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Adam, Tensor, backward, zero_grads
from .data import Clip
from .features import FEATURE_DIM, FeatureNormalizer, composite_features
from .losses import cross_entropy, swce_loss
from .models import ContrastiveSpeechEncoder, ParameterPartition, snapshot
from .models.checkpoint import restore

logger = logging.getLogger(__name__)

LOSS_CHOICES = ("CE", "SWCE")
FREEZE_UNITS = ("steps", "epochs")


@dataclass(frozen=True)
class FreezeSchedule:
    """Downstream-only updates while the counter is below ``freeze_steps``."""

    freeze_steps: int = 0
    unit: str = "steps"

    def __post_init__(self):
        if self.freeze_steps < 0:
            raise ValueError(f"freeze_steps must be >= 0, got {self.freeze_steps}")
        if self.unit not in FREEZE_UNITS:
            raise ValueError(f"unit must be one of {FREEZE_UNITS}, got {self.unit!r}")


def active_params(
    counter: int, schedule: FreezeSchedule, partition: ParameterPartition
) -> dict[str, Tensor]:
    """Parameter selector for one optimizer step.

    ``counter`` is the optimizer step index (or epoch index when the
    schedule's unit is epochs).  Strictly before ``freeze_steps`` only
    the downstream set is returned; at and after it, the union.
    """
    if counter < 0:
        raise ValueError(f"counter must be >= 0, got {counter}")
    if counter < schedule.freeze_steps:
        return dict(partition.downstream)
    return partition.all_parameters()


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 8
    max_epochs: int = 30
    patience: int | None = None  # early stop on dev accuracy; off by default
    seed: int = 0
    loss: str = "CE"
    stop_at_train_accuracy: float | None = None
    track_pretrained_hash: bool = False

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.loss not in LOSS_CHOICES:
            raise ValueError(f"loss must be one of {LOSS_CHOICES}, got {self.loss!r}")


@dataclass
class EvalResult:
    accuracy: float
    confusion: np.ndarray  # (classes, classes), rows = true
    mean_margin: float  # mean of p[y] - max_{j != y} p[j]


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    train_accuracy: list[float] = field(default_factory=list)
    dev_accuracy: list[float] = field(default_factory=list)
    step_losses: list[float] = field(default_factory=list)
    pretrained_hashes: list[str] = field(default_factory=list)
    best_epoch: int = -1
    best_dev_accuracy: float = -1.0
    final_test_accuracy: float = float("nan")
    final_confusion: np.ndarray | None = None
    final_test_margin: float = float("nan")

    @property
    def epochs_completed(self) -> int:
        return len(self.dev_accuracy)

    def save(self, out_dir) -> None:
        """Line-delimited (step, loss) and (epoch, dev_acc) records."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "steps.txt", "w") as fh:
            for i, loss in enumerate(self.step_losses):
                fh.write(f"{i}\t{loss!r}\n")
        with open(out_dir / "epochs.txt", "w") as fh:
            for i, acc in enumerate(self.dev_accuracy):
                fh.write(f"{i}\t{acc!r}\n")


class CorpusSplits:
    """Split access with counters, so tests can assert that the test
    split is touched exactly once per run (by the final evaluation)."""

    def __init__(self, train: list[Clip], dev: list[Clip], test: list[Clip]):
        self._splits = {"train": list(train), "dev": list(dev), "test": list(test)}
        self.access_counts = {"train": 0, "dev": 0, "test": 0}

    @classmethod
    def from_dict(cls, splits: dict[str, list[Clip]]) -> "CorpusSplits":
        return cls(splits.get("train", []), splits.get("dev", []), splits.get("test", []))

    def get(self, name: str) -> list[Clip]:
        self.access_counts[name] += 1
        return self._splits[name]

    def sizes(self) -> dict[str, int]:
        return {k: len(v) for k, v in self._splits.items()}


# feature pipelines ----------------------------------------------------


class HandcraftedPipeline:
    """Composite acoustic features, z-normalized with train-split statistics.

    Stateless apart from the fitted normalizer and a per-clip feature
    cache; contributes no trainable parameters.
    """

    def __init__(self):
        self.normalizer: FeatureNormalizer | None = None
        self._raw: dict[str, np.ndarray] = {}

    def fit(self, train_clips: list[Clip]) -> None:
        raw = [self._raw_features(c) for c in train_clips]
        self.normalizer = FeatureNormalizer.fit(raw)

    def feature_length(self, clip: Clip) -> int:
        return self._raw_features(clip).shape[0]

    def _raw_features(self, clip: Clip) -> np.ndarray:
        if clip.clip_id not in self._raw:
            self._raw[clip.clip_id] = composite_features(clip.samples)
        return self._raw[clip.clip_id]

    def batch_features(self, clips: list[Clip]) -> Tensor:
        if self.normalizer is None:
            raise RuntimeError("pipeline not fitted; call fit(train_clips) first")
        return Tensor(
            np.stack([self.normalizer.transform(self._raw_features(c)) for c in clips])
        )

    def trainable_parameters(self) -> dict[str, Tensor]:
        return {}

    @property
    def input_dim(self) -> int:
        return FEATURE_DIM


class EncoderPipeline:
    """Context features from the speech encoder; the encoder's parameters
    are the pretrained set of the partition and train when unfrozen."""

    def __init__(self, encoder: ContrastiveSpeechEncoder):
        self.encoder = encoder

    def fit(self, train_clips: list[Clip]) -> None:
        pass

    def feature_length(self, clip: Clip) -> int:
        from .models import LATENT_STRIDE

        return clip.samples.size // LATENT_STRIDE

    def batch_features(self, clips: list[Clip]) -> Tensor:
        waves = np.stack([c.samples for c in clips])
        return self.encoder.forward_features(waves)

    def trainable_parameters(self) -> dict[str, Tensor]:
        return {f"encoder.{k}": v for k, v in self.encoder.parameters().items()}

    @property
    def input_dim(self) -> int:
        return self.encoder.dim


def _batches(clips: list[Clip], order: np.ndarray, batch_size: int, pipeline):
    """Deterministic batching in shuffled order, grouped by feature length
    so each batch stacks into one array."""
    buckets: dict[int, list[Clip]] = {}
    for i in order:
        clip = clips[int(i)]
        length = pipeline.feature_length(clip)
        buckets.setdefault(length, []).append(clip)
        if len(buckets[length]) == batch_size:
            yield buckets.pop(length)
    for length in sorted(buckets):
        yield buckets[length]


def partition_hash(params: dict[str, Tensor]) -> str:
    """SHA-256 over the named parameter block, order-independent."""
    digest = hashlib.sha256()
    for name in sorted(params):
        digest.update(name.encode())
        digest.update(params[name].data.tobytes())
    return digest.hexdigest()


def _forward_eval(model, pipeline, clips: list[Clip], batch_size: int = 32):
    """Logits and labels for a whole split, batched by feature length."""
    order = np.arange(len(clips))
    all_logits = []
    all_labels = []
    for batch in _batches(clips, order, batch_size, pipeline):
        logits = model.forward(pipeline.batch_features(batch))
        all_logits.append(logits.data)
        all_labels.extend(c.label_index for c in batch)
    return np.concatenate(all_logits, axis=0), np.array(all_labels)


def evaluate(model, pipeline, clips: list[Clip], num_classes: int = 3) -> EvalResult:
    """Clip-level accuracy, per-class confusion, and the mean probability
    margin p[y] - max_{j != y} p[j], all from a single pass."""
    if not clips:
        raise ValueError("empty split")
    logits, labels = _forward_eval(model, pipeline, clips)
    shifted = logits - logits.max(axis=1, keepdims=True)
    probs = np.exp(shifted)
    probs /= probs.sum(axis=1, keepdims=True)
    predictions = probs.argmax(axis=1)
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    for true, pred in zip(labels, predictions):
        confusion[true, pred] += 1
    true_p = probs[np.arange(labels.size), labels]
    others = probs.copy()
    others[np.arange(labels.size), labels] = -np.inf
    margins = true_p - others.max(axis=1)
    return EvalResult(
        accuracy=float(np.trace(confusion)) / labels.size,
        confusion=confusion,
        mean_margin=float(margins.mean()),
    )


def train_supervised(
    model,
    pipeline,
    splits: CorpusSplits,
    schedule: FreezeSchedule,
    config: TrainConfig,
) -> TrainHistory:
    """Freeze-then-joint supervised training with best-dev selection.

    Dev accuracy is computed every epoch; the best-dev parameter snapshot
    is restored before the single final pass over the test split.
    """
    rng = np.random.default_rng(config.seed)
    train = splits.get("train")
    dev = splits.get("dev")
    if not train or not dev:
        raise ValueError("empty train or dev split")

    pipeline.fit(train)
    partition = ParameterPartition(
        pipeline.trainable_parameters(),
        {f"classifier.{k}": v for k, v in model.parameters().items()},
    )
    all_params = partition.all_parameters()
    optimizer = Adam(all_params, lr=config.lr)
    loss_fn = cross_entropy if config.loss == "CE" else swce_loss

    history = TrainHistory()
    if config.track_pretrained_hash and partition.pretrained:
        history.pretrained_hashes.append(partition_hash(partition.pretrained))

    best = snapshot(all_params)
    step = 0
    epochs_without_improvement = 0
    for epoch in range(config.max_epochs):
        order = rng.permutation(len(train))
        epoch_losses = []
        correct = 0
        for batch in _batches(train, order, config.batch_size, pipeline):
            features = pipeline.batch_features(batch)
            labels = np.array([c.label_index for c in batch])
            logits = model.forward(features)
            loss = loss_fn(logits, labels)
            zero_grads(all_params)
            backward(loss)
            counter = step if schedule.unit == "steps" else epoch
            active = active_params(counter, schedule, partition)
            optimizer.step(active.keys())
            step += 1
            epoch_losses.append(loss.item())
            history.step_losses.append(loss.item())
            correct += int((logits.data.argmax(axis=1) == labels).sum())
            if config.track_pretrained_hash and partition.pretrained:
                history.pretrained_hashes.append(partition_hash(partition.pretrained))

        history.train_loss.append(float(np.mean(epoch_losses)))
        train_acc = correct / len(train)
        history.train_accuracy.append(train_acc)
        dev_acc = evaluate(model, pipeline, dev).accuracy
        history.dev_accuracy.append(dev_acc)
        if dev_acc > history.best_dev_accuracy:
            history.best_dev_accuracy = dev_acc
            history.best_epoch = epoch
            best = snapshot(all_params)
            epochs_without_improvement = 0
        else:
            epochs_without_improvement += 1
        if (
            config.stop_at_train_accuracy is not None
            and train_acc >= config.stop_at_train_accuracy
        ):
            break
        if config.patience is not None and epochs_without_improvement > config.patience:
            break

    restore(all_params, best)
    test = splits.get("test")
    result = evaluate(model, pipeline, test)
    if splits.access_counts["test"] != 1:
        raise RuntimeError(
            f"test split accessed {splits.access_counts['test']} times; must be exactly once"
        )
    history.final_test_accuracy = result.accuracy
    history.final_confusion = result.confusion
    history.final_test_margin = result.mean_margin
    return history


# self-supervised pretraining ------------------------------------------


@dataclass
class PretrainConfig:
    steps: int = 500
    batch_size: int = 8
    lr: float = 1e-3
    mask_prob: float = 0.065
    mask_span: int = 4
    num_distractors: int = 10
    temperature: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.num_distractors < 1:
            raise ValueError("num_distractors must be >= 1")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")


@dataclass
class PretrainResult:
    loss_trace: list[float]
    skipped_clips: int


def _contrastive_batch(encoder, clips, rng, config):
    """Masked-step contexts, positive targets, and distractor stacks for
    one batch of equal-length utterances, pooled over masked steps."""
    from .losses import contrastive_loss

    waves = np.stack([c.samples for c in clips])
    latents = encoder.encode_local_batch(waves)  # (B, T, D)
    steps = latents.shape[1]

    masked_rows = []
    index_sets = []
    for b in range(len(clips)):
        masked, indices = encoder.mask(
            latents[b], rng, mask_prob=config.mask_prob, span=config.mask_span
        )
        masked_rows.append(masked)
        index_sets.append(indices)
    from .autodiff import stack as stack_op

    contexts = encoder.context(stack_op(masked_rows, axis=0))  # (B, T, D)

    context_parts = []
    positive_parts = []
    distractor_parts = []
    for b, indices in enumerate(index_sets):
        if indices.size < 2:
            continue  # no donor steps for distractors
        quantized, _ = encoder.quantize(latents[b])
        k = config.num_distractors
        donors = np.empty((indices.size, k), dtype=np.int64)
        for row, t in enumerate(indices):
            others = indices[indices != t]
            if others.size >= k:
                donors[row] = rng.choice(others, size=k, replace=False)
            else:
                donors[row] = rng.choice(others, size=k, replace=True)
        context_parts.append(contexts[b][indices])
        positive_parts.append(quantized[indices])
        distractor_parts.append(quantized[donors])

    if not context_parts:
        return None
    from .autodiff import concat as concat_op

    return contrastive_loss(
        concat_op(context_parts, axis=0),
        concat_op(positive_parts, axis=0),
        concat_op(distractor_parts, axis=0),
        temperature=config.temperature,
    )


def pretrain_selfsupervised(
    encoder: ContrastiveSpeechEncoder,
    clips: list[Clip],
    config: PretrainConfig,
) -> PretrainResult:
    """Masked contrastive pretraining of the encoder.

    Per step: encode, mask contiguous spans, contextualize the masked
    latents, quantize the unmasked latents, score the true quantized
    step against distractors drawn from the same utterance's other
    masked steps, and take one Adam step on the full encoder.
    """
    from .models import LATENT_STRIDE

    if not clips:
        raise ValueError("empty pretraining corpus")
    min_samples = config.mask_span * LATENT_STRIDE
    usable = [c for c in clips if c.samples.size >= min_samples]
    skipped = len(clips) - len(usable)
    if skipped:
        logger.warning("skipped %d clips shorter than the mask span", skipped)
    if not usable:
        raise ValueError("no clip long enough for the mask span")

    rng = np.random.default_rng(config.seed)
    # data-dependent codebook init: sample rows from first-batch latents
    seed_clips = [usable[i] for i in rng.permutation(len(usable))[: config.batch_size]]
    seed_latents = [encoder.encode_local(c.samples).data for c in seed_clips]
    encoder.quantizer.initialize_from_data(np.concatenate(seed_latents, axis=0), rng)

    params = encoder.parameters()
    optimizer = Adam(params, lr=config.lr)
    trace: list[float] = []

    order: list[int] = []
    while len(trace) < config.steps:
        if len(order) < config.batch_size:
            order.extend(rng.permutation(len(usable)).tolist())
        chosen = [usable[i] for i in order[: config.batch_size]]
        del order[: config.batch_size]
        # group by length; variable-length corpora fall back to sub-batches
        by_length: dict[int, list[Clip]] = {}
        for c in chosen:
            by_length.setdefault(c.samples.size, []).append(c)
        losses = []
        zero_grads(params)
        # equal-length corpora form a single group; with mixed lengths the
        # gradient is the sum of per-group means
        for group in by_length.values():
            loss = _contrastive_batch(encoder, group, rng, config)
            if loss is None:
                continue
            backward(loss)
            losses.append(loss.item())
        if not losses:
            continue
        optimizer.step()
        value = float(np.mean(losses))
        if not np.isfinite(value):
            raise FloatingPointError(f"non-finite pretraining loss at step {len(trace)}")
        trace.append(value)
    return PretrainResult(loss_trace=trace, skipped_clips=skipped)


def masked_retrieval_accuracy(
    encoder: ContrastiveSpeechEncoder,
    clips: list[Clip],
    config: PretrainConfig,
    seed: int = 1234,
) -> float:
    """Fraction of masked steps whose true quantized latent outranks all
    sampled distractors under cosine scoring."""
    rng = np.random.default_rng(seed)
    correct = 0
    total = 0
    for clip in clips:
        z = encoder.encode_local(clip.samples)
        masked, indices = encoder.mask(
            z, rng, mask_prob=config.mask_prob, span=config.mask_span
        )
        if indices.size < 2:
            continue
        contexts = encoder.context(masked).data
        quantized, _ = encoder.quantize(z)
        q = quantized.data
        for t in indices:
            others = indices[indices != t]
            if others.size >= config.num_distractors:
                donors = rng.choice(others, size=config.num_distractors, replace=False)
            else:
                donors = rng.choice(others, size=config.num_distractors, replace=True)
            candidates = np.concatenate([q[t : t + 1], q[donors]], axis=0)
            c = contexts[t]
            sims = candidates @ c / (
                np.linalg.norm(candidates, axis=1) * np.linalg.norm(c) + 1e-12
            )
            correct += int(np.argmax(sims) == 0)
            total += 1
    return correct / max(total, 1)
