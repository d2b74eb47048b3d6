"""Audio ingestion, the synthetic three-class corpus, and split protocol.

The synthetic corpus stands in for a private clinical dataset: each
class profile fixes an F0 range, a pause fraction, formant-band centers
and an amplitude jitter, pairwise distinct enough that the classes are
genuinely separable from acoustics alone.  Clips are harmonic sources
with a random-walk F0, Gaussian formant coloring, interior pauses and a
-20 dB noise floor, fully determined by (profile, seed).
"""

from __future__ import annotations

import csv
import wave
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .features import SAMPLE_RATE, AudioSignal

LABELS = ("AD", "MCI", "HC")
SPLITS = ("train", "dev", "test")

DEFAULT_COUNTS_LARGE = (79, 93, 108)
DEFAULT_COUNTS_SMALL = (35, 39, 45)
DEV_FRACTION = 0.2


class WavFormatError(ValueError):
    """The file is a WAV but violates the required format."""


class CorruptWavError(ValueError):
    """The file is not readable as a RIFF/WAVE stream."""


def load_wav(path) -> AudioSignal:
    """Read a PCM 16-bit mono 16 kHz WAV; samples scaled by 1/32768."""
    try:
        reader = wave.open(str(path), "rb")
    except (wave.Error, EOFError) as exc:
        raise CorruptWavError(f"{path}: {exc}") from exc
    with reader:
        if reader.getcomptype() != "NONE":
            raise WavFormatError(f"{path}: compression: expected PCM, got {reader.getcomptype()!r}")
        if reader.getnchannels() != 1:
            raise WavFormatError(
                f"{path}: channels: expected 1 (mono), got {reader.getnchannels()}"
            )
        if reader.getsampwidth() != 2:
            raise WavFormatError(
                f"{path}: sample_width: expected 2 bytes (16-bit), got {reader.getsampwidth()}"
            )
        if reader.getframerate() != SAMPLE_RATE:
            raise WavFormatError(
                f"{path}: sample_rate: expected {SAMPLE_RATE}, got {reader.getframerate()}"
            )
        frames = reader.getnframes()
        raw = reader.readframes(frames)
    if len(raw) != 2 * frames:
        raise CorruptWavError(f"{path}: truncated data chunk")
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return AudioSignal(samples=samples)


def write_wav(path, samples: np.ndarray) -> None:
    ints = np.clip(np.rint(np.asarray(samples) * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as writer:
        writer.setnchannels(1)
        writer.setsampwidth(2)
        writer.setframerate(SAMPLE_RATE)
        writer.writeframes(ints.tobytes())


# synthetic corpus -----------------------------------------------------


@dataclass(frozen=True)
class SynthClassProfile:
    name: str
    f0_range: tuple[float, float]
    pause_fraction: float
    formant_centers: tuple[float, ...]
    amplitude_jitter: float


DEFAULT_PROFILES = (
    SynthClassProfile("AD", (100.0, 140.0), 0.35, (500.0, 1500.0), 0.30),
    SynthClassProfile("MCI", (160.0, 210.0), 0.20, (700.0, 2200.0), 0.20),
    SynthClassProfile("HC", (240.0, 320.0), 0.05, (900.0, 3000.0), 0.10),
)

_BLOCK = 160  # 10 ms parameter blocks
_FADE = 160  # pause edge fade, 10 ms


def _block_walk(rng, lo, hi, n_blocks, step):
    """Random walk reflected into [lo, hi], one value per block."""
    values = np.empty(n_blocks)
    values[0] = rng.uniform(lo, hi)
    for i in range(1, n_blocks):
        v = values[i - 1] + rng.normal(0.0, step)
        while v < lo or v > hi:
            v = lo + (lo - v) if v < lo else hi - (v - hi)
        values[i] = v
    return values


def _upsample_blocks(values, n):
    grid = np.arange(values.size) * _BLOCK
    return np.interp(np.arange(n), grid, values)


def synthesize_clip(profile: SynthClassProfile, seconds: float, rng) -> np.ndarray:
    """One deterministic clip for the given profile and generator state."""
    n = int(round(seconds * SAMPLE_RATE))
    n_blocks = n // _BLOCK + 2
    lo, hi = profile.f0_range

    f0 = _upsample_blocks(_block_walk(rng, lo, hi, n_blocks, step=2.0), n)
    phase = 2.0 * np.pi * np.cumsum(f0) / SAMPLE_RATE

    centers = np.asarray(profile.formant_centers)
    f0_mid = 0.5 * (lo + hi)
    n_harmonics = max(int(3800.0 / hi), 3)
    voiced = np.zeros(n)
    for h in range(1, n_harmonics + 1):
        freq = h * f0_mid
        envelope = 0.08 + np.exp(-((freq - centers) ** 2) / (2.0 * 250.0**2)).sum()
        voiced += envelope * np.sin(h * phase + rng.uniform(0.0, 2.0 * np.pi))

    jitter = _upsample_blocks(
        np.clip(1.0 + profile.amplitude_jitter * rng.normal(size=n_blocks), 0.3, 2.0), n
    )
    voiced *= jitter

    gate = np.ones(n)
    pause_total = int(profile.pause_fraction * n)
    if pause_total > 0:
        n_pauses = int(rng.integers(1, 4))
        pause_cuts = np.sort(rng.uniform(0.2, 0.8, size=n_pauses - 1)) if n_pauses > 1 else np.array([])
        pause_lengths = np.diff(np.concatenate([[0.0], pause_cuts, [1.0]])) * pause_total
        pause_lengths = np.maximum(pause_lengths.astype(int), 1)
        voiced_total = n - pause_lengths.sum()
        chunk_weights = rng.uniform(0.5, 1.5, size=n_pauses + 1)
        chunk_lengths = (chunk_weights / chunk_weights.sum() * voiced_total).astype(int)
        position = 0
        for i, pause_len in enumerate(pause_lengths):
            position += chunk_lengths[i]
            gate[position : position + pause_len] = 0.0
            # short fades either side to avoid clicks
            fade = np.linspace(1.0, 0.0, _FADE)
            a = max(position - _FADE, 0)
            gate[a:position] = np.minimum(gate[a:position], fade[-(position - a) :])
            b = min(position + pause_len + _FADE, n)
            gate[position + pause_len : b] = np.minimum(
                gate[position + pause_len : b], 1.0 - fade[: b - position - pause_len]
            )
            position += pause_len

    x = voiced * gate
    peak = np.abs(x).max()
    if peak > 0:
        x *= 0.75 / peak
    voiced_rms = float(np.sqrt(np.mean(x[gate > 0.5] ** 2))) if np.any(gate > 0.5) else 0.1
    x = x + rng.normal(0.0, 0.1 * voiced_rms, size=n)  # -20 dB floor
    return np.clip(x, -0.999, 0.999)


# manifest -------------------------------------------------------------


@dataclass(frozen=True)
class ManifestRecord:
    clip_id: str
    path: str  # relative to the manifest location
    label: str
    split: str | None
    duration_s: float


class CorpusManifest:
    """Clip records with unique ids and a complete split assignment."""

    CSV_HEADER = ["id", "path", "label", "split", "duration_s"]

    def __init__(self, records: list[ManifestRecord]):
        ids = [r.clip_id for r in records]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate clip ids in manifest")
        for r in records:
            if r.label not in LABELS:
                raise ValueError(f"{r.clip_id}: unknown label {r.label!r}")
            if r.split is not None and r.split not in SPLITS:
                raise ValueError(f"{r.clip_id}: unknown split {r.split!r}")
        self.records = list(records)

    def for_split(self, split: str) -> list[ManifestRecord]:
        return [r for r in self.records if r.split == split]

    def validate_paths(self, root) -> None:
        for r in self.records:
            if not (Path(root) / r.path).exists():
                raise FileNotFoundError(f"{r.clip_id}: missing file {r.path}")

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.CSV_HEADER)
            for r in self.records:
                writer.writerow(
                    [r.clip_id, r.path, r.label, r.split or "", f"{r.duration_s:.6f}"]
                )

    @classmethod
    def read_csv(cls, path) -> "CorpusManifest":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header != cls.CSV_HEADER:
                raise ValueError(f"{path}: unexpected manifest header {header}")
            records = [
                ManifestRecord(cid, rel, label, split or None, float(dur))
                for cid, rel, label, split, dur in reader
            ]
        return cls(records)


def generate_corpus(
    profiles,
    counts,
    seed: int,
    out_dir,
    clip_seconds: float = 6.0,
    prefix: str = "",
) -> list[ManifestRecord]:
    """Write one WAV per (class, index) and return unsplit records.

    Every clip's generator is seeded by (seed, class index, clip index),
    so identical arguments reproduce identical bytes.
    """
    if len(profiles) != len(counts):
        raise ValueError("profiles and counts must align")
    out_dir = Path(out_dir)
    (out_dir / "wav").mkdir(parents=True, exist_ok=True)
    records = []
    for class_idx, (profile, count) in enumerate(zip(profiles, counts)):
        if count < 1:
            raise ValueError(f"{profile.name}: counts must be >= 1, got {count}")
        for clip_idx in range(count):
            rng = np.random.default_rng([seed, class_idx, clip_idx])
            samples = synthesize_clip(profile, clip_seconds, rng)
            clip_id = f"{prefix}{profile.name}_{clip_idx:04d}"
            rel_path = f"wav/{clip_id}.wav"
            write_wav(out_dir / rel_path, samples)
            records.append(
                ManifestRecord(clip_id, rel_path, profile.name, None, clip_seconds)
            )
    return records


def split_corpus(large_records, small_records, seed: int) -> CorpusManifest:
    """Assign splits: the whole small set is the test split, a seeded
    stratified 20% of the large set is dev, the remainder train."""
    large_ids = {r.clip_id for r in large_records}
    if large_ids & {r.clip_id for r in small_records}:
        raise ValueError("large and small manifests share clip ids")
    for name, records in (("large", large_records), ("small", small_records)):
        present = {r.label for r in records}
        missing = set(LABELS) - present
        if missing:
            raise ValueError(f"{name} manifest missing classes: {sorted(missing)}")

    rng = np.random.default_rng(seed)
    dev_total = int(round(DEV_FRACTION * len(large_records)))
    by_class = {label: [r for r in large_records if r.label == label] for label in LABELS}

    # largest-remainder quotas keep class proportions within one clip
    exact = {label: dev_total * len(by_class[label]) / len(large_records) for label in LABELS}
    quotas = {label: int(np.floor(exact[label])) for label in LABELS}
    leftover = dev_total - sum(quotas.values())
    for label in sorted(LABELS, key=lambda l: (-(exact[l] - quotas[l]), LABELS.index(l))):
        if leftover <= 0:
            break
        quotas[label] += 1
        leftover -= 1

    assigned = []
    for label in LABELS:
        group = by_class[label]
        order = rng.permutation(len(group))
        dev_positions = set(order[: quotas[label]].tolist())
        for i, record in enumerate(group):
            split = "dev" if i in dev_positions else "train"
            assigned.append(replace(record, split=split))
    assigned.extend(replace(r, split="test") for r in small_records)
    return CorpusManifest(assigned)


@dataclass
class Clip:
    clip_id: str
    label_index: int
    samples: np.ndarray


def load_split_clips(manifest: CorpusManifest, root) -> dict[str, list[Clip]]:
    """Read every WAV into memory, grouped by split."""
    out: dict[str, list[Clip]] = {s: [] for s in SPLITS}
    for r in manifest.records:
        if r.split is None:
            raise ValueError(f"{r.clip_id}: unassigned split")
        signal = load_wav(Path(root) / r.path)
        out[r.split].append(Clip(r.clip_id, LABELS.index(r.label), signal.samples))
    return out
