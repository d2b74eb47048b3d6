"""Experiment runner.

Subcommands:
    run         execute an experiment config and write report tables
    gen-corpus  generate a synthetic corpus with the standard split
    report      re-aggregate saved run records into report tables

Configs are INI files with [experiment], [corpus], [training] and
optional [pretrain] sections; unknown sections or keys are errors, and
every field is validated before any computation starts.  Corpus and
pretraining artifacts are cached under the output directory keyed by a
content hash of their settings, so presets sharing them never drift.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import (
    DEFAULT_COUNTS_LARGE,
    DEFAULT_COUNTS_SMALL,
    DEFAULT_PROFILES,
    CorpusManifest,
    generate_corpus,
    load_split_clips,
    split_corpus,
)
from .models import (
    ACNNClassifier,
    BiGRUClassifier,
    ContrastiveSpeechEncoder,
    load_checkpoint,
    restore,
    save_checkpoint,
)
from .reporting import ReportRow, emit_loss_comparison, emit_report
from .training import (
    CorpusSplits,
    EncoderPipeline,
    FreezeSchedule,
    HandcraftedPipeline,
    PretrainConfig,
    TrainConfig,
    pretrain_selfsupervised,
    train_supervised,
)

PIPELINES = ("handcrafted", "toy-w2v")
MODEL_NAMES = ("GRU", "ACNN")
LOSS_NAMES = ("CE", "SWCE")


class ConfigError(ValueError):
    """Invalid experiment configuration; message names the field."""


@dataclass
class CorpusSettings:
    seed: int = 7
    clip_seconds: float = 6.0
    counts_large: tuple[int, int, int] = DEFAULT_COUNTS_LARGE
    counts_small: tuple[int, int, int] = DEFAULT_COUNTS_SMALL


@dataclass
class TrainingSettings:
    lr: float = 1e-4
    batch_size: int = 8
    max_epochs: int = 12
    freeze_unit: str = "steps"


@dataclass
class PretrainSettings:
    steps: int = 500
    batch_size: int = 8
    lr: float = 1e-3
    mask_prob: float = 0.065
    mask_span: int = 4
    num_distractors: int = 10
    temperature: float = 0.1
    seed: int = 0


@dataclass
class ExperimentConfig:
    name: str
    pipeline: str
    models: tuple[str, ...] = ("GRU", "ACNN")
    losses: tuple[str, ...] = ("CE",)
    freeze_steps: tuple[int, ...] = (0,)
    seeds: tuple[int, ...] = (1, 2, 3)
    corpus: CorpusSettings = field(default_factory=CorpusSettings)
    training: TrainingSettings = field(default_factory=TrainingSettings)
    pretrain: PretrainSettings = field(default_factory=PretrainSettings)


def _parse_scalar(section, key, raw, kind):
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"{section}.{key}: expected {kind.__name__}, got {raw!r}") from None


def _parse_tuple(section, key, raw, kind):
    items = [item.strip() for item in raw.split(",") if item.strip()]
    if not items:
        raise ConfigError(f"{section}.{key}: empty list")
    return tuple(_parse_scalar(section, key, item, kind) for item in items)


_SCHEMA = {
    "experiment": {
        "name": ("scalar", str),
        "pipeline": ("scalar", str),
        "models": ("tuple", str),
        "losses": ("tuple", str),
        "freeze_steps": ("tuple", int),
        "seeds": ("tuple", int),
    },
    "corpus": {
        "seed": ("scalar", int),
        "clip_seconds": ("scalar", float),
        "counts_large": ("tuple", int),
        "counts_small": ("tuple", int),
    },
    "training": {
        "lr": ("scalar", float),
        "batch_size": ("scalar", int),
        "max_epochs": ("scalar", int),
        "freeze_unit": ("scalar", str),
    },
    "pretrain": {
        "steps": ("scalar", int),
        "batch_size": ("scalar", int),
        "lr": ("scalar", float),
        "mask_prob": ("scalar", float),
        "mask_span": ("scalar", int),
        "num_distractors": ("scalar", int),
        "temperature": ("scalar", float),
        "seed": ("scalar", int),
    },
}


def parse_config(path) -> ExperimentConfig:
    parser = configparser.ConfigParser()
    parser.optionxform = str
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")

    values: dict[str, dict] = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        values[section] = {}
        for key, raw in parser[section].items():
            if key not in _SCHEMA[section]:
                raise ConfigError(f"{section}.{key}: unknown key")
            shape, kind = _SCHEMA[section][key]
            if shape == "tuple":
                values[section][key] = _parse_tuple(section, key, raw, kind)
            else:
                values[section][key] = _parse_scalar(section, key, raw, kind)

    experiment = values.get("experiment", {})
    if "name" not in experiment:
        raise ConfigError("experiment.name: required")
    if "pipeline" not in experiment:
        raise ConfigError("experiment.pipeline: required")

    config = ExperimentConfig(
        name=experiment["name"],
        pipeline=experiment["pipeline"],
        models=experiment.get("models", ("GRU", "ACNN")),
        losses=experiment.get("losses", ("CE",)),
        freeze_steps=experiment.get("freeze_steps", (0,)),
        seeds=experiment.get("seeds", (1, 2, 3)),
        corpus=CorpusSettings(**values.get("corpus", {})),
        training=TrainingSettings(**values.get("training", {})),
        pretrain=PretrainSettings(**values.get("pretrain", {})),
    )
    validate_config(config)
    return config


def validate_config(config: ExperimentConfig) -> None:
    if config.pipeline not in PIPELINES:
        raise ConfigError(
            f"experiment.pipeline: must be one of {PIPELINES}, got {config.pipeline!r}"
        )
    for model in config.models:
        if model not in MODEL_NAMES:
            raise ConfigError(
                f"experiment.models: must be among {MODEL_NAMES}, got {model!r}"
            )
    for loss in config.losses:
        if loss not in LOSS_NAMES:
            raise ConfigError(f"experiment.losses: must be among {LOSS_NAMES}, got {loss!r}")
    for n in config.freeze_steps:
        if n < 0:
            raise ConfigError(f"experiment.freeze_steps: must be >= 0, got {n}")
    if not config.seeds:
        raise ConfigError("experiment.seeds: at least one seed required")
    if config.corpus.clip_seconds <= 0.25:
        raise ConfigError(
            f"corpus.clip_seconds: must exceed one analysis window (0.25 s), "
            f"got {config.corpus.clip_seconds}"
        )
    for key in ("counts_large", "counts_small"):
        counts = getattr(config.corpus, key)
        if len(counts) != 3 or any(c < 1 for c in counts):
            raise ConfigError(f"corpus.{key}: three per-class counts >= 1 required")
    if config.training.lr <= 0:
        raise ConfigError(f"training.lr: must be positive, got {config.training.lr}")
    if config.training.batch_size < 1:
        raise ConfigError(f"training.batch_size: must be >= 1")
    if config.training.max_epochs < 1:
        raise ConfigError(f"training.max_epochs: must be >= 1")
    if config.training.freeze_unit not in ("steps", "epochs"):
        raise ConfigError(
            f"training.freeze_unit: must be 'steps' or 'epochs', got "
            f"{config.training.freeze_unit!r}"
        )
    if config.pretrain.steps < 1:
        raise ConfigError("pretrain.steps: must be >= 1")
    if not (0.0 <= config.pretrain.mask_prob <= 1.0):
        raise ConfigError(f"pretrain.mask_prob: must be in [0, 1]")
    if config.pretrain.temperature <= 0:
        raise ConfigError("pretrain.temperature: must be positive")


def _settings_hash(*sections) -> str:
    payload = json.dumps([asdict(s) for s in sections], sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:12]


def _ensure_corpus(corpus: CorpusSettings, cache_dir: Path) -> Path:
    """Generate (or reuse) the corpus keyed by its settings hash."""
    corpus_dir = cache_dir / f"corpus-{_settings_hash(corpus)}"
    manifest_path = corpus_dir / "manifest.csv"
    if not manifest_path.exists():
        corpus_dir.mkdir(parents=True, exist_ok=True)
        large = generate_corpus(
            DEFAULT_PROFILES,
            corpus.counts_large,
            seed=corpus.seed,
            out_dir=corpus_dir,
            clip_seconds=corpus.clip_seconds,
            prefix="L_",
        )
        small = generate_corpus(
            DEFAULT_PROFILES,
            corpus.counts_small,
            seed=corpus.seed + 1,
            out_dir=corpus_dir,
            clip_seconds=corpus.clip_seconds,
            prefix="S_",
        )
        manifest = split_corpus(large, small, seed=corpus.seed)
        manifest.write_csv(manifest_path)
    return corpus_dir


def _ensure_pretrained_encoder(
    config: ExperimentConfig, corpus_dir: Path, cache_dir: Path, train_clips
) -> dict:
    """Pretrain (or reuse) the encoder; pretraining sees only train audio."""
    key = _settings_hash(config.corpus, config.pretrain)
    ckpt_path = cache_dir / f"pretrain-{key}.ckpt"
    if not ckpt_path.exists():
        encoder = ContrastiveSpeechEncoder(seed=config.pretrain.seed)
        pretrain_config = PretrainConfig(
            steps=config.pretrain.steps,
            batch_size=config.pretrain.batch_size,
            lr=config.pretrain.lr,
            mask_prob=config.pretrain.mask_prob,
            mask_span=config.pretrain.mask_span,
            num_distractors=config.pretrain.num_distractors,
            temperature=config.pretrain.temperature,
            seed=config.pretrain.seed,
        )
        result = pretrain_selfsupervised(encoder, train_clips, pretrain_config)
        save_checkpoint(ckpt_path, encoder.parameters())
        trace_path = cache_dir / f"pretrain-{key}-trace.txt"
        trace_path.write_text(
            "".join(f"{i}\t{v!r}\n" for i, v in enumerate(result.loss_trace))
        )
    return load_checkpoint(ckpt_path)


def _build_model(name: str, input_dim: int, seed: int):
    model_rng = np.random.default_rng([seed, MODEL_NAMES.index(name)])
    if name == "GRU":
        return BiGRUClassifier(input_dim=input_dim, rng=model_rng)
    return ACNNClassifier(input_dim=input_dim, rng=model_rng)


def _single_run(args):
    """One (model, loss, freeze, seed) training run; returns the row cell."""
    (config, splits_dict, pretrained_arrays, model_name, loss, freeze, seed) = args
    splits = CorpusSplits.from_dict(splits_dict)
    if config.pipeline == "toy-w2v":
        encoder = ContrastiveSpeechEncoder(seed=config.pretrain.seed)
        restore(encoder.parameters(), pretrained_arrays)
        pipeline = EncoderPipeline(encoder)
    else:
        pipeline = HandcraftedPipeline()
    model = _build_model(model_name, pipeline.input_dim, seed)
    train_config = TrainConfig(
        lr=config.training.lr,
        batch_size=config.training.batch_size,
        max_epochs=config.training.max_epochs,
        seed=seed,
        loss=loss,
    )
    schedule = FreezeSchedule(freeze, unit=config.training.freeze_unit)
    history = train_supervised(model, pipeline, splits, schedule, train_config)
    return {
        "pipeline": config.pipeline,
        "model": model_name,
        "loss": loss,
        "freeze_steps": freeze,
        "seed": seed,
        "dev_accuracy": history.best_dev_accuracy,
        "test_accuracy": history.final_test_accuracy,
        "test_margin": history.final_test_margin,
        "best_epoch": history.best_epoch,
        "step_losses": history.step_losses,
        "dev_trace": history.dev_accuracy,
    }


def run_experiment(config: ExperimentConfig, out_dir, seeds=None, jobs: int = 1):
    """Execute the full experiment grid; returns (csv_path, md_path)."""
    out_dir = Path(out_dir)
    cache_dir = out_dir / "cache"
    cache_dir.mkdir(parents=True, exist_ok=True)
    seeds = tuple(seeds) if seeds else config.seeds

    corpus_dir = _ensure_corpus(config.corpus, cache_dir)
    manifest = CorpusManifest.read_csv(corpus_dir / "manifest.csv")
    clips = load_split_clips(manifest, corpus_dir)

    pretrained_arrays = None
    if config.pipeline == "toy-w2v":
        pretrained_arrays = _ensure_pretrained_encoder(
            config, corpus_dir, cache_dir, clips["train"]
        )

    grid = [
        (model, loss, freeze)
        for model in config.models
        for loss in config.losses
        for freeze in config.freeze_steps
    ]
    run_specs = [
        (config, clips, pretrained_arrays, model, loss, freeze, seed)
        for (model, loss, freeze) in grid
        for seed in seeds
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_single_run, run_specs))
    else:
        results = [_single_run(spec) for spec in run_specs]

    runs_dir = out_dir / "runs" / config.name
    runs_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for (model, loss, freeze) in grid:
        row = ReportRow(config.pipeline, model, loss, freeze)
        for result in results:
            if (result["model"], result["loss"], result["freeze_steps"]) != (
                model,
                loss,
                freeze,
            ):
                continue
            row.dev_accuracies.append(result["dev_accuracy"])
            row.test_accuracies.append(result["test_accuracy"])
            row.test_margins.append(result["test_margin"])
            run_name = f"{model}-{loss}-N{freeze}-seed{result['seed']}"
            with open(runs_dir / f"{run_name}.json", "w") as fh:
                json.dump(result, fh, sort_keys=True, indent=1)
        rows.append(row)

    csv_path, md_path = emit_report(rows, out_dir, basename=f"{config.name}_report")
    if len(config.losses) >= 2:
        emit_loss_comparison(rows, out_dir, basename=f"{config.name}_loss_comparison")
    return csv_path, md_path


# command-line entry points --------------------------------------------


def _cmd_run(args) -> int:
    try:
        config = parse_config(args.config)
    except ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return 2
    seeds = tuple(int(s) for s in args.seeds.split(",")) if args.seeds else None
    try:
        csv_path, md_path = run_experiment(config, args.out, seeds=seeds, jobs=args.jobs)
    except Exception as exc:  # runtime failure, not a config problem
        print(f"run failed: {exc}", file=sys.stderr)
        return 1
    print(csv_path)
    print(md_path)
    return 0


def _cmd_gen_corpus(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    counts_large = tuple(int(c) for c in args.counts_large.split(","))
    counts_small = tuple(int(c) for c in args.counts_small.split(","))
    large = generate_corpus(
        DEFAULT_PROFILES, counts_large, seed=args.seed, out_dir=out_dir,
        clip_seconds=args.clip_seconds, prefix="L_",
    )
    small = generate_corpus(
        DEFAULT_PROFILES, counts_small, seed=args.seed + 1, out_dir=out_dir,
        clip_seconds=args.clip_seconds, prefix="S_",
    )
    manifest = split_corpus(large, small, seed=args.seed)
    manifest.write_csv(out_dir / "manifest.csv")
    sizes = {s: len(manifest.for_split(s)) for s in ("train", "dev", "test")}
    print(f"wrote {len(manifest.records)} clips to {out_dir} (splits: {sizes})")
    return 0


def _cmd_report(args) -> int:
    runs_root = Path(args.input)
    records = []
    for path in sorted(runs_root.rglob("*.json")):
        with open(path) as fh:
            records.append(json.load(fh))
    if not records:
        print(f"no run records under {runs_root}", file=sys.stderr)
        return 1
    keys = sorted(
        {(r["pipeline"], r["model"], r["loss"], r["freeze_steps"]) for r in records}
    )
    rows = []
    for pipeline, model, loss, freeze in keys:
        row = ReportRow(pipeline, model, loss, freeze)
        for r in sorted(records, key=lambda r: r["seed"]):
            if (r["pipeline"], r["model"], r["loss"], r["freeze_steps"]) != (
                pipeline, model, loss, freeze,
            ):
                continue
            row.dev_accuracies.append(r["dev_accuracy"])
            row.test_accuracies.append(r["test_accuracy"])
            row.test_margins.append(r["test_margin"])
        rows.append(row)
    csv_path, md_path = emit_report(rows, runs_root, basename="report")
    print(csv_path)
    print(md_path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cogspeech", description="Speech classification experiment runner"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run an experiment config")
    run_p.add_argument("--config", required=True, help="path to an INI experiment config")
    run_p.add_argument("--out", default="out", help="output directory (default: out)")
    run_p.add_argument("--seeds", default=None, help="comma-separated seed override")
    run_p.add_argument("--jobs", type=int, default=1, help="parallel seed workers")
    run_p.set_defaults(func=_cmd_run)

    gen_p = sub.add_parser("gen-corpus", help="generate a synthetic corpus")
    gen_p.add_argument("--seed", type=int, required=True)
    gen_p.add_argument("--out", required=True)
    gen_p.add_argument("--clip-seconds", type=float, default=6.0, dest="clip_seconds")
    gen_p.add_argument(
        "--counts-large", default=",".join(map(str, DEFAULT_COUNTS_LARGE)),
        dest="counts_large",
    )
    gen_p.add_argument(
        "--counts-small", default=",".join(map(str, DEFAULT_COUNTS_SMALL)),
        dest="counts_small",
    )
    gen_p.set_defaults(func=_cmd_gen_corpus)

    rep_p = sub.add_parser("report", help="re-aggregate saved run records")
    rep_p.add_argument("--in", required=True, dest="input", help="runs directory")
    rep_p.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
