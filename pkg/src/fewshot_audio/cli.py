"""Batch command-line entry point.

Subcommands cover the full experiment flow: synth (built-in corpus),
prepare (ingest + prune + spectrogram cache), split (class-disjoint
partitions), train, evaluate (within- and cross-dataset), sweep (test-time
k/N grids), and report (tables + plot data).

Every run directory receives the fully resolved config snapshot; re-running
from that snapshot reproduces all metrics bit-identically. Commands exit 0
on success and nonzero with a machine-readable JSON error record on stderr
otherwise.
"""
from __future__ import annotations

import argparse
import copy
import json
import os
import sys
from pathlib import Path

import numpy as np
import torch.nn as nn

from . import __version__
from .backbone import CRNNConfig, build_crnn
from .core import EpisodeSpec, NormalizationStats
from .evaluation import (
    EvalReport,
    evaluate,
    load_report,
    render_accuracy_table,
    save_report,
    sweep_shots,
    sweep_ways,
    write_sweep_plot_data,
    write_table_csv,
)
from .learners import (
    GBMLState,
    MetaBaselineState,
    ProtoNetState,
    SimpleShotState,
    conventional_train,
    inverse_frequency_weights,
    load_learner,
    metabaseline_finetune,
    save_learner,
    train_gbml,
    train_protonet,
)
from .pipeline import (
    DataError,
    SpectrogramConfig,
    ingest_dataset,
    load_cache_manifest,
    materialize_cache,
    prune_dataset,
    read_manifest,
)
from .pipeline import compute_normalization_stats as _compute_stats
from .sampler import EpisodeSampler, SamplerConfig, partition_from_cache
from .splits import generate_split, load_split, save_split
from .synthbench import generate_synthetic_dataset, preset

CACHE_ROOT_ENV = "FEWSHOT_AUDIO_CACHE_ROOT"


class ConfigError(ValueError):
    """Configuration problems reported before any compute starts."""


# Desk-scale defaults: small enough to train and evaluate on a laptop CPU.
# The "full" preset restores the benchmark-scale architecture.
DESK_CONFIG = {
    "seed": 0,
    "run_dir": "runs/run0",
    "algorithm": "protonet",
    "normalization": "global",
    "spectrogram": {
        "sample_rate_hz": 8000,
        "n_mels": 32,
        "window_ms": 64.0,
        "hop_ms": 32.0,
        "log_scale": True,
        "clip_length_s": 5.0,
    },
    "backbone": {
        "conv_channels": [8, 8, 8, 8],
        "rnn_hidden": 32,
        "rnn_layers": 1,
        "bidirectional": False,
        "head_dim": 32,
        "in_channels": 1,
        "bn_running_stats": False,
    },
    "sampler": {"mode": "single", "n_way": 5, "k_shot": 1, "q_queries": 5},
    "datasets": [],
    "training": {
        "steps": 300,
        "meta_batch": 2,
        "outer_lr": 1e-3,
        "inner_steps": 5,
        "inner_lr": 0.1,
        "epochs": 30,
        "batch_size": 64,
        "conventional_lr": 1e-3,
        "finetune_steps": 150,
        "scale_init": 10.0,
        "val_every": 100,
        "val_tasks": 50,
        "patience": None,
        "inverse_frequency_weighting": True,
    },
    "eval": {"n_tasks": 10000, "q_queries": 5},
}

FULL_CONFIG_OVERRIDES = {
    "spectrogram": {
        "sample_rate_hz": 16000,
        "n_mels": 64,
        "window_ms": 25.0,
        "hop_ms": 10.0,
        "log_scale": True,
        "clip_length_s": 5.0,
    },
    "backbone": {
        "conv_channels": [64, 64, 64, 64],
        "rnn_hidden": 64,
        "rnn_layers": 1,
        "bidirectional": False,
        "head_dim": 64,
        "in_channels": 1,
        "bn_running_stats": False,
    },
    "training": {
        "steps": 20000,
        "meta_batch": 4,
        "outer_lr": 1e-3,
        "inner_steps": 5,
        "inner_lr": 0.01,
        "epochs": 100,
        "batch_size": 128,
        "conventional_lr": 1e-3,
        "finetune_steps": 2000,
        "scale_init": 10.0,
        "val_every": 500,
        "val_tasks": 200,
        "patience": 10,
        "inverse_frequency_weighting": True,
    },
}

ALGORITHMS = ("protonet", "fo_maml", "fo_meta_curvature", "simpleshot", "meta_baseline")


def default_config(scale: str = "desk") -> dict:
    config = copy.deepcopy(DESK_CONFIG)
    if scale == "full":
        for key, value in FULL_CONFIG_OVERRIDES.items():
            config[key] = copy.deepcopy(value)
    elif scale != "desk":
        raise ConfigError(f"unknown config scale {scale!r}")
    return config


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _apply_set_overrides(config: dict, assignments) -> dict:
    """Apply --set dotted.key=value overrides (values parsed as JSON when
    possible, kept as strings otherwise)."""
    for assignment in assignments or ():
        if "=" not in assignment:
            raise ConfigError(f"--set expects key=value, got {assignment!r}")
        dotted, raw = assignment.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = config
        keys = dotted.split(".")
        for key in keys[:-1]:
            if key not in node or not isinstance(node[key], dict):
                node[key] = {}
            node = node[key]
        node[keys[-1]] = value
    return config


def resolve_cache_dir(path_str: str, workspace: Path) -> Path:
    path = Path(path_str)
    if path.is_absolute():
        return path
    root = os.environ.get(CACHE_ROOT_ENV)
    if root:
        return Path(root) / path
    return workspace / path


def load_experiment_config(args) -> dict:
    config = default_config(getattr(args, "scale", "desk"))
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        config = _deep_merge(config, json.loads(path.read_text(encoding="utf-8")))
    # Dedicated flags override file values; --set overrides both.
    if getattr(args, "algo", None):
        config["algorithm"] = args.algo
    if getattr(args, "seed", None) is not None:
        config["seed"] = args.seed
    if getattr(args, "run_dir", None):
        config["run_dir"] = args.run_dir
    _apply_set_overrides(config, getattr(args, "set", None))
    return config


def validate_experiment_config(config: dict, workspace: Path) -> None:
    problems = []
    if config["algorithm"] not in ALGORITHMS:
        problems.append(f"unknown algorithm {config['algorithm']!r}")
    if not isinstance(config.get("seed"), int) or config["seed"] < 0:
        problems.append("seed must be an explicit non-negative integer")
    if not config.get("datasets"):
        problems.append("at least one dataset entry is required")
    mode = config["sampler"].get("mode", "single")
    if mode not in ("single", "joint_within", "joint_free"):
        problems.append(f"unknown sampler mode {mode!r}")
    if mode != "single" and len(config.get("datasets", ())) < 2:
        problems.append(f"{mode} sampling requires at least 2 datasets")
    if mode == "single" and len(config.get("datasets", ())) > 1:
        problems.append("single mode takes exactly one dataset")
    for i, entry in enumerate(config.get("datasets", ())):
        for key in ("dataset_id", "cache_dir", "split_file"):
            if key not in entry:
                problems.append(f"datasets[{i}] missing {key!r}")
        if "cache_dir" in entry:
            cache_dir = resolve_cache_dir(entry["cache_dir"], workspace)
            if not (cache_dir / "cache_manifest.csv").exists():
                problems.append(f"datasets[{i}]: no cache manifest under {cache_dir}")
        if "split_file" in entry and not (workspace / entry["split_file"]).exists():
            problems.append(f"datasets[{i}]: split file {entry['split_file']!r} not found")
    if config.get("normalization") not in ("per_sample", "channel_wise", "global"):
        problems.append(f"unknown normalization mode {config.get('normalization')!r}")
    try:
        SpectrogramConfig.from_dict(config["spectrogram"])
        CRNNConfig.from_dict(config["backbone"])
    except (ValueError, TypeError, KeyError) as exc:
        problems.append(f"bad spectrogram/backbone config: {exc}")
    if problems:
        raise ConfigError("; ".join(problems))


def _load_dataset_partitions(config: dict, workspace: Path):
    """Load train/val partitions for every dataset, with normalization
    statistics computed from the train partitions only."""
    mode = config["normalization"]
    entries = []
    for entry in config["datasets"]:
        cache_dir = resolve_cache_dir(entry["cache_dir"], workspace)
        manifest = load_cache_manifest(cache_dir / "cache_manifest.csv")
        split = load_split(workspace / entry["split_file"])
        entries.append((entry["dataset_id"], cache_dir, manifest, split))

    def train_stream():
        for _, cache_dir, manifest, split in entries:
            train_classes = set(split.train)
            for cache_entry in manifest.entries:
                if cache_entry.class_label in train_classes:
                    yield cache_entry.subclip_id, np.load(cache_dir / cache_entry.file)

    stats = _compute_stats(train_stream(), mode)
    train_parts, val_parts = {}, {}
    for dataset_id, cache_dir, manifest, split in entries:
        train_parts[dataset_id] = partition_from_cache(manifest, cache_dir, split.train, stats)
        val_parts[dataset_id] = partition_from_cache(manifest, cache_dir, split.val, stats)
    return train_parts, val_parts, stats


def _stack_training_examples(train_parts):
    """Flatten all train sub-clips for conventional training. Class labels
    are dataset-qualified when several datasets are joined."""
    joint = len(train_parts) > 1
    inputs, labels, label_names = [], [], []
    counts = {}
    for dataset_id in sorted(train_parts):
        for class_label in sorted(train_parts[dataset_id]):
            name = f"{dataset_id}:{class_label}" if joint else class_label
            class_idx = len(label_names)
            label_names.append(name)
            n_sub = 0
            for record in train_parts[dataset_id][class_label]:
                for array in record.subclips:
                    inputs.append(array)
                    labels.append(class_idx)
                    n_sub += 1
            counts[name] = n_sub
    return np.stack(inputs), np.asarray(labels, dtype=np.int64), label_names, counts


def _make_val_fn(config, val_parts, spec):
    """Validation hook: mean accuracy over the val partitions that have
    enough usable classes for an n_way episode. None when no partition
    qualifies (tiny corpora), in which case the final parameters are kept."""
    eligible = {}
    for dataset_id, part in val_parts.items():
        usable = sum(1 for records in part.values() if len(records) >= 2)
        if usable >= spec.n_way:
            eligible[dataset_id] = part
    if not eligible:
        return None
    n_tasks = config["training"]["val_tasks"]
    seed = config["seed"]

    def val_fn(state):
        accs = [
            evaluate(state, part, spec, n_tasks=n_tasks, seed=seed, dataset_id=ds).mean_accuracy
            for ds, part in sorted(eligible.items())
        ]
        return float(np.mean(accs))

    return val_fn


def _train_state(config: dict, train_parts, val_parts):
    spec = EpisodeSpec(
        n_way=config["sampler"]["n_way"],
        k_shot=config["sampler"]["k_shot"],
        q_queries=config["sampler"]["q_queries"],
    )
    sampler_config = SamplerConfig(
        spec=spec,
        mode=config["sampler"]["mode"],
        datasets=tuple((ds, "train") for ds in sorted(train_parts)),
        seed=config["seed"],
    )
    sampler = EpisodeSampler(sampler_config, train_parts)
    backbone_cfg = CRNNConfig.from_dict(config["backbone"])
    n_mels = config["spectrogram"]["n_mels"]
    training = config["training"]
    seed = config["seed"]
    algo = config["algorithm"]
    val_fn = _make_val_fn(config, val_parts, spec)
    log: list = []

    if algo == "protonet":
        model = build_crnn(backbone_cfg, n_mels, seed)
        state = train_protonet(
            model, sampler,
            steps=training["steps"], meta_batch=training["meta_batch"],
            lr=training["outer_lr"], seed=seed,
            val_fn=val_fn, val_every=training["val_every"], log=log,
        )
        return state, training["steps"], log

    if algo in ("fo_maml", "fo_meta_curvature"):
        gbml_cfg = backbone_cfg.with_head(spec.n_way)
        model = build_crnn(gbml_cfg, n_mels, seed, zero_head=True)
        state = train_gbml(
            model, sampler, algorithm=algo,
            steps=training["steps"], meta_batch=training["meta_batch"],
            outer_lr=training["outer_lr"],
            inner_steps=training["inner_steps"], inner_lr=training["inner_lr"],
            seed=seed, val_fn=val_fn, val_every=training["val_every"], log=log,
        )
        return state, training["steps"], log

    # Conventional stage shared by SimpleShot and Meta-Baseline.
    inputs, labels, label_names, counts = _stack_training_examples(train_parts)
    conv_cfg = CRNNConfig.from_dict({**backbone_cfg.to_dict(), "bn_running_stats": True})
    encoder = build_crnn(conv_cfg, n_mels, seed)
    head = nn.Linear(conv_cfg.head_dim, len(label_names))
    weights = None
    if training["inverse_frequency_weighting"]:
        by_name = inverse_frequency_weights(counts)
        weights = np.array([by_name[name] for name in label_names])
    train_mean = conventional_train(
        encoder, head, inputs, labels,
        epochs=training["epochs"], batch_size=training["batch_size"],
        lr=training["conventional_lr"], class_weights=weights, seed=seed, log=log,
    )
    if algo == "simpleshot":
        return SimpleShotState(encoder, train_mean), training["epochs"], log

    state = MetaBaselineState(encoder, scale=training["scale_init"])
    state = metabaseline_finetune(
        state, sampler,
        steps=training["finetune_steps"], meta_batch=training["meta_batch"],
        lr=training["outer_lr"], seed=seed,
        val_fn=val_fn, val_every=training["val_every"],
        patience=training["patience"], log=log,
    )
    return state, training["finetune_steps"], log


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    spec = preset(args.preset, seed=args.seed, noise_sigma=args.noise_sigma)
    manifest = generate_synthetic_dataset(spec, args.out, dataset_id=args.dataset_id)
    print(f"wrote corpus under {args.out} (manifest: {manifest})")
    return 0


def cmd_prepare(args) -> int:
    workspace = Path(args.workspace)
    spectrogram = SpectrogramConfig.from_dict(
        default_config(args.scale)["spectrogram"]
        if not args.config
        else _deep_merge(
            default_config(args.scale),
            json.loads(Path(args.config).read_text(encoding="utf-8")),
        )["spectrogram"]
    )
    index = ingest_dataset(read_manifest(args.manifest), args.dataset_id)
    if args.max_duration is not None or args.min_class_count is not None:
        index = prune_dataset(
            index,
            max_duration=args.max_duration if args.max_duration is not None else float("inf"),
            min_class_count=args.min_class_count or 0,
        )
    cache_dir = resolve_cache_dir(args.cache_dir, workspace)
    manifest = materialize_cache(index, spectrogram, cache_dir)
    print(
        f"cached {len(manifest.entries)} sub-clips for {len(index.clips)} clips "
        f"({len(manifest.errors)} unreadable) under {cache_dir}"
    )
    return 0


def cmd_split(args) -> int:
    index = ingest_dataset(read_manifest(args.manifest), args.dataset_id)
    ratios = tuple(int(r) for r in args.ratios.split("/"))
    split = generate_split(index.classes, ratios=ratios, seed=args.seed, dataset_id=args.dataset_id)
    save_split(split, args.out)
    print(
        f"split {args.dataset_id}: {len(split.train)} train / {len(split.val)} val / "
        f"{len(split.test)} test classes -> {args.out}"
    )
    return 0


def cmd_train(args) -> int:
    workspace = Path(args.workspace)
    config = load_experiment_config(args)
    validate_experiment_config(config, workspace)
    run_dir = workspace / config["run_dir"]
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.resolved.json").write_text(
        json.dumps(config, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    train_parts, val_parts, stats = _load_dataset_partitions(config, workspace)
    (run_dir / "stats.json").write_text(
        json.dumps(stats.to_dict(), sort_keys=True) + "\n", encoding="utf-8"
    )
    state, step, log = _train_state(config, train_parts, val_parts)
    with open(run_dir / "train_log.ndjson", "w", encoding="utf-8") as fh:
        for record in log:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    save_learner(run_dir / "checkpoint.pt", state, seed=config["seed"], step=step)
    print(f"trained {config['algorithm']} -> {run_dir / 'checkpoint.pt'}")
    return 0


def _dataset_triples(args, workspace):
    triples = []
    for dataset_id, cache_dir, split_file in args.dataset:
        cache_path = resolve_cache_dir(cache_dir, workspace)
        triples.append((dataset_id, cache_path, workspace / split_file))
    return triples


def _load_eval_partition(cache_dir, split_file, partition_name, stats):
    manifest = load_cache_manifest(Path(cache_dir) / "cache_manifest.csv")
    split = load_split(split_file)
    if partition_name == "all":
        # Smoke-test protocol for corpora too small to give an n_way test
        # partition: episodes draw from the whole class set.
        classes = sorted(split.all_classes)
    else:
        classes = split.partition(partition_name)
    return partition_from_cache(manifest, cache_dir, classes, stats)


def _load_stats(args, checkpoint_path) -> NormalizationStats:
    stats_path = Path(args.stats) if args.stats else Path(checkpoint_path).parent / "stats.json"
    if not stats_path.exists():
        raise ConfigError(f"normalization stats not found: {stats_path}")
    return NormalizationStats.from_dict(json.loads(stats_path.read_text(encoding="utf-8")))


def cmd_evaluate(args) -> int:
    workspace = Path(args.workspace)
    state = load_learner(args.checkpoint)
    stats = _load_stats(args, args.checkpoint)
    spec = EpisodeSpec(n_way=args.n_way, k_shot=args.k_shot, q_queries=args.q_queries)
    out_dir = Path(args.out_dir) if args.out_dir else Path(args.checkpoint).parent
    out_dir.mkdir(parents=True, exist_ok=True)
    for dataset_id, cache_dir, split_file in _dataset_triples(args, workspace):
        partition = _load_eval_partition(cache_dir, split_file, args.partition, stats)
        report = evaluate(
            state, partition, spec,
            n_tasks=args.n_tasks, seed=args.seed, dataset_id=dataset_id,
            store_per_task=args.store_per_task,
        )
        out_path = out_dir / f"eval_{dataset_id}_{args.partition}_{state.algorithm}.json"
        save_report(report, out_path)
        print(
            f"{dataset_id}/{args.partition} {state.algorithm}: "
            f"{100 * report.mean_accuracy:.2f} ± {100 * report.ci95_halfwidth:.2f} "
            f"({report.n_tasks} tasks) -> {out_path}"
        )
    return 0


def _parse_range(text: str):
    if ":" in text:
        lo, hi = text.split(":", 1)
        return tuple(range(int(lo), int(hi) + 1))
    return tuple(int(v) for v in text.split(","))


def cmd_sweep(args) -> int:
    if (args.shots is None) == (args.ways is None):
        raise ConfigError("exactly one of --shots or --ways is required")
    workspace = Path(args.workspace)
    state = load_learner(args.checkpoint)
    stats = _load_stats(args, args.checkpoint)
    (dataset_id, cache_dir, split_file) = _dataset_triples(args, workspace)[0]
    partition = _load_eval_partition(cache_dir, split_file, args.partition, stats)
    out_dir = Path(args.out_dir) if args.out_dir else Path(args.checkpoint).parent
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.shots is not None:
        entries = sweep_shots(
            state, partition, n_way=args.n_way, k_values=_parse_range(args.shots),
            q_queries=args.q_queries, n_tasks=args.n_tasks, seed=args.seed,
            dataset_id=dataset_id,
        )
        label, param = "shots", "k"
    else:
        entries = sweep_ways(
            state, partition, n_values=_parse_range(args.ways), k_shot=args.k_shot,
            q_queries=args.q_queries, n_tasks=args.n_tasks, seed=args.seed,
            dataset_id=dataset_id,
        )
        label, param = "ways", "n"
    grid_path = out_dir / f"sweep_{label}_{dataset_id}_{state.algorithm}.json"
    grid_path.write_text(
        json.dumps([e.to_dict() for e in entries], sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
    )
    write_sweep_plot_data(entries, out_dir / f"sweep_{label}_{dataset_id}_{state.algorithm}.csv", param)
    available = [e for e in entries if e.available]
    print(f"swept {label} over {len(entries)} values ({len(available)} available) -> {grid_path}")
    return 0


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    reports = {}
    for path in sorted(run_dir.glob("**/eval_*.json")):
        report = load_report(path)
        reports.setdefault(report.dataset_id, {})[report.algorithm] = report
    if not reports:
        raise ConfigError(f"no eval_*.json reports under {run_dir}")
    table_text = render_accuracy_table(reports)
    (run_dir / "table.txt").write_text(table_text + "\n", encoding="utf-8")
    write_table_csv(reports, run_dir / "table.csv")
    print(table_text)
    print(f"wrote {run_dir / 'table.txt'} and {run_dir / 'table.csv'}")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fewshot-audio",
        description="Few-shot acoustic classification harness.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--preset", default="synth-fixed", choices=("synth-fixed", "synth-var"))
    p.add_argument("--out", required=True)
    p.add_argument("--dataset-id", default="synth")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise-sigma", type=float, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("prepare", help="ingest, prune, and cache spectrograms")
    p.add_argument("--manifest", required=True)
    p.add_argument("--dataset-id", required=True)
    p.add_argument("--cache-dir", required=True)
    p.add_argument("--config", default=None, help="experiment config supplying the spectrogram section")
    p.add_argument("--scale", default="desk", choices=("desk", "full"))
    p.add_argument("--max-duration", type=float, default=None)
    p.add_argument("--min-class-count", type=int, default=None)
    p.add_argument("--workspace", default=".")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("split", help="generate class-disjoint train/val/test splits")
    p.add_argument("--manifest", required=True)
    p.add_argument("--dataset-id", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--ratios", default="7/1/2")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train one learner")
    p.add_argument("--config", default=None)
    p.add_argument("--scale", default="desk", choices=("desk", "full"))
    p.add_argument("--algo", default=None, choices=ALGORITHMS)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--run-dir", default=None)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--workspace", default=".")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on test splits")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--stats", default=None)
    p.add_argument(
        "--dataset", nargs=3, action="append", required=True,
        metavar=("ID", "CACHE_DIR", "SPLIT_FILE"),
    )
    p.add_argument("--partition", default="test", choices=("train", "val", "test", "all"))
    p.add_argument("--n-way", type=int, default=5)
    p.add_argument("--k-shot", type=int, default=1)
    p.add_argument("--q-queries", type=int, default=5)
    p.add_argument("--n-tasks", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--store-per-task", action="store_true")
    p.add_argument("--out-dir", default=None)
    p.add_argument("--workspace", default=".")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="test-time k-shot or N-way sweep")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--stats", default=None)
    p.add_argument(
        "--dataset", nargs=3, action="append", required=True,
        metavar=("ID", "CACHE_DIR", "SPLIT_FILE"),
    )
    p.add_argument("--partition", default="test", choices=("train", "val", "test", "all"))
    p.add_argument("--shots", default=None, help="e.g. 1:30")
    p.add_argument("--ways", default=None, help="e.g. 5:30")
    p.add_argument("--n-way", type=int, default=5, help="fixed N for --shots sweeps")
    p.add_argument("--k-shot", type=int, default=1, help="fixed k for --ways sweeps")
    p.add_argument("--q-queries", type=int, default=5)
    p.add_argument("--n-tasks", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--workspace", default=".")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="aggregate reports into tables and plot data")
    p.add_argument("--run-dir", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DataError, FileNotFoundError, ValueError, RuntimeError) as exc:
        record = {"error": type(exc).__name__, "detail": str(exc)}
        print(json.dumps(record), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
