"""Episodic task sampling.

Draws N-way k-shot episodes from cached datasets in three modes:

* single       — classes from one dataset partition.
* joint_within — pick a dataset uniformly, then N classes inside it.
* joint_free   — pool the classes of all datasets and draw N from the pool,
                 so one episode may mix source datasets.

The sampling unit is the PARENT clip: each selected clip is represented by
one uniformly chosen sub-clip. Sampling clips (not sub-clips) keeps the
support/query parent sets disjoint, so no recording can leak across the
boundary and trivially inflate accuracy. Class sample imbalance is not
corrected: classes are drawn uniformly, clips uniformly within class.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .core import Episode, EpisodeSpec, NormalizationStats
from .pipeline import CacheManifest, normalize

SAMPLER_MODES = ("single", "joint_within", "joint_free")
SUBCLIP_POLICIES = ("random_subclip",)


class SamplingError(RuntimeError):
    """Raised when a partition cannot satisfy an episode request."""


@dataclass(frozen=True)
class ClipRecord:
    """A parent clip and its cached sub-clip spectrograms (arrays, or paths
    resolved lazily at draw time)."""

    clip_id: str
    subclips: tuple

    def __post_init__(self):
        if not self.subclips:
            raise ValueError(f"clip {self.clip_id!r} has no cached sub-clips")


# A partition maps class label -> clip records of that class.
Partition = Mapping[str, Sequence[ClipRecord]]


@dataclass(frozen=True)
class SamplerConfig:
    spec: EpisodeSpec
    mode: str = "single"
    datasets: Tuple[Tuple[str, str], ...] = ()  # (dataset_id, partition name)
    seed: int = 0
    subclip_policy: str = "random_subclip"

    def __post_init__(self):
        if self.mode not in SAMPLER_MODES:
            raise ValueError(f"mode must be one of {SAMPLER_MODES}, got {self.mode!r}")
        if self.subclip_policy not in SUBCLIP_POLICIES:
            raise ValueError(f"unknown subclip_policy {self.subclip_policy!r}")
        if self.mode.startswith("joint") and len(self.datasets) < 2:
            raise ValueError(f"{self.mode} sampling requires at least 2 datasets")

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "mode": self.mode,
            "datasets": [list(pair) for pair in self.datasets],
            "seed": self.seed,
            "subclip_policy": self.subclip_policy,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SamplerConfig":
        return cls(
            spec=EpisodeSpec.from_dict(d["spec"]),
            mode=d.get("mode", "single"),
            datasets=tuple(tuple(pair) for pair in d.get("datasets", ())),
            seed=int(d.get("seed", 0)),
            subclip_policy=d.get("subclip_policy", "random_subclip"),
        )


def resolve_clip(
    record: ClipRecord, rng: np.random.Generator, policy: str = "random_subclip"
) -> np.ndarray:
    """Materialise one sub-clip spectrogram for a selected clip.

    random_subclip picks uniformly among the clip's cached sub-clips;
    deterministic given the rng state.
    """
    if policy not in SUBCLIP_POLICIES:
        raise ValueError(f"unknown subclip_policy {policy!r}")
    idx = int(rng.integers(0, len(record.subclips)))
    ref = record.subclips[idx]
    if isinstance(ref, np.ndarray):
        return ref
    path = Path(ref)
    if not path.exists():
        raise SamplingError(f"missing cache entry for {record.clip_id!r}: {path}")
    return np.load(path)


def _eligible_classes(partition: Partition, k_shot: int) -> List[str]:
    # A class needs >= 2 clips so support and query never share a parent;
    # support takes min(k, n-1) distinct clips and repeats within itself if
    # k exceeds that, mirroring the query-side replacement rule.
    return sorted(label for label, records in partition.items() if len(records) >= 2)


def _sample_class_items(
    records: Sequence[ClipRecord], k_shot: int, q_queries: int, rng: np.random.Generator
) -> Tuple[List[ClipRecord], List[ClipRecord]]:
    """Pick support and query clips for one class.

    Support reserves min(k, n-1) distinct clips (repeating within support
    only if k exceeds that); queries come from the remaining clips, with
    replacement once they run out. Clips never cross the boundary.
    """
    n = len(records)
    order = rng.permutation(n)
    n_support_distinct = min(k_shot, n - 1)
    support_pool = order[:n_support_distinct]
    support_idx = list(support_pool)
    while len(support_idx) < k_shot:
        support_idx.append(int(support_pool[rng.integers(0, len(support_pool))]))
    query_pool = order[n_support_distinct:]
    if len(query_pool) >= q_queries:
        query_idx = list(query_pool[:q_queries])
    else:
        query_idx = [int(query_pool[rng.integers(0, len(query_pool))]) for _ in range(q_queries)]
    return [records[int(i)] for i in support_idx], [records[int(i)] for i in query_idx]


def _build_episode(
    chosen: Sequence[Tuple[str, Sequence[ClipRecord]]],
    spec: EpisodeSpec,
    rng: np.random.Generator,
    source_datasets,
    policy: str,
) -> Episode:
    support, query = [], []
    support_parents, query_parents = [], []
    for local_idx, (label, records) in enumerate(chosen):
        s_records, q_records = _sample_class_items(records, spec.k_shot, spec.q_queries, rng)
        for rec in s_records:
            support.append((resolve_clip(rec, rng, policy), local_idx))
            support_parents.append(rec.clip_id)
        for rec in q_records:
            query.append((resolve_clip(rec, rng, policy), local_idx))
            query_parents.append(rec.clip_id)
    return Episode(
        spec=spec,
        support=tuple(support),
        query=tuple(query),
        class_map=tuple(label for label, _ in chosen),
        source_datasets=frozenset(source_datasets),
        support_parents=tuple(support_parents),
        query_parents=tuple(query_parents),
    )


def sample_episode_single(
    partition: Partition,
    spec: EpisodeSpec,
    rng: np.random.Generator,
    dataset_id: str = "dataset",
    policy: str = "random_subclip",
) -> Episode:
    """Draw one episode from a single dataset partition: N classes uniformly,
    then support and query clips per class."""
    eligible = _eligible_classes(partition, spec.k_shot)
    if len(eligible) < spec.n_way:
        raise SamplingError(
            f"partition has {len(eligible)} usable classes (>= 2 clips each), "
            f"need n_way={spec.n_way}"
        )
    pick = rng.choice(len(eligible), size=spec.n_way, replace=False)
    chosen = [(eligible[int(i)], partition[eligible[int(i)]]) for i in pick]
    return _build_episode(chosen, spec, rng, {dataset_id}, policy)


def sample_episode_joint_within(
    datasets: Mapping[str, Partition],
    spec: EpisodeSpec,
    rng: np.random.Generator,
    policy: str = "random_subclip",
) -> Episode:
    """Pick one dataset uniformly (among those with enough usable classes),
    then draw all N classes inside it."""
    names = sorted(
        name
        for name, part in datasets.items()
        if len(_eligible_classes(part, spec.k_shot)) >= spec.n_way
    )
    if not names:
        raise SamplingError(f"no dataset has {spec.n_way} usable classes")
    dataset_id = names[int(rng.integers(0, len(names)))]
    eligible = _eligible_classes(datasets[dataset_id], spec.k_shot)
    pick = rng.choice(len(eligible), size=spec.n_way, replace=False)
    chosen = [
        (f"{dataset_id}:{eligible[int(i)]}", datasets[dataset_id][eligible[int(i)]]) for i in pick
    ]
    return _build_episode(chosen, spec, rng, {dataset_id}, policy)


def sample_episode_joint_free(
    datasets: Mapping[str, Partition],
    spec: EpisodeSpec,
    rng: np.random.Generator,
    policy: str = "random_subclip",
) -> Episode:
    """Draw N classes uniformly from the pooled class universe of all
    datasets; an episode may mix source datasets."""
    pooled: List[Tuple[str, str]] = []
    for name in sorted(datasets):
        for label in _eligible_classes(datasets[name], spec.k_shot):
            pooled.append((name, label))
    if len(pooled) < spec.n_way:
        raise SamplingError(f"pooled universe has {len(pooled)} classes, need {spec.n_way}")
    pick = rng.choice(len(pooled), size=spec.n_way, replace=False)
    chosen = []
    sources = set()
    for i in pick:
        name, label = pooled[int(i)]
        chosen.append((f"{name}:{label}", datasets[name][label]))
        sources.add(name)
    return _build_episode(chosen, spec, rng, sources, policy)


class EpisodeSampler:
    """Mode dispatch bound to concrete partitions.

    ``datasets`` maps dataset_id -> partition. Single mode uses the lone
    entry (or the one named by the config).
    """

    def __init__(self, config: SamplerConfig, datasets: Mapping[str, Partition]):
        if not datasets:
            raise ValueError("no datasets given")
        self.config = config
        self.datasets = dict(datasets)
        if config.mode == "single" and len(self.datasets) != 1:
            raise ValueError("single mode expects exactly one dataset")

    def sample(self, rng: np.random.Generator, spec: Optional[EpisodeSpec] = None) -> Episode:
        spec = spec or self.config.spec
        policy = self.config.subclip_policy
        if self.config.mode == "single":
            ((dataset_id, partition),) = self.datasets.items()
            return sample_episode_single(partition, spec, rng, dataset_id, policy)
        if self.config.mode == "joint_within":
            return sample_episode_joint_within(self.datasets, spec, rng, policy)
        return sample_episode_joint_free(self.datasets, spec, rng, policy)


def partition_from_cache(
    manifest: CacheManifest,
    cache_dir,
    classes: Sequence[str],
    stats: Optional[NormalizationStats] = None,
    preload: bool = True,
) -> Dict[str, List[ClipRecord]]:
    """Build a sampler partition for the given classes from a spectrogram
    cache, applying normalization at load time.

    With preload=True (default) arrays are loaded into memory once, which is
    what the desk-scale corpora want; preload=False keeps file paths and
    loads at draw time (then ``stats`` must be None, since normalization is
    applied here).
    """
    cache_dir = Path(cache_dir)
    wanted = set(classes)
    if not preload and stats is not None:
        raise ValueError("lazy partitions cannot apply normalization at load time")
    grouped: Dict[str, Dict[str, list]] = {}
    for entry in manifest.entries:
        if entry.class_label not in wanted:
            continue
        path = cache_dir / entry.file
        if preload:
            array = np.load(path)
            if stats is not None:
                array = normalize(array, stats)
            ref = array
        else:
            ref = str(path)
        grouped.setdefault(entry.class_label, {}).setdefault(entry.parent_id, []).append(
            (entry.subclip_id, ref)
        )
    partition: Dict[str, List[ClipRecord]] = {}
    for label in sorted(grouped):
        records = []
        for parent_id in sorted(grouped[label]):
            refs = [ref for _, ref in sorted(grouped[label][parent_id])]
            records.append(ClipRecord(clip_id=parent_id, subclips=tuple(refs)))
        partition[label] = records
    missing = wanted - set(partition)
    if missing:
        raise SamplingError(f"classes absent from cache manifest: {sorted(missing)}")
    return partition
