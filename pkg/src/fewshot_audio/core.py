"""Domain types shared by all modules.

All types validate their invariants at construction time and are immutable
afterwards, so they can be shared freely across threads. Serialisation is
plain-dict based (JSON friendly); ``from_dict(to_dict(x)) == x`` for every
type here.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

# Floor applied to every standard deviation so silent channels never divide
# by zero.
STD_EPSILON = 1e-6

NORMALIZATION_MODES = ("per_sample", "channel_wise", "global")


@dataclass(frozen=True)
class AudioClip:
    """One labelled recording. The class label is clip-level (weak): exactly
    one label for the whole clip, no temporal localisation."""

    clip_id: str
    dataset_id: str
    class_label: str
    duration: float
    sample_rate: int
    source_path: str

    def __post_init__(self):
        if not self.clip_id:
            raise ValueError("clip_id must be a non-empty string")
        if not self.class_label:
            raise ValueError(f"clip {self.clip_id!r}: class_label must be non-empty")
        if not self.duration > 0:
            raise ValueError(f"clip {self.clip_id!r}: duration must be > 0, got {self.duration}")
        if int(self.sample_rate) <= 0:
            raise ValueError(f"clip {self.clip_id!r}: sample_rate must be > 0, got {self.sample_rate}")

    def to_dict(self) -> dict:
        return {
            "clip_id": self.clip_id,
            "dataset_id": self.dataset_id,
            "class_label": self.class_label,
            "duration": self.duration,
            "sample_rate": self.sample_rate,
            "source_path": self.source_path,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AudioClip":
        return cls(**d)


@dataclass(frozen=True)
class SubClip:
    """Fixed-length segment of a parent clip, inheriting its label.

    A parent of duration d cut at length L yields indices 0..ceil(d/L)-1;
    the final segment is zero-padded to exactly L.
    """

    parent_clip_id: str
    index: int
    length: float
    class_label: str
    spectrogram_ref: Optional[str] = None

    def __post_init__(self):
        if self.index < 0:
            raise ValueError(f"subclip of {self.parent_clip_id!r}: index must be >= 0")
        if not self.length > 0:
            raise ValueError(f"subclip of {self.parent_clip_id!r}: length must be > 0")

    @property
    def subclip_id(self) -> str:
        return f"{self.parent_clip_id}::{self.index}"

    def to_dict(self) -> dict:
        return {
            "parent_clip_id": self.parent_clip_id,
            "index": self.index,
            "length": self.length,
            "class_label": self.class_label,
            "spectrogram_ref": self.spectrogram_ref,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SubClip":
        return cls(**d)


@dataclass(frozen=True)
class EpisodeSpec:
    """Shape of one few-shot task: n_way classes, k_shot support and
    q_queries query examples per class."""

    n_way: int
    k_shot: int
    q_queries: int

    def __post_init__(self):
        if self.n_way < 2:
            raise ValueError(f"n_way must be >= 2, got {self.n_way}")
        if self.k_shot < 1:
            raise ValueError(f"k_shot must be >= 1, got {self.k_shot}")
        if self.q_queries < 1:
            raise ValueError(f"q_queries must be >= 1, got {self.q_queries}")

    def to_dict(self) -> dict:
        return {"n_way": self.n_way, "k_shot": self.k_shot, "q_queries": self.q_queries}

    @classmethod
    def from_dict(cls, d: dict) -> "EpisodeSpec":
        return cls(**d)


def _check_item_counts(name: str, items, n_way: int, per_class: int):
    counts = [0] * n_way
    for spec_array, label in items:
        if not isinstance(label, (int, np.integer)) or not (0 <= label < n_way):
            raise ValueError(f"{name} item has class index {label!r} outside 0..{n_way - 1}")
        counts[int(label)] += 1
    for c, got in enumerate(counts):
        if got != per_class:
            raise ValueError(
                f"{name} must contain exactly {per_class} items for class {c}, got {got}"
            )


@dataclass(frozen=True)
class Episode:
    """One N-way k-shot task.

    Class indices are episode-local (0..n_way-1); ``class_map`` records the
    global label behind each local index. Learners never see global labels.
    ``support_parents``/``query_parents`` carry the parent clip ids for the
    leakage audit: no parent may contribute to both sides.
    """

    spec: EpisodeSpec
    support: Tuple[Tuple[np.ndarray, int], ...]
    query: Tuple[Tuple[np.ndarray, int], ...]
    class_map: Tuple[str, ...]
    source_datasets: frozenset
    support_parents: Optional[Tuple[str, ...]] = None
    query_parents: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        spec = self.spec
        if len(self.class_map) != spec.n_way:
            raise ValueError(
                f"class_map has {len(self.class_map)} entries, expected n_way={spec.n_way}"
            )
        if len(self.support) != spec.n_way * spec.k_shot:
            raise ValueError(
                f"support has {len(self.support)} items, expected {spec.n_way * spec.k_shot}"
            )
        if len(self.query) != spec.n_way * spec.q_queries:
            raise ValueError(
                f"query has {len(self.query)} items, expected {spec.n_way * spec.q_queries}"
            )
        _check_item_counts("support", self.support, spec.n_way, spec.k_shot)
        _check_item_counts("query", self.query, spec.n_way, spec.q_queries)
        shapes = {np.asarray(x).shape for x, _ in self.support} | {
            np.asarray(x).shape for x, _ in self.query
        }
        if len(shapes) > 1:
            raise ValueError(f"all spectrograms must share one shape, got {sorted(shapes)}")
        if self.support_parents is not None and self.query_parents is not None:
            overlap = set(self.support_parents) & set(self.query_parents)
            if overlap:
                raise ValueError(
                    f"parent clips appear in both support and query: {sorted(overlap)}"
                )
        if not self.source_datasets:
            raise ValueError("source_datasets must be non-empty")

    # Stacked views used by the learners.
    @property
    def support_x(self) -> np.ndarray:
        return np.stack([np.asarray(x) for x, _ in self.support])

    @property
    def support_y(self) -> np.ndarray:
        return np.array([y for _, y in self.support], dtype=np.int64)

    @property
    def query_x(self) -> np.ndarray:
        return np.stack([np.asarray(x) for x, _ in self.query])

    @property
    def query_y(self) -> np.ndarray:
        return np.array([y for _, y in self.query], dtype=np.int64)

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "support": [[np.asarray(x).tolist(), int(y)] for x, y in self.support],
            "query": [[np.asarray(x).tolist(), int(y)] for x, y in self.query],
            "class_map": list(self.class_map),
            "source_datasets": sorted(self.source_datasets),
            "support_parents": list(self.support_parents) if self.support_parents else None,
            "query_parents": list(self.query_parents) if self.query_parents else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Episode":
        return cls(
            spec=EpisodeSpec.from_dict(d["spec"]),
            support=tuple((np.asarray(x, dtype=np.float32), int(y)) for x, y in d["support"]),
            query=tuple((np.asarray(x, dtype=np.float32), int(y)) for x, y in d["query"]),
            class_map=tuple(d["class_map"]),
            source_datasets=frozenset(d["source_datasets"]),
            support_parents=tuple(d["support_parents"]) if d.get("support_parents") else None,
            query_parents=tuple(d["query_parents"]) if d.get("query_parents") else None,
        )

    def __eq__(self, other):
        if not isinstance(other, Episode):
            return NotImplemented
        def items_equal(a, b):
            return len(a) == len(b) and all(
                np.array_equal(xa, xb) and ya == yb for (xa, ya), (xb, yb) in zip(a, b)
            )
        return (
            self.spec == other.spec
            and items_equal(self.support, other.support)
            and items_equal(self.query, other.query)
            and self.class_map == other.class_map
            and self.source_datasets == other.source_datasets
            and self.support_parents == other.support_parents
            and self.query_parents == other.query_parents
        )


@dataclass(frozen=True)
class ClassSplit:
    """Disjoint train/val/test class partition of one dataset. Partitions are
    stored sorted; membership, not order, is what matters."""

    dataset_id: str
    train: Tuple[str, ...]
    val: Tuple[str, ...]
    test: Tuple[str, ...]
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "train", tuple(sorted(self.train)))
        object.__setattr__(self, "val", tuple(sorted(self.val)))
        object.__setattr__(self, "test", tuple(sorted(self.test)))
        parts = {"train": set(self.train), "val": set(self.val), "test": set(self.test)}
        for name, part in parts.items():
            if not part:
                raise ValueError(f"{name} partition must contain at least one class")
        for a in ("train", "val", "test"):
            for b in ("train", "val", "test"):
                if a < b and parts[a] & parts[b]:
                    raise ValueError(
                        f"classes appear in both {a} and {b}: {sorted(parts[a] & parts[b])}"
                    )

    def partition(self, name: str) -> Tuple[str, ...]:
        if name not in ("train", "val", "test"):
            raise ValueError(f"unknown partition {name!r}")
        return getattr(self, name)

    @property
    def all_classes(self) -> frozenset:
        return frozenset(self.train) | frozenset(self.val) | frozenset(self.test)

    def to_dict(self) -> dict:
        return {
            "dataset_id": self.dataset_id,
            "train": list(self.train),
            "val": list(self.val),
            "test": list(self.test),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClassSplit":
        return cls(
            dataset_id=d["dataset_id"],
            train=tuple(d["train"]),
            val=tuple(d["val"]),
            test=tuple(d["test"]),
            seed=int(d["seed"]),
        )


@dataclass(frozen=True)
class NormalizationStats:
    """Spectrogram normalization statistics.

    global: scalar mean/std over all values of all training examples.
    channel_wise: one mean/std per mel bin.
    per_sample: sentinel (mean/std are None); each example is normalized by
    its own statistics at apply time.

    ``source_ids`` is the provenance log: the subclip ids the statistics were
    computed from (train partition only).
    """

    mode: str
    mean: Optional[np.ndarray] = None
    std: Optional[np.ndarray] = None
    source_ids: Tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.mode not in NORMALIZATION_MODES:
            raise ValueError(f"mode must be one of {NORMALIZATION_MODES}, got {self.mode!r}")
        if self.mode == "per_sample":
            if self.mean is not None or self.std is not None:
                raise ValueError("per_sample stats carry no mean/std")
            return
        if self.mean is None or self.std is None:
            raise ValueError(f"{self.mode} stats require mean and std")
        mean = np.asarray(self.mean, dtype=np.float64)
        std = np.maximum(np.asarray(self.std, dtype=np.float64), STD_EPSILON)
        if self.mode == "global" and mean.ndim != 0:
            raise ValueError("global stats must be scalars")
        if self.mode == "channel_wise" and mean.ndim != 1:
            raise ValueError("channel_wise stats must be one value per mel bin")
        if mean.shape != std.shape:
            raise ValueError("mean and std must have matching shapes")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "mean": None if self.mean is None else np.asarray(self.mean).tolist(),
            "std": None if self.std is None else np.asarray(self.std).tolist(),
            "source_ids": list(self.source_ids),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationStats":
        mean = d.get("mean")
        std = d.get("std")
        return cls(
            mode=d["mode"],
            mean=None if mean is None else np.asarray(mean, dtype=np.float64),
            std=None if std is None else np.asarray(std, dtype=np.float64),
            source_ids=tuple(d.get("source_ids", ())),
        )

    def __eq__(self, other):
        if not isinstance(other, NormalizationStats):
            return NotImplemented
        def arr_eq(a, b):
            if a is None or b is None:
                return a is b
            return np.array_equal(np.asarray(a), np.asarray(b))
        return (
            self.mode == other.mode
            and arr_eq(self.mean, other.mean)
            and arr_eq(self.std, other.std)
            and self.source_ids == other.source_ids
        )
