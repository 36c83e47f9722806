"""Reproducible class-disjoint train/val/test splits.

Splits partition the CLASSES of a dataset, not its samples: all clips of a
class follow the class. Sizes come from largest-remainder apportionment of
the 7/1/2 ratio with ties broken toward train, every partition at least one
class. Assignment is a seeded Fisher-Yates shuffle over lexicographically
sorted labels, so a given (labels, seed) pair yields the same split on any
platform.
"""
from __future__ import annotations

from pathlib import Path
from typing import Iterable, Sequence, Tuple

from . import __version__
from .core import ClassSplit
from .seeding import spawn_rng

DEFAULT_RATIOS = (7, 1, 2)


def apportion(n_classes: int, ratios: Sequence[int] = DEFAULT_RATIOS) -> Tuple[int, int, int]:
    """Split n_classes into (train, val, test) sizes by largest remainder.

    Ties go to the earlier partition (train before val before test). Every
    partition gets at least one class, rebalanced from the largest partition
    when the raw apportionment leaves one empty (only possible for very small
    n_classes).
    """
    if n_classes < 3:
        raise ValueError(f"need at least 3 classes (one per partition), got {n_classes}")
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ValueError(f"ratios must be three positive numbers, got {ratios}")
    total = sum(ratios)
    quotas = [n_classes * r / total for r in ratios]
    sizes = [int(q) for q in quotas]
    remainders = [q - s for q, s in zip(quotas, sizes)]
    leftover = n_classes - sum(sizes)
    # Stable sort keeps index order on ties, i.e. ties break toward train.
    for i in sorted(range(3), key=lambda i: -remainders[i])[:leftover]:
        sizes[i] += 1
    while min(sizes) == 0:
        sizes[sizes.index(max(sizes))] -= 1
        sizes[sizes.index(0)] += 1
    return tuple(sizes)


def generate_split(
    class_labels: Iterable[str],
    ratios: Sequence[int] = DEFAULT_RATIOS,
    seed: int = 0,
    dataset_id: str = "dataset",
) -> ClassSplit:
    """Deterministically assign classes to train/val/test for a given seed."""
    labels = sorted(set(class_labels))
    n_train, n_val, n_test = apportion(len(labels), ratios)
    rng = spawn_rng(seed, "class-split", dataset_id)
    # Explicit Fisher-Yates for platform-independent determinism.
    for i in range(len(labels) - 1, 0, -1):
        j = int(rng.integers(0, i + 1))
        labels[i], labels[j] = labels[j], labels[i]
    return ClassSplit(
        dataset_id=dataset_id,
        train=tuple(labels[:n_train]),
        val=tuple(labels[n_train : n_train + n_val]),
        test=tuple(labels[n_train + n_val :]),
        seed=seed,
    )


def save_split(split: ClassSplit, path) -> None:
    """Write a split file: metadata header plus TRAIN/VAL/TEST sections, one
    class label per line."""
    lines = [
        f"# dataset_id: {split.dataset_id}",
        f"# seed: {split.seed}",
        f"# tool_version: {__version__}",
    ]
    for section in ("train", "val", "test"):
        lines.append(section.upper())
        lines.extend(split.partition(section))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_split(path) -> ClassSplit:
    """Read a split file back; rejects overlapping or missing sections."""
    path = Path(path)
    dataset_id = None
    seed = None
    sections = {"TRAIN": [], "VAL": [], "TEST": []}
    current = None
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line.lstrip("#").strip()
            if body.startswith("dataset_id:"):
                dataset_id = body.split(":", 1)[1].strip()
            elif body.startswith("seed:"):
                seed = int(body.split(":", 1)[1].strip())
            continue
        if line in sections:
            current = line
            continue
        if current is None:
            raise ValueError(f"{path}:{lineno}: class label before any section header")
        sections[current].append(line)
    if dataset_id is None or seed is None:
        raise ValueError(f"{path}: missing dataset_id or seed metadata")
    empty = [name for name, labels in sections.items() if not labels]
    if empty:
        raise ValueError(f"{path}: missing classes in sections {empty}")
    # ClassSplit validates disjointness.
    return ClassSplit(
        dataset_id=dataset_id,
        train=tuple(sections["TRAIN"]),
        val=tuple(sections["VAL"]),
        test=tuple(sections["TEST"]),
        seed=seed,
    )
