"""Evaluation protocol.

Accuracy over a stream of freshly sampled test tasks, reported as a mean
with a 95% confidence interval (normal approximation, 1.96 * sample std /
sqrt(n_tasks)). Task t is drawn with a generator derived from (seed, t), so
reports are bit-identical regardless of execution order or worker count.
Also: test-time k-shot and N-way sweeps, average-rank tables, and fixed-
feature baselines (nearest centroid and linear max-margin readout) for
features exported by external pretrained models.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import rankdata

from .core import Episode, EpisodeSpec
from .learners import cl2n_transform, nearest_centroid_predict
from .sampler import ClipRecord, Partition, SamplingError, sample_episode_single
from .seeding import spawn_rng

CI_Z = 1.96  # two-sided 95% normal quantile


@dataclass(frozen=True)
class EvalReport:
    dataset_id: str
    algorithm: str
    n_way: int
    k_shot: int
    q_queries: int
    n_tasks: int
    mean_accuracy: float
    ci95_halfwidth: float
    seed: int
    per_task_accuracies: Optional[Tuple[float, ...]] = None
    metadata: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not (0.0 <= self.mean_accuracy <= 1.0):
            raise ValueError(f"mean_accuracy out of range: {self.mean_accuracy}")
        if self.ci95_halfwidth < 0:
            raise ValueError("ci95_halfwidth must be >= 0")
        if self.per_task_accuracies is not None and len(self.per_task_accuracies) != self.n_tasks:
            raise ValueError("per_task_accuracies length must equal n_tasks")

    def to_dict(self) -> dict:
        return {
            "dataset_id": self.dataset_id,
            "algorithm": self.algorithm,
            "n_way": self.n_way,
            "k_shot": self.k_shot,
            "q_queries": self.q_queries,
            "n_tasks": self.n_tasks,
            "mean_accuracy": self.mean_accuracy,
            "ci95_halfwidth": self.ci95_halfwidth,
            "seed": self.seed,
            "per_task_accuracies": (
                list(self.per_task_accuracies) if self.per_task_accuracies is not None else None
            ),
            "metadata": dict(self.metadata),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        d = dict(d)
        per_task = d.get("per_task_accuracies")
        d["per_task_accuracies"] = tuple(per_task) if per_task is not None else None
        d["metadata"] = dict(d.get("metadata", {}))
        return cls(**d)


def save_report(report: EvalReport, path) -> None:
    Path(path).write_text(
        json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def load_report(path) -> EvalReport:
    return EvalReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def mean_ci95(values: Sequence[float]) -> Tuple[float, float]:
    """Mean and 95% CI half-width (1.96 * sample std / sqrt(n))."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("no values")
    if arr.size == 1:
        return float(arr[0]), 0.0
    return float(arr.mean()), float(CI_Z * arr.std(ddof=1) / math.sqrt(arr.size))


class RandomPredictor:
    """Chance-floor reference: predicts a uniformly random class for every
    query, ignoring the inputs."""

    algorithm = "random"
    fixed_n_way = None

    def episode_accuracy(self, episode: Episode, rng=None) -> float:
        if rng is None:
            raise ValueError("RandomPredictor needs the per-task rng")
        preds = rng.integers(0, episode.spec.n_way, size=len(episode.query))
        return float((preds == episode.query_y).mean())


def task_rng(seed: int, task_index: int) -> np.random.Generator:
    """Per-task generator derived from (seed, task_index): order- and
    parallelism-independent."""
    return spawn_rng(seed, "task", task_index)


def evaluate(
    state,
    partition: Partition,
    spec: EpisodeSpec,
    n_tasks: int = 10000,
    seed: int = 0,
    dataset_id: str = "dataset",
    store_per_task: bool = False,
    metadata: Optional[Mapping[str, str]] = None,
) -> EvalReport:
    """Accuracy of a learner over n_tasks freshly sampled episodes."""
    if getattr(state, "fixed_n_way", None) not in (None, spec.n_way):
        raise ValueError(
            f"{state.algorithm} was trained with a fixed {state.fixed_n_way}-way head; "
            f"cannot evaluate at {spec.n_way}-way"
        )
    accuracies = np.empty(n_tasks, dtype=np.float64)
    for t in range(n_tasks):
        rng = task_rng(seed, t)
        episode = sample_episode_single(partition, spec, rng, dataset_id)
        accuracies[t] = state.episode_accuracy(episode, rng)
    mean, ci = mean_ci95(accuracies)
    meta = {"ci_method": "normal_approximation_1.96_sample_std"}
    meta.update(getattr(state, "report_metadata", None) or {})
    if metadata:
        meta.update(metadata)
    return EvalReport(
        dataset_id=dataset_id,
        algorithm=state.algorithm,
        n_way=spec.n_way,
        k_shot=spec.k_shot,
        q_queries=spec.q_queries,
        n_tasks=n_tasks,
        mean_accuracy=mean,
        ci95_halfwidth=ci,
        seed=seed,
        per_task_accuracies=tuple(float(a) for a in accuracies) if store_per_task else None,
        metadata=meta,
    )


# ---------------------------------------------------------------------------
# Test-time sweeps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepEntry:
    param: int  # the swept value (k or N)
    available: bool
    report: Optional[EvalReport]
    reason: str = ""

    def to_dict(self) -> dict:
        return {
            "param": self.param,
            "available": self.available,
            "report": self.report.to_dict() if self.report else None,
            "reason": self.reason,
        }


def sweep_shots(
    state,
    partition: Partition,
    n_way: int,
    k_values: Sequence[int] = tuple(range(1, 31)),
    q_queries: int = 5,
    n_tasks: int = 10000,
    seed: int = 0,
    dataset_id: str = "dataset",
) -> List[SweepEntry]:
    """Vary k at test time with the already trained model; N stays at the
    training value. No retraining, no monotonicity assumption."""
    entries = []
    for k in k_values:
        spec = EpisodeSpec(n_way=n_way, k_shot=k, q_queries=q_queries)
        report = evaluate(state, partition, spec, n_tasks, seed, dataset_id)
        entries.append(SweepEntry(param=k, available=True, report=report))
    return entries


def sweep_ways(
    state,
    partition: Partition,
    n_values: Sequence[int] = tuple(range(5, 31)),
    k_shot: int = 1,
    q_queries: int = 5,
    n_tasks: int = 10000,
    seed: int = 0,
    dataset_id: str = "dataset",
) -> List[SweepEntry]:
    """Vary N at test time. Learners with a fixed-size output head are
    rejected; values of N beyond the partition's usable class count are
    marked unavailable rather than failing the whole sweep."""
    if getattr(state, "fixed_n_way", None) is not None:
        raise ValueError(
            f"{state.algorithm} has a fixed {state.fixed_n_way}-way output head; "
            "an N-way sweep needs an N-independent (embedding) head"
        )
    usable = sum(1 for records in partition.values() if len(records) >= 2)
    entries = []
    for n in n_values:
        if n > usable:
            entries.append(
                SweepEntry(
                    param=n, available=False, report=None,
                    reason=f"partition has {usable} usable classes, {n}-way impossible",
                )
            )
            continue
        spec = EpisodeSpec(n_way=n, k_shot=k_shot, q_queries=q_queries)
        report = evaluate(state, partition, spec, n_tasks, seed, dataset_id)
        entries.append(SweepEntry(param=n, available=True, report=report))
    return entries


# ---------------------------------------------------------------------------
# Rank aggregation
# ---------------------------------------------------------------------------

def average_rank(table: Mapping[str, Mapping[str, float]]) -> Dict[str, float]:
    """Mean per-dataset rank of each algorithm (rank 1 = highest accuracy,
    ties share the mean of the tied ranks).

    ``table`` maps dataset -> algorithm -> accuracy; every dataset row must
    cover the same algorithms.
    """
    if not table:
        raise ValueError("empty results table")
    datasets = sorted(table)
    algorithms = sorted(table[datasets[0]])
    totals = {algo: 0.0 for algo in algorithms}
    for ds in datasets:
        row = table[ds]
        missing = [a for a in algorithms if a not in row or row[a] is None]
        extra = [a for a in row if a not in algorithms]
        if missing or extra:
            raise ValueError(f"dataset {ds!r}: missing cells {missing}, unexpected {extra}")
        accs = np.array([row[a] for a in algorithms], dtype=np.float64)
        ranks = rankdata(-accs, method="average")
        for algo, rank in zip(algorithms, ranks):
            totals[algo] += rank
    return {algo: totals[algo] / len(datasets) for algo in algorithms}


# ---------------------------------------------------------------------------
# Fixed-feature baselines
# ---------------------------------------------------------------------------

def load_feature_table(path) -> Dict[str, np.ndarray]:
    """Read a feature table: one line per clip, clip_id then the vector."""
    table: Dict[str, np.ndarray] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not raw.strip():
            continue
        parts = raw.split()
        if len(parts) < 2:
            raise ValueError(f"{path}:{lineno}: expected clip_id followed by values")
        table[parts[0]] = np.array([float(v) for v in parts[1:]], dtype=np.float64)
    if not table:
        raise ValueError(f"{path}: empty feature table")
    return table


def save_feature_table(table: Mapping[str, np.ndarray], path) -> None:
    lines = [
        " ".join([clip_id] + [repr(float(v)) for v in np.asarray(vec).ravel()])
        for clip_id, vec in sorted(table.items())
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


class LinearSVM:
    """One-vs-rest linear max-margin classifier fitted per task.

    Minimises 0.5*||w||^2 + C * sum_i hinge(1 - y_i * (w.x_i + b)) by
    deterministic full-batch subgradient descent with a 1/t step schedule,
    stopping when the parameter update falls below ``tol``.
    """

    def __init__(self, C: float = 1.0, tol: float = 1e-4, max_iter: int = 5000):
        self.C = C
        self.tol = tol
        self.max_iter = max_iter
        self.weights: Optional[np.ndarray] = None
        self.biases: Optional[np.ndarray] = None
        self.classes: Optional[np.ndarray] = None

    def _fit_binary(self, x: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, float]:
        n, d = x.shape
        w = np.zeros(d)
        b = 0.0
        lam = 1.0 / (self.C * n)
        for t in range(1, self.max_iter + 1):
            margins = y * (x @ w + b)
            active = margins < 1.0
            grad_w = lam * w - (y[active, None] * x[active]).sum(axis=0) / n
            grad_b = -y[active].sum() / n
            step = 1.0 / (lam * (t + 1))
            new_w = w - step * grad_w
            new_b = b - step * grad_b
            delta = max(np.abs(new_w - w).max(), abs(new_b - b))
            w, b = new_w, new_b
            if delta < self.tol:
                break
        return w, b

    def fit(self, features: np.ndarray, labels: np.ndarray) -> "LinearSVM":
        features = np.asarray(features, dtype=np.float64)
        labels = np.asarray(labels)
        self.classes = np.unique(labels)
        ws, bs = [], []
        for cls in self.classes:
            y = np.where(labels == cls, 1.0, -1.0)
            w, b = self._fit_binary(features, y)
            ws.append(w)
            bs.append(b)
        self.weights = np.stack(ws)
        self.biases = np.array(bs)
        return self

    def decision_values(self, features: np.ndarray) -> np.ndarray:
        return np.asarray(features, dtype=np.float64) @ self.weights.T + self.biases

    def predict(self, features: np.ndarray) -> np.ndarray:
        return self.classes[self.decision_values(features).argmax(axis=1)]


class FixedFeatureClassifier:
    """Per-task simple classifier over precomputed clip features: either
    CL2N nearest centroid (SimpleShot math) or a linear max-margin fit."""

    fixed_n_way = None

    def __init__(self, classifier: str, train_feature_mean: Optional[np.ndarray] = None):
        if classifier not in ("ncc_cl2n", "linear_svm"):
            raise ValueError(f"unknown fixed-feature classifier {classifier!r}")
        if classifier == "ncc_cl2n" and train_feature_mean is None:
            raise ValueError("ncc_cl2n needs the train-partition feature mean")
        self.classifier = classifier
        self.center = None if train_feature_mean is None else np.asarray(train_feature_mean)
        self.algorithm = classifier

    def predict(self, episode: Episode) -> np.ndarray:
        s_f = episode.support_x.astype(np.float64)
        q_f = episode.query_x.astype(np.float64)
        if self.classifier == "ncc_cl2n":
            s_f = cl2n_transform(s_f, self.center)
            q_f = cl2n_transform(q_f, self.center)
            return nearest_centroid_predict(s_f, episode.support_y, q_f)
        svm = LinearSVM().fit(s_f, episode.support_y)
        return svm.predict(q_f)

    def episode_accuracy(self, episode: Episode, rng=None) -> float:
        return float((self.predict(episode) == episode.query_y).mean())


def feature_partition(
    feature_table: Mapping[str, np.ndarray], partition_classes: Mapping[str, Sequence[str]]
) -> Dict[str, List[ClipRecord]]:
    """Turn clip features into a sampler partition (one 'sub-clip' per clip:
    its feature vector)."""
    out: Dict[str, List[ClipRecord]] = {}
    for label in sorted(partition_classes):
        records = []
        for clip_id in sorted(partition_classes[label]):
            if clip_id not in feature_table:
                raise SamplingError(f"clip {clip_id!r} missing from the feature table")
            records.append(ClipRecord(clip_id=clip_id, subclips=(feature_table[clip_id],)))
        out[label] = records
    return out


def fixed_feature_evaluate(
    feature_table: Mapping[str, np.ndarray],
    partition_classes: Mapping[str, Sequence[str]],
    spec: EpisodeSpec,
    classifier: str = "ncc_cl2n",
    n_tasks: int = 10000,
    seed: int = 0,
    dataset_id: str = "dataset",
    train_feature_mean: Optional[np.ndarray] = None,
    store_per_task: bool = False,
) -> EvalReport:
    """Few-shot evaluation over frozen features produced offline by any
    external model; per task the chosen simple classifier is fitted on the
    support features and scored on the query features."""
    partition = feature_partition(feature_table, partition_classes)
    state = FixedFeatureClassifier(classifier, train_feature_mean)
    return evaluate(
        state, partition, spec, n_tasks, seed, dataset_id,
        store_per_task=store_per_task,
        metadata={"feature_source": "external", "classifier": classifier},
    )


# ---------------------------------------------------------------------------
# Report rendering
# ---------------------------------------------------------------------------

def render_accuracy_table(table: Mapping[str, Mapping[str, EvalReport]]) -> str:
    """Aligned text table of mean +/- ci per (dataset, algorithm)."""
    datasets = sorted(table)
    algorithms = sorted({a for row in table.values() for a in row})
    header = ["dataset"] + algorithms
    rows = [header]
    for ds in datasets:
        row = [ds]
        for algo in algorithms:
            rep = table[ds].get(algo)
            row.append(
                f"{100 * rep.mean_accuracy:.2f} ± {100 * rep.ci95_halfwidth:.2f}"
                if rep
                else "n/a"
            )
        rows.append(row)
    acc_table = {
        ds: {a: table[ds][a].mean_accuracy for a in algorithms if a in table[ds]}
        for ds in datasets
    }
    if all(len(row) == len(algorithms) for row in acc_table.values()):
        ranks = average_rank(acc_table)
        rows.append(["avg_rank"] + [f"{ranks[a]:.1f}" for a in algorithms])
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows]
    return "\n".join(lines)


def write_table_csv(table: Mapping[str, Mapping[str, EvalReport]], path) -> None:
    algorithms = sorted({a for row in table.values() for a in row})
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["dataset"] + [f"{a}_{suffix}" for a in algorithms for suffix in ("mean", "ci95")])
        for ds in sorted(table):
            row = [ds]
            for algo in algorithms:
                rep = table[ds].get(algo)
                row.extend(["", ""] if rep is None else [repr(rep.mean_accuracy), repr(rep.ci95_halfwidth)])
            writer.writerow(row)


def write_sweep_plot_data(entries: Sequence[SweepEntry], path, param_name: str = "k") -> None:
    """CSV of (param, mean, ci95) rows for accuracy-vs-k / accuracy-vs-N
    plots; unavailable entries are skipped."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([param_name, "mean_accuracy", "ci95_halfwidth"])
        for entry in entries:
            if entry.available and entry.report is not None:
                writer.writerow(
                    [entry.param, repr(entry.report.mean_accuracy), repr(entry.report.ci95_halfwidth)]
                )
