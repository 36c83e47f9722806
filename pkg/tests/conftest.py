"""Shared fixtures: a session-wide synthetic corpus with cache and split,
plus small in-memory partitions for sampler-level tests."""
import numpy as np
import pytest

from fewshot_audio.core import EpisodeSpec, NormalizationStats
from fewshot_audio.pipeline import (
    SpectrogramConfig,
    compute_normalization_stats,
    ingest_dataset,
    load_cache_manifest,
    materialize_cache,
    read_manifest,
)
from fewshot_audio.sampler import ClipRecord, partition_from_cache
from fewshot_audio.splits import generate_split
from fewshot_audio.synthbench import generate_synthetic_dataset, preset

DESK_SPECTROGRAM = SpectrogramConfig(
    sample_rate_hz=8000,
    n_mels=32,
    window_ms=64.0,
    hop_ms=32.0,
    log_scale=True,
    clip_length_s=5.0,
)

DESK_BACKBONE = {
    "conv_channels": (8, 8, 8, 8),
    "rnn_hidden": 32,
    "rnn_layers": 1,
    "bidirectional": False,
    "head_dim": 32,
    "in_channels": 1,
    "bn_running_stats": False,
}


@pytest.fixture(scope="session")
def desk_spectrogram():
    return DESK_SPECTROGRAM


@pytest.fixture(scope="session")
def synth_corpus(tmp_path_factory):
    """The synth-fixed preset: 10 balanced classes, 60 fixed 5s clips each."""
    out = tmp_path_factory.mktemp("corpus")
    manifest_path = generate_synthetic_dataset(preset("synth-fixed", seed=1), out, dataset_id="synth")
    return out, manifest_path


@pytest.fixture(scope="session")
def synth_index(synth_corpus):
    _, manifest_path = synth_corpus
    return ingest_dataset(read_manifest(manifest_path), "synth")


@pytest.fixture(scope="session")
def synth_cache(synth_corpus, synth_index, tmp_path_factory):
    cache_dir = tmp_path_factory.mktemp("cache")
    manifest = materialize_cache(synth_index, DESK_SPECTROGRAM, cache_dir)
    return cache_dir, manifest


@pytest.fixture(scope="session")
def synth_split(synth_index):
    return generate_split(synth_index.classes, seed=1, dataset_id="synth")


@pytest.fixture(scope="session")
def synth_partitions(synth_cache, synth_split):
    """Normalized partitions: train/val/test plus the full class set, with
    global stats computed from the train partition only."""
    cache_dir, manifest = synth_cache
    train_classes = set(synth_split.train)

    def train_stream():
        for entry in manifest.entries:
            if entry.class_label in train_classes:
                yield entry.subclip_id, np.load(cache_dir / entry.file)

    stats = compute_normalization_stats(train_stream(), "global")
    parts = {
        name: partition_from_cache(manifest, cache_dir, synth_split.partition(name), stats)
        for name in ("train", "val", "test")
    }
    parts["all"] = partition_from_cache(
        manifest, cache_dir, sorted(synth_split.all_classes), stats
    )
    return parts, stats


def make_partition(n_classes, clips_per_class, n_subclips=1, shape=(1, 1), prefix="c", seed=0):
    """In-memory partition with tiny dummy spectrograms, for sampler tests
    that do not care about audio content."""
    rng = np.random.default_rng(seed)
    partition = {}
    for c in range(n_classes):
        label = f"{prefix}{c:02d}"
        records = []
        count = clips_per_class[c] if isinstance(clips_per_class, (list, tuple)) else clips_per_class
        for i in range(count):
            subclips = tuple(
                rng.normal(size=shape).astype(np.float32) for _ in range(n_subclips)
            )
            records.append(ClipRecord(clip_id=f"{label}_clip{i:03d}", subclips=subclips))
        partition[label] = records
    return partition


@pytest.fixture
def dummy_partition():
    return make_partition(10, 8)


@pytest.fixture
def spec_515():
    return EpisodeSpec(n_way=5, k_shot=1, q_queries=5)
