"""Offline dataset preparation.

Everything here runs before training: manifest ingestion, pruning,
segmentation of variable-length clips into fixed L-second sub-clips,
log-mel spectrogram computation, normalization statistics, and an on-disk
spectrogram cache with random access during episodic sampling.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import tempfile
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy.io import wavfile

from .core import STD_EPSILON, AudioClip, NormalizationStats, SubClip

# Floor under mel power before the log, so silence maps to log(LOG_FLOOR)
# instead of -inf.
LOG_FLOOR = 1e-10

MANIFEST_FIELDS = ("clip_id", "class", "duration_s", "sample_rate", "path")


class DataError(ValueError):
    """Raised for malformed manifests, empty results, or bad cache state."""


@dataclass(frozen=True)
class SpectrogramConfig:
    """Parameters of the raw-audio -> log-mel conversion, fixed across all
    datasets of an experiment. clip_length_s is the sub-clip length L."""

    sample_rate_hz: int = 16000
    n_mels: int = 64
    window_ms: float = 25.0
    hop_ms: float = 10.0
    log_scale: bool = True
    clip_length_s: float = 5.0

    def __post_init__(self):
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")
        if self.n_mels < 1:
            raise ValueError("n_mels must be >= 1")
        if not (self.window_ms >= self.hop_ms > 0):
            raise ValueError("need window_ms >= hop_ms > 0")
        if self.clip_length_s <= 0:
            raise ValueError("clip_length_s must be positive")

    @property
    def window_samples(self) -> int:
        return int(round(self.window_ms * self.sample_rate_hz / 1000.0))

    @property
    def hop_samples(self) -> int:
        return int(round(self.hop_ms * self.sample_rate_hz / 1000.0))

    @property
    def subclip_samples(self) -> int:
        return int(round(self.clip_length_s * self.sample_rate_hz))

    def frame_count(self, n_samples: Optional[int] = None) -> int:
        n = self.subclip_samples if n_samples is None else n_samples
        if n < self.window_samples:
            raise ValueError(
                f"waveform of {n} samples is shorter than one window ({self.window_samples})"
            )
        return (n - self.window_samples) // self.hop_samples + 1

    def config_hash(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]

    def to_dict(self) -> dict:
        return {
            "sample_rate_hz": self.sample_rate_hz,
            "n_mels": self.n_mels,
            "window_ms": self.window_ms,
            "hop_ms": self.hop_ms,
            "log_scale": self.log_scale,
            "clip_length_s": self.clip_length_s,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SpectrogramConfig":
        return cls(**d)


@dataclass(frozen=True)
class DatasetIndex:
    """Validated view of one dataset: its clips and per-class clip counts."""

    dataset_id: str
    clips: Tuple[AudioClip, ...]
    class_inventory: Dict[str, int]
    fixed_length: bool

    def __post_init__(self):
        if sum(self.class_inventory.values()) != len(self.clips):
            raise ValueError("class_inventory counts must sum to the number of clips")

    @property
    def classes(self) -> Tuple[str, ...]:
        return tuple(sorted(self.class_inventory))


# ---------------------------------------------------------------------------
# Manifest ingestion and pruning
# ---------------------------------------------------------------------------

def read_manifest(path) -> Iterator[dict]:
    """Yield records from a newline-delimited manifest (CSV with header).

    Relative audio paths are resolved against the manifest's directory, so
    corpora stay relocatable and byte-identical across machines.
    """
    base = Path(path).parent
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError(f"{path}: empty manifest")
        missing = [f for f in MANIFEST_FIELDS if f not in reader.fieldnames]
        if missing:
            raise DataError(f"{path}: manifest header missing fields {missing}")
        for row in reader:
            if row.get("path") and not Path(row["path"]).is_absolute():
                row["path"] = str(base / row["path"])
            yield row


def ingest_dataset(records: Iterable[dict], dataset_id: str) -> DatasetIndex:
    """Validate a manifest record stream into a DatasetIndex.

    Rejects duplicate clip ids, non-positive durations and missing fields,
    naming the offending record (1-based position in the stream).
    """
    clips: List[AudioClip] = []
    seen = set()
    inventory: Dict[str, int] = {}
    for pos, record in enumerate(records, start=1):
        for fieldname in MANIFEST_FIELDS:
            if record.get(fieldname) in (None, ""):
                raise DataError(f"record {pos}: missing field {fieldname!r}")
        clip_id = record["clip_id"]
        if clip_id in seen:
            raise DataError(f"record {pos}: duplicate clip_id {clip_id!r}")
        seen.add(clip_id)
        try:
            duration = float(record["duration_s"])
            sample_rate = int(record["sample_rate"])
        except (TypeError, ValueError) as exc:
            raise DataError(f"record {pos}: {exc}") from exc
        if duration <= 0:
            raise DataError(f"record {pos}: non-positive duration {duration}")
        if sample_rate <= 0:
            raise DataError(f"record {pos}: non-positive sample_rate {sample_rate}")
        clip = AudioClip(
            clip_id=clip_id,
            dataset_id=dataset_id,
            class_label=record["class"],
            duration=duration,
            sample_rate=sample_rate,
            source_path=record["path"],
        )
        clips.append(clip)
        inventory[clip.class_label] = inventory.get(clip.class_label, 0) + 1
    if not clips:
        raise DataError("empty manifest")
    durations = {c.duration for c in clips}
    return DatasetIndex(
        dataset_id=dataset_id,
        clips=tuple(clips),
        class_inventory=inventory,
        fixed_length=len(durations) == 1,
    )


def prune_dataset(
    index: DatasetIndex, max_duration: float = math.inf, min_class_count: int = 0
) -> DatasetIndex:
    """Drop clips longer than max_duration, then drop classes whose surviving
    clip count falls below min_class_count. Idempotent for fixed parameters."""
    if max_duration <= 0:
        raise ValueError("max_duration must be positive")
    if min_class_count < 0:
        raise ValueError("min_class_count must be >= 0")
    survivors = [c for c in index.clips if c.duration <= max_duration]
    counts: Dict[str, int] = {}
    for clip in survivors:
        counts[clip.class_label] = counts.get(clip.class_label, 0) + 1
    keep_classes = {label for label, n in counts.items() if n >= min_class_count}
    survivors = [c for c in survivors if c.class_label in keep_classes]
    if not survivors:
        raise DataError("pruning removed all data")
    durations = {c.duration for c in survivors}
    return DatasetIndex(
        dataset_id=index.dataset_id,
        clips=tuple(survivors),
        class_inventory={label: counts[label] for label in keep_classes},
        fixed_length=len(durations) == 1,
    )


# ---------------------------------------------------------------------------
# Segmentation
# ---------------------------------------------------------------------------

def segment_clip(clip: AudioClip, length_s: float) -> List[SubClip]:
    """Cut a clip into ceil(duration/L) sub-clips of exactly L seconds.

    The final partial segment is zero-padded rather than dropped, so clips
    shorter than L still yield one (padded) sub-clip.
    """
    if length_s <= 0:
        raise ValueError("length_s must be positive")
    n_segments = max(1, math.ceil(clip.duration / length_s))
    return [
        SubClip(
            parent_clip_id=clip.clip_id,
            index=i,
            length=length_s,
            class_label=clip.class_label,
        )
        for i in range(n_segments)
    ]


def segment_waveform(waveform: np.ndarray, subclip_samples: int) -> List[np.ndarray]:
    """Sample-domain counterpart of segment_clip: equal chunks, last one
    zero-padded to exactly subclip_samples."""
    n = len(waveform)
    n_segments = max(1, math.ceil(n / subclip_samples))
    segments = []
    for i in range(n_segments):
        chunk = waveform[i * subclip_samples : (i + 1) * subclip_samples]
        if len(chunk) < subclip_samples:
            chunk = np.pad(chunk, (0, subclip_samples - len(chunk)))
        segments.append(chunk.astype(np.float32))
    return segments


# ---------------------------------------------------------------------------
# Audio IO and spectrograms
# ---------------------------------------------------------------------------

def load_waveform(path, target_sample_rate: int) -> np.ndarray:
    """Read a PCM WAV as mono float32 in [-1, 1], linearly resampled to the
    target rate if needed. Multi-channel audio is downmixed by averaging."""
    rate, data = wavfile.read(path)
    data = np.asarray(data)
    if data.ndim > 1:
        data = data.mean(axis=1)
    if np.issubdtype(data.dtype, np.integer):
        data = data.astype(np.float32) / float(np.iinfo(data.dtype).max)
    else:
        data = data.astype(np.float32)
    if rate != target_sample_rate:
        n_out = int(round(len(data) * target_sample_rate / rate))
        x_old = np.arange(len(data)) / rate
        x_new = np.arange(n_out) / target_sample_rate
        data = np.interp(x_new, x_old, data).astype(np.float32)
    return data


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=8)
def mel_filterbank(sample_rate: int, n_fft: int, n_mels: int) -> np.ndarray:
    """Triangular mel filterbank (n_mels x n_fft//2+1) spanning 0..sr/2."""
    mel_points = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2.0), n_mels + 2))
    fft_freqs = np.fft.rfftfreq(n_fft, d=1.0 / sample_rate)
    bank = np.zeros((n_mels, len(fft_freqs)))
    for i in range(n_mels):
        lo, center, hi = mel_points[i], mel_points[i + 1], mel_points[i + 2]
        rising = (fft_freqs - lo) / max(center - lo, 1e-12)
        falling = (hi - fft_freqs) / max(hi - center, 1e-12)
        bank[i] = np.maximum(0.0, np.minimum(rising, falling))
    return bank


@lru_cache(maxsize=8)
def mel_bin_centers(sample_rate: int, n_mels: int) -> np.ndarray:
    """Center frequency (Hz) of each mel bin, for inspection and tests."""
    mel_points = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2.0), n_mels + 2))
    return mel_points[1:-1]


def compute_spectrogram(waveform: np.ndarray, config: SpectrogramConfig) -> np.ndarray:
    """Log-magnitude mel spectrogram of one fixed-length sub-clip.

    Pure function: identical inputs give bit-identical (n_mels, frames)
    float32 output. An all-zero waveform is valid and maps to the log floor.
    """
    waveform = np.asarray(waveform, dtype=np.float64)
    if waveform.ndim != 1:
        raise ValueError("waveform must be one-dimensional")
    win = config.window_samples
    hop = config.hop_samples
    n_frames = config.frame_count(len(waveform))
    # Periodic Hann window, frames laid out with stride tricks.
    window = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(win) / win)
    idx = np.arange(win)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = waveform[idx] * window
    power = np.abs(np.fft.rfft(frames, axis=1)) ** 2
    mel = power @ mel_filterbank(config.sample_rate_hz, win, config.n_mels).T
    out = mel.T  # (n_mels, frames)
    if config.log_scale:
        out = np.log(np.maximum(out, LOG_FLOOR))
    return out.astype(np.float32)


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------

def compute_normalization_stats(
    spectrograms: Iterable[Tuple[str, np.ndarray]], mode: str
) -> NormalizationStats:
    """Accumulate normalization statistics over (subclip_id, spectrogram)
    pairs. Callers must feed train-partition examples only; the ids are kept
    as the provenance log. Population (ddof=0) statistics throughout."""
    if mode == "per_sample":
        ids = tuple(sid for sid, _ in spectrograms)
        if not ids:
            raise DataError("empty spectrogram stream")
        return NormalizationStats(mode="per_sample", source_ids=ids)

    ids: List[str] = []
    count = 0
    total = None
    total_sq = None
    for sid, spec in spectrograms:
        spec = np.asarray(spec, dtype=np.float64)
        ids.append(sid)
        if mode == "global":
            if total is None:
                total = 0.0
                total_sq = 0.0
            total += spec.sum()
            total_sq += (spec**2).sum()
            count += spec.size
        elif mode == "channel_wise":
            if total is None:
                total = np.zeros(spec.shape[0])
                total_sq = np.zeros(spec.shape[0])
            total += spec.sum(axis=1)
            total_sq += (spec**2).sum(axis=1)
            count += spec.shape[1]
        else:
            raise ValueError(f"unknown normalization mode {mode!r}")
    if not ids:
        raise DataError("empty spectrogram stream")
    mean = np.asarray(total) / count
    var = np.maximum(np.asarray(total_sq) / count - mean**2, 0.0)
    std = np.maximum(np.sqrt(var), STD_EPSILON)
    return NormalizationStats(mode=mode, mean=mean, std=std, source_ids=tuple(ids))


def normalize(spectrogram: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    """(x - mean) / std at the granularity of the stats mode."""
    x = np.asarray(spectrogram, dtype=np.float32)
    if stats.mode == "global":
        return ((x - stats.mean) / stats.std).astype(np.float32)
    if stats.mode == "channel_wise":
        mean = np.asarray(stats.mean)[:, None]
        std = np.asarray(stats.std)[:, None]
        return ((x - mean) / std).astype(np.float32)
    if stats.mode == "per_sample":
        mean = x.mean()
        std = max(float(x.std()), STD_EPSILON)
        return ((x - mean) / std).astype(np.float32)
    raise ValueError(f"unknown normalization mode {stats.mode!r}")


def denormalize(spectrogram: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    """Inverse of normalize for global and channel_wise modes."""
    x = np.asarray(spectrogram, dtype=np.float32)
    if stats.mode == "global":
        return (x * stats.std + stats.mean).astype(np.float32)
    if stats.mode == "channel_wise":
        return (x * np.asarray(stats.std)[:, None] + np.asarray(stats.mean)[:, None]).astype(
            np.float32
        )
    raise ValueError("per_sample normalization has no global inverse")


# ---------------------------------------------------------------------------
# Cache
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CacheEntry:
    subclip_id: str
    parent_id: str
    class_label: str
    file: str
    config_hash: str


@dataclass(frozen=True)
class CacheManifest:
    entries: Tuple[CacheEntry, ...]
    errors: Tuple[Tuple[str, str], ...]
    config_hash: str

    def by_parent(self) -> Dict[str, List[CacheEntry]]:
        out: Dict[str, List[CacheEntry]] = {}
        for e in self.entries:
            out.setdefault(e.parent_id, []).append(e)
        for entries in out.values():
            entries.sort(key=lambda e: e.subclip_id)
        return out


def _sanitize(name: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "._-" else "_" for ch in name)


def _atomic_save(path: Path, array: np.ndarray):
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            np.save(fh, array)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_cache_manifest(manifest: CacheManifest, path):
    path = Path(path)
    lines = ["subclip_id,parent_id,class,file,config_hash"]
    for e in manifest.entries:
        lines.append(f"{e.subclip_id},{e.parent_id},{e.class_label},{e.file},{e.config_hash}")
    lines.append("# errors")
    for clip_id, message in manifest.errors:
        lines.append(f"#error,{clip_id},{message}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_cache_manifest(path) -> CacheManifest:
    path = Path(path)
    entries: List[CacheEntry] = []
    errors: List[Tuple[str, str]] = []
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != "subclip_id,parent_id,class,file,config_hash":
        raise DataError(f"{path}: not a cache manifest")
    for line in lines[1:]:
        if not line or line == "# errors":
            continue
        if line.startswith("#error,"):
            _, clip_id, message = line.split(",", 2)
            errors.append((clip_id, message))
            continue
        parts = line.split(",")
        if len(parts) != 5:
            raise DataError(f"{path}: malformed cache record {line!r}")
        entries.append(CacheEntry(*parts))
    hashes = {e.config_hash for e in entries}
    if len(hashes) > 1:
        raise DataError(f"{path}: mixed config hashes {sorted(hashes)}")
    return CacheManifest(
        entries=tuple(entries),
        errors=tuple(errors),
        config_hash=next(iter(hashes)) if hashes else "",
    )


def materialize_cache(
    index: DatasetIndex, config: SpectrogramConfig, cache_dir
) -> CacheManifest:
    """Segment every clip, convert sub-clips to spectrograms, write one
    binary array file per sub-clip plus a manifest.

    Idempotent: a re-run with the same config skips sub-clips whose file
    already exists under a matching config hash. Unreadable source audio is
    skipped and listed in the manifest error section.
    """
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = cache_dir / "cache_manifest.csv"
    cfg_hash = config.config_hash()

    existing: Dict[str, CacheEntry] = {}
    if manifest_path.exists():
        previous = load_cache_manifest(manifest_path)
        if previous.config_hash and previous.config_hash != cfg_hash:
            raise DataError(
                f"cache at {cache_dir} was built with config {previous.config_hash}, "
                f"current config is {cfg_hash}; use a fresh cache directory"
            )
        existing = {e.subclip_id: e for e in previous.entries}

    entries: List[CacheEntry] = []
    errors: List[Tuple[str, str]] = []
    for clip in index.clips:
        subclips = segment_clip(clip, config.clip_length_s)
        cached = [existing.get(sc.subclip_id) for sc in subclips]
        if all(e is not None and (cache_dir / e.file).exists() for e in cached):
            entries.extend(cached)
            continue
        try:
            waveform = load_waveform(clip.source_path, config.sample_rate_hz)
        except (OSError, ValueError) as exc:
            errors.append((clip.clip_id, str(exc)))
            continue
        segments = segment_waveform(waveform, config.subclip_samples)
        if len(segments) != len(subclips):
            # Manifest duration disagrees with the audio on disk; trust the audio.
            subclips = [
                SubClip(clip.clip_id, i, config.clip_length_s, clip.class_label)
                for i in range(len(segments))
            ]
        for sub, segment in zip(subclips, segments):
            filename = f"{_sanitize(clip.clip_id)}__{sub.index:04d}.npy"
            target = cache_dir / filename
            prior = existing.get(sub.subclip_id)
            if prior is not None and target.exists():
                entries.append(prior)
                continue
            _atomic_save(target, compute_spectrogram(segment, config))
            entries.append(
                CacheEntry(
                    subclip_id=sub.subclip_id,
                    parent_id=clip.clip_id,
                    class_label=sub.class_label,
                    file=filename,
                    config_hash=cfg_hash,
                )
            )
    manifest = CacheManifest(entries=tuple(entries), errors=tuple(errors), config_hash=cfg_hash)
    save_cache_manifest(manifest, manifest_path)
    return manifest
