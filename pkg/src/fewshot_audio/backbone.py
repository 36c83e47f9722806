"""CRNN encoder/classifier shared by all learners.

Four conv blocks (3x3 conv, batch norm, ReLU, 2x2 max-pool) feed a
1-layer unidirectional GRU over the time axis; the final hidden state goes
through a linear head sized either n_way (gradient-based learners) or the
embedding width (metric/baseline learners).

Batch norm layers keep no running statistics by default (they normalize
with the current batch), the usual choice for episodic adaptation; the
conventionally trained learners set ``bn_running_stats=True`` to get
per-sample deterministic features at inference time.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple

import torch
import torch.nn as nn


@dataclass(frozen=True)
class CRNNConfig:
    conv_channels: Tuple[int, ...] = (64, 64, 64, 64)
    rnn_hidden: int = 64
    rnn_layers: int = 1
    bidirectional: bool = False
    head_dim: int = 64  # n_way for classifier heads, embedding width otherwise
    in_channels: int = 1
    bn_running_stats: bool = False
    rnn_readout: str = "last"  # "last" hidden state or "mean" over time

    def __post_init__(self):
        if not self.conv_channels:
            raise ValueError("conv_channels must be non-empty")
        if any(c < 1 for c in self.conv_channels):
            raise ValueError("conv channel counts must be positive")
        if self.rnn_hidden < 1 or self.rnn_layers < 1:
            raise ValueError("rnn_hidden and rnn_layers must be >= 1")
        if self.head_dim < 1:
            raise ValueError("head_dim must be >= 1")
        if self.rnn_readout not in ("last", "mean"):
            raise ValueError(f"rnn_readout must be 'last' or 'mean', got {self.rnn_readout!r}")

    def to_dict(self) -> dict:
        return {
            "conv_channels": list(self.conv_channels),
            "rnn_hidden": self.rnn_hidden,
            "rnn_layers": self.rnn_layers,
            "bidirectional": self.bidirectional,
            "head_dim": self.head_dim,
            "in_channels": self.in_channels,
            "bn_running_stats": self.bn_running_stats,
            "rnn_readout": self.rnn_readout,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CRNNConfig":
        d = dict(d)
        d["conv_channels"] = tuple(d["conv_channels"])
        return cls(**d)

    def with_head(self, head_dim: int) -> "CRNNConfig":
        return CRNNConfig(**{**self.to_dict(), "head_dim": head_dim})


def conv_output_shape(config: CRNNConfig, n_mels: int, frames: int) -> Tuple[int, int]:
    """Spatial (freq, time) dims after the conv stack; each block halves both
    via its 2x2 max-pool (floor division)."""
    f, t = n_mels, frames
    for _ in config.conv_channels:
        f, t = f // 2, t // 2
        if f < 1 or t < 1:
            raise ValueError(
                f"input {n_mels}x{frames} too small for {len(config.conv_channels)} pooling stages"
            )
    return f, t


class CRNN(nn.Module):
    def __init__(self, config: CRNNConfig, n_mels: int):
        super().__init__()
        self.config = config
        self.n_mels = n_mels
        freq_out, _ = conv_output_shape(config, n_mels, 2 ** len(config.conv_channels))
        blocks = []
        c_in = config.in_channels
        for c_out in config.conv_channels:
            blocks.append(
                nn.Sequential(
                    nn.Conv2d(c_in, c_out, kernel_size=3, padding=1),
                    nn.BatchNorm2d(c_out, track_running_stats=config.bn_running_stats),
                    nn.ReLU(),
                    nn.MaxPool2d(2),
                )
            )
            c_in = c_out
        self.conv = nn.Sequential(*blocks)
        self.rnn = nn.GRU(
            input_size=c_in * freq_out,
            hidden_size=config.rnn_hidden,
            num_layers=config.rnn_layers,
            batch_first=True,
            bidirectional=config.bidirectional,
        )
        rnn_out = config.rnn_hidden * (2 if config.bidirectional else 1)
        self.head = nn.Linear(rnn_out, config.head_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim == 3:  # (B, mels, frames) -> add channel axis
            x = x.unsqueeze(1)
        if x.shape[1] != self.config.in_channels or x.shape[2] != self.n_mels:
            raise ValueError(
                f"expected input (B, {self.config.in_channels}, {self.n_mels}, T), "
                f"got {tuple(x.shape)}"
            )
        h = self.conv(x)  # (B, C, F', T')
        h = h.permute(0, 3, 1, 2).flatten(2)  # (B, T', C*F')
        out, h_n = self.rnn(h)
        if self.config.rnn_readout == "mean":
            pooled = out.mean(dim=1)
        elif self.config.bidirectional:
            pooled = torch.cat([h_n[-2], h_n[-1]], dim=1)
        else:
            pooled = h_n[-1]
        return self.head(pooled)


def build_crnn(config: CRNNConfig, n_mels: int, seed: int = 0, zero_head: bool = False) -> CRNN:
    """Construct a CRNN with seeded, deterministic parameter initialisation.

    zero_head zeroes the final linear layer, which makes a fresh n_way
    classifier symmetric under episode-local label permutations (no output
    slot is preferred before any training happens).
    """
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        model = CRNN(config, n_mels)
    if zero_head:
        with torch.no_grad():
            model.head.weight.zero_()
            model.head.bias.zero_()
    return model


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def save_checkpoint(
    path,
    model: CRNN,
    seed: int,
    step: int,
    algorithm: str = "",
    extras: Optional[dict] = None,
) -> None:
    """Round-trip-exact checkpoint: parameters + config + seed + step, plus
    learner-specific extras."""
    payload = {
        "format": "fewshot-audio-checkpoint-v1",
        "config": model.config.to_dict(),
        "n_mels": model.n_mels,
        "state_dict": model.state_dict(),
        "seed": seed,
        "step": step,
        "algorithm": algorithm,
        "extras": extras or {},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_checkpoint(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("format") != "fewshot-audio-checkpoint-v1":
        raise ValueError(f"{path}: not a recognised checkpoint file")
    config = CRNNConfig.from_dict(payload["config"])
    model = CRNN(config, payload["n_mels"])
    model.load_state_dict(payload["state_dict"])
    payload["model"] = model
    return payload
