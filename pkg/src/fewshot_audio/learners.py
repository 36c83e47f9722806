"""The five few-shot learners over a shared encoder.

* ProtoNets        — class centroids of embedded support, nearest-centroid
                     queries (squared Euclidean), episodic training.
* FO-MAML          — per-task inner-loop gradient descent on all parameters;
                     first-order meta-gradient (query-loss gradient taken at
                     the adapted parameters, applied to the initialisation).
* FO-Meta-Curvature — FO-MAML plus a learnable transform of the inner-loop
                     gradients (elementwise scale per tensor, left matrix on
                     2-D weights), meta-trained alongside the initialisation.
* SimpleShot       — conventional |C_train|-way training, then centered +
                     L2-normalised (CL2N) nearest-centroid classification.
* Meta-Baseline    — conventional training followed by episodic fine-tuning
                     with scaled cosine logits.

Inverse-frequency class weighting applies to the conventional training
stages of SimpleShot and Meta-Baseline only.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.func import functional_call

from .backbone import CRNN, CRNNConfig, build_crnn, load_checkpoint, save_checkpoint
from .core import Episode
from .seeding import spawn_rng

ALGORITHMS = ("protonet", "fo_maml", "fo_meta_curvature", "simpleshot", "meta_baseline")

FEATURE_NORM_EPSILON = 1e-8


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------

def _to_tensor(x: np.ndarray) -> torch.Tensor:
    return torch.as_tensor(np.ascontiguousarray(x), dtype=torch.float32)


def embed_episode(model: nn.Module, episode: Episode, grad: bool = False):
    """Embed support and query in one forward pass (so batch-norm without
    running statistics sees the whole episode)."""
    x = np.concatenate([episode.support_x, episode.query_x])
    xt = _to_tensor(x)
    if grad:
        out = model(xt)
    else:
        with torch.no_grad():
            out = model(xt)
    n_support = len(episode.support)
    return out[:n_support], out[n_support:]


def _class_centroids(features: torch.Tensor, labels: torch.Tensor, n_way: int) -> torch.Tensor:
    return torch.stack([features[labels == c].mean(dim=0) for c in range(n_way)])


def squared_euclidean_logits(query: torch.Tensor, centroids: torch.Tensor) -> torch.Tensor:
    """Negative squared Euclidean distances; argmax = nearest centroid."""
    diff = query[:, None, :] - centroids[None, :, :]
    return -(diff**2).sum(dim=-1)


def cosine_logits(query: torch.Tensor, centroids: torch.Tensor, scale) -> torch.Tensor:
    q = query / query.norm(dim=1, keepdim=True).clamp_min(FEATURE_NORM_EPSILON)
    c = centroids / centroids.norm(dim=1, keepdim=True).clamp_min(FEATURE_NORM_EPSILON)
    return scale * (q @ c.T)


def cl2n_transform(features: np.ndarray, center: np.ndarray) -> np.ndarray:
    """SimpleShot CL2N: subtract the train-feature mean, then L2-normalise."""
    shifted = np.asarray(features, dtype=np.float64) - np.asarray(center, dtype=np.float64)
    norms = np.maximum(np.linalg.norm(shifted, axis=1, keepdims=True), FEATURE_NORM_EPSILON)
    return shifted / norms


def nearest_centroid_predict(
    support_features: np.ndarray, support_labels: np.ndarray, query_features: np.ndarray
) -> np.ndarray:
    """Assign each query to the class with the nearest (squared Euclidean)
    support centroid."""
    support_features = np.asarray(support_features, dtype=np.float64)
    query_features = np.asarray(query_features, dtype=np.float64)
    classes = np.unique(support_labels)
    centroids = np.stack([support_features[support_labels == c].mean(axis=0) for c in classes])
    d2 = ((query_features[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=-1)
    return classes[d2.argmin(axis=1)]


def inverse_frequency_weights(class_counts: Mapping[str, int]) -> Dict[str, float]:
    """Per-class loss weights proportional to 1/count, rescaled so the mean
    weight is 1."""
    if not class_counts:
        raise ValueError("class_counts must be non-empty")
    for label, count in class_counts.items():
        if count < 1:
            raise ValueError(f"class {label!r} has non-positive count {count}")
    raw = {label: 1.0 / count for label, count in class_counts.items()}
    mean = sum(raw.values()) / len(raw)
    return {label: w / mean for label, w in raw.items()}


# ---------------------------------------------------------------------------
# ProtoNets
# ---------------------------------------------------------------------------

def protonet_episode(model: nn.Module, episode: Episode, grad: bool = False):
    """One ProtoNet episode: centroid prototypes from the embedded support,
    query logits as negative squared distances. Returns (loss, accuracy)."""
    s_emb, q_emb = embed_episode(model, episode, grad=grad)
    sy = torch.as_tensor(episode.support_y)
    qy = torch.as_tensor(episode.query_y)
    prototypes = _class_centroids(s_emb, sy, episode.spec.n_way)
    logits = squared_euclidean_logits(q_emb, prototypes)
    loss = F.cross_entropy(logits, qy)
    accuracy = (logits.argmax(dim=1) == qy).float().mean().item()
    return loss, accuracy


class ProtoNetState:
    algorithm = "protonet"
    fixed_n_way = None

    def __init__(self, model: CRNN):
        self.model = model

    @property
    def report_metadata(self):
        return {}

    def predict(self, episode: Episode) -> np.ndarray:
        self.model.eval()
        s_emb, q_emb = embed_episode(self.model, episode)
        sy = torch.as_tensor(episode.support_y)
        prototypes = _class_centroids(s_emb, sy, episode.spec.n_way)
        logits = squared_euclidean_logits(q_emb, prototypes)
        return logits.argmax(dim=1).numpy()

    def episode_accuracy(self, episode: Episode, rng=None) -> float:
        return float((self.predict(episode) == episode.query_y).mean())


def train_protonet(
    model: CRNN,
    sampler,
    *,
    steps: int,
    meta_batch: int = 4,
    lr: float = 1e-3,
    seed: int = 0,
    val_fn=None,
    val_every: int = 100,
    log: Optional[list] = None,
) -> ProtoNetState:
    """Episodic training with Adam at a fixed learning rate. If val_fn is
    given, the best-on-validation parameters are restored at the end."""
    optimizer = torch.optim.Adam(model.parameters(), lr=lr)
    rng = spawn_rng(seed, "train-protonet")
    best_val, best_state = -1.0, None
    model.train()
    for step in range(steps):
        optimizer.zero_grad()
        batch_loss = 0.0
        for _ in range(meta_batch):
            loss, _ = protonet_episode(model, sampler.sample(rng), grad=True)
            (loss / meta_batch).backward()
            batch_loss += loss.item() / meta_batch
        optimizer.step()
        if log is not None:
            log.append({"step": step, "loss": batch_loss})
        if val_fn is not None and (step + 1) % val_every == 0:
            val_acc = val_fn(ProtoNetState(model))
            if log is not None:
                log[-1]["val_accuracy"] = val_acc
            if val_acc > best_val:
                best_val = val_acc
                best_state = copy.deepcopy(model.state_dict())
            model.train()
    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    return ProtoNetState(model)


# ---------------------------------------------------------------------------
# FO-MAML and FO-Meta-Curvature
# ---------------------------------------------------------------------------

class MetaCurvatureTransform(nn.Module):
    """Learnable transform of inner-loop gradients.

    Every parameter tensor gets an elementwise scale (initialised to ones);
    2-D weight tensors additionally get a left matrix on the output
    dimension (initialised to identity), so a freshly built transform is an
    exact no-op.
    """

    def __init__(self, model: nn.Module):
        super().__init__()
        self.scales = nn.ParameterDict()
        self.row_transforms = nn.ParameterDict()
        self._key_of = {}
        for name, p in model.named_parameters():
            key = name.replace(".", "__")
            self._key_of[name] = key
            self.scales[key] = nn.Parameter(torch.ones_like(p))
            if p.ndim == 2:
                self.row_transforms[key] = nn.Parameter(torch.eye(p.shape[0], dtype=p.dtype))

    def apply(self, name: str, grad: torch.Tensor) -> torch.Tensor:
        key = self._key_of[name]
        if grad.shape != self.scales[key].shape:
            raise ValueError(
                f"gradient for {name} has shape {tuple(grad.shape)}, "
                f"transform expects {tuple(self.scales[key].shape)}"
            )
        g = self.scales[key] * grad
        if key in self.row_transforms:
            g = self.row_transforms[key] @ g
        return g


def _require_stateless(model: nn.Module):
    buffers = [n for n, _ in model.named_buffers()]
    if buffers:
        raise ValueError(
            "gradient-based learners need a buffer-free encoder "
            f"(bn_running_stats=False); found buffers {buffers}"
        )


def inner_adapt(
    model: nn.Module,
    params: Dict[str, torch.Tensor],
    support_x: torch.Tensor,
    support_y: torch.Tensor,
    inner_steps: int,
    inner_lr: float,
    transform: Optional[MetaCurvatureTransform] = None,
    keep_graph: bool = False,
) -> Dict[str, torch.Tensor]:
    """Plain gradient-descent adaptation on the support cross-entropy.

    First-order throughout: inner gradients are detached, so nothing
    differentiates through the inner loop. With keep_graph=True the update
    chain stays connected to the initial parameter leaves (and transform
    parameters), which is how the meta step obtains its gradients; with
    keep_graph=False every step is detached (per-task evaluation).
    """
    current = dict(params)
    names = list(current.keys())
    for step in range(inner_steps):
        logits = functional_call(model, current, (support_x,))
        loss = F.cross_entropy(logits, support_y)
        if not torch.isfinite(loss):
            raise RuntimeError(f"non-finite inner loss at adaptation step {step}")
        grads = torch.autograd.grad(loss, [current[n] for n in names])
        grads = [g.detach() for g in grads]
        if transform is not None:
            grads = [transform.apply(n, g) for n, g in zip(names, grads)]
        updated = {n: current[n] - inner_lr * g for n, g in zip(names, grads)}
        if not keep_graph:
            updated = {n: p.detach().requires_grad_(True) for n, p in updated.items()}
        current = updated
    return current


class GBMLState:
    """State of a gradient-based learner: encoder with an n_way classifier
    head (so the head size is fixed at training time), plus inner-loop
    hyper-parameters and, for Meta-Curvature, the gradient transforms."""

    def __init__(
        self,
        model: nn.Module,
        inner_steps: int = 5,
        inner_lr: float = 0.01,
        transform: Optional[MetaCurvatureTransform] = None,
        algorithm: str = "fo_maml",
        n_way: Optional[int] = None,
    ):
        _require_stateless(model)
        if algorithm not in ("fo_maml", "fo_meta_curvature"):
            raise ValueError(f"unknown gradient-based algorithm {algorithm!r}")
        if algorithm == "fo_meta_curvature" and transform is None:
            raise ValueError("fo_meta_curvature requires a gradient transform")
        self.model = model
        self.inner_steps = inner_steps
        self.inner_lr = inner_lr
        self.transform = transform
        self.algorithm = algorithm
        config = getattr(model, "config", None)
        self._fixed_n_way = n_way if n_way is not None else getattr(config, "head_dim", None)

    @property
    def fixed_n_way(self) -> Optional[int]:
        return self._fixed_n_way

    @property
    def report_metadata(self):
        meta = {"inner_steps": str(self.inner_steps), "inner_lr": repr(self.inner_lr)}
        if self.algorithm == "fo_meta_curvature":
            meta["mc_variant"] = "elementwise_scale_plus_output_dim_matrix"
        return meta

    def meta_parameters(self) -> List[torch.Tensor]:
        params = list(self.model.parameters())
        if self.transform is not None:
            params += list(self.transform.parameters())
        return params

    def predict(self, episode: Episode) -> np.ndarray:
        adapted = fomaml_adapt(
            self, _to_tensor(episode.support_x), torch.as_tensor(episode.support_y)
        )
        with torch.no_grad():
            logits = functional_call(self.model, adapted, (_to_tensor(episode.query_x),))
        return logits.argmax(dim=1).numpy()

    def episode_accuracy(self, episode: Episode, rng=None) -> float:
        if self.fixed_n_way is not None and episode.spec.n_way != self.fixed_n_way:
            raise ValueError(
                f"{self.algorithm} head is fixed at {self.fixed_n_way}-way, "
                f"episode is {episode.spec.n_way}-way"
            )
        return float((self.predict(episode) == episode.query_y).mean())


def fomaml_adapt(
    state: GBMLState,
    support_x: torch.Tensor,
    support_y: torch.Tensor,
    inner_steps: Optional[int] = None,
    inner_lr: Optional[float] = None,
) -> Dict[str, torch.Tensor]:
    """Adapt a copy of the meta-parameters to one task's support set; the
    original state is untouched."""
    params = {
        n: p.detach().clone().requires_grad_(True) for n, p in state.model.named_parameters()
    }
    return inner_adapt(
        state.model,
        params,
        support_x,
        support_y,
        state.inner_steps if inner_steps is None else inner_steps,
        state.inner_lr if inner_lr is None else inner_lr,
        transform=state.transform,
        keep_graph=False,
    )


def fomaml_meta_step(
    state: GBMLState, episodes: Sequence[Episode], optimizer: torch.optim.Optimizer
):
    """One outer-loop update on a batch of episodes.

    The meta-gradient of each episode is the query-loss gradient evaluated
    at the adapted parameters, applied to the initial parameters (and to the
    gradient transforms, when present); episode gradients are averaged.
    Returns (mean query loss, mean query accuracy).
    """
    if not episodes:
        raise ValueError("empty episode batch")
    model = state.model
    names = [n for n, _ in model.named_parameters()]
    transform_params = list(state.transform.parameters()) if state.transform else []
    accum = None
    total_loss = 0.0
    total_acc = 0.0
    for episode in episodes:
        sx = _to_tensor(episode.support_x)
        sy = torch.as_tensor(episode.support_y)
        qx = _to_tensor(episode.query_x)
        qy = torch.as_tensor(episode.query_y)
        init = {n: p.detach().clone().requires_grad_(True) for n, p in model.named_parameters()}
        adapted = inner_adapt(
            model, init, sx, sy, state.inner_steps, state.inner_lr,
            transform=state.transform, keep_graph=True,
        )
        q_logits = functional_call(model, adapted, (qx,))
        q_loss = F.cross_entropy(q_logits, qy)
        if not torch.isfinite(q_loss):
            raise RuntimeError("non-finite query loss in meta step")
        targets = [init[n] for n in names] + transform_params
        grads = torch.autograd.grad(q_loss, targets, allow_unused=True)
        grads = [
            torch.zeros_like(t) if g is None else g.detach() for t, g in zip(targets, grads)
        ]
        accum = grads if accum is None else [a + g for a, g in zip(accum, grads)]
        total_loss += q_loss.item()
        total_acc += (q_logits.argmax(dim=1) == qy).float().mean().item()
    scale = 1.0 / len(episodes)
    optimizer.zero_grad()
    meta_targets = [dict(model.named_parameters())[n] for n in names] + transform_params
    for target, grad in zip(meta_targets, accum):
        target.grad = grad * scale
    optimizer.step()
    return total_loss * scale, total_acc * scale


def train_gbml(
    model: CRNN,
    sampler,
    *,
    algorithm: str = "fo_maml",
    steps: int,
    meta_batch: int = 4,
    outer_lr: float = 1e-3,
    inner_steps: int = 5,
    inner_lr: float = 0.01,
    seed: int = 0,
    val_fn=None,
    val_every: int = 100,
    log: Optional[list] = None,
) -> GBMLState:
    """Meta-train FO-MAML or FO-Meta-Curvature. Adam with a fixed learning
    rate as the outer optimizer."""
    transform = MetaCurvatureTransform(model) if algorithm == "fo_meta_curvature" else None
    state = GBMLState(model, inner_steps, inner_lr, transform, algorithm)
    optimizer = torch.optim.Adam(state.meta_parameters(), lr=outer_lr)
    rng = spawn_rng(seed, "train-gbml", algorithm)
    best_val, best_snapshot = -1.0, None
    for step in range(steps):
        episodes = [sampler.sample(rng) for _ in range(meta_batch)]
        loss, acc = fomaml_meta_step(state, episodes, optimizer)
        if log is not None:
            log.append({"step": step, "loss": loss, "query_accuracy": acc})
        if val_fn is not None and (step + 1) % val_every == 0:
            val_acc = val_fn(state)
            if log is not None:
                log[-1]["val_accuracy"] = val_acc
            if val_acc > best_val:
                best_val = val_acc
                best_snapshot = {
                    "model": copy.deepcopy(model.state_dict()),
                    "transform": copy.deepcopy(transform.state_dict()) if transform else None,
                }
    if best_snapshot is not None:
        model.load_state_dict(best_snapshot["model"])
        if transform is not None and best_snapshot["transform"] is not None:
            transform.load_state_dict(best_snapshot["transform"])
    return state


# ---------------------------------------------------------------------------
# Conventional training (SimpleShot and Meta-Baseline backbone stage)
# ---------------------------------------------------------------------------

def conventional_train(
    encoder: nn.Module,
    head: nn.Linear,
    inputs: np.ndarray,
    labels: np.ndarray,
    *,
    epochs: int,
    batch_size: int = 64,
    lr: float = 1e-3,
    class_weights: Optional[np.ndarray] = None,
    seed: int = 0,
    log: Optional[list] = None,
) -> np.ndarray:
    """Standard mini-batch cross-entropy training of encoder + linear head
    over all training classes, optionally with per-class loss weights.

    Returns the train-feature mean (the mean encoder output over all
    training examples, computed after training in eval mode).
    """
    labels = np.asarray(labels, dtype=np.int64)
    if head.out_features <= labels.max():
        raise ValueError(
            f"head has {head.out_features} outputs but labels reach {labels.max()}"
        )
    weight = None
    if class_weights is not None:
        weight = torch.as_tensor(np.asarray(class_weights), dtype=torch.float32)
        if weight.numel() != head.out_features:
            raise ValueError("class_weights length must equal the number of classes")
    optimizer = torch.optim.Adam(
        list(encoder.parameters()) + list(head.parameters()), lr=lr
    )
    n = len(inputs)
    encoder.train()
    head.train()
    for epoch in range(epochs):
        order = spawn_rng(seed, "conventional-epoch", epoch).permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            x = _to_tensor(inputs[idx])
            y = torch.as_tensor(labels[idx])
            optimizer.zero_grad()
            loss = F.cross_entropy(head(encoder(x)), y, weight=weight)
            if not torch.isfinite(loss):
                raise RuntimeError(f"non-finite loss at epoch {epoch}")
            loss.backward()
            optimizer.step()
            epoch_loss += loss.item() * len(idx)
        if log is not None:
            log.append({"epoch": epoch, "loss": epoch_loss / n})
    encoder.eval()
    head.eval()
    return compute_feature_mean(encoder, inputs)


def compute_feature_mean(encoder: nn.Module, inputs: np.ndarray, batch_size: int = 128):
    """Mean encoder output over a set of examples (eval mode, fixed batching
    for determinism)."""
    encoder.eval()
    total = None
    with torch.no_grad():
        for start in range(0, len(inputs), batch_size):
            feats = encoder(_to_tensor(inputs[start : start + batch_size]))
            chunk = feats.sum(dim=0)
            total = chunk if total is None else total + chunk
    return (total / len(inputs)).numpy().astype(np.float64)


# ---------------------------------------------------------------------------
# SimpleShot
# ---------------------------------------------------------------------------

class SimpleShotState:
    algorithm = "simpleshot"
    fixed_n_way = None

    def __init__(self, encoder: nn.Module, train_mean: np.ndarray, variant: str = "CL2N"):
        if variant not in ("CL2N", "L2N", "UN"):
            raise ValueError(f"unknown SimpleShot variant {variant!r}")
        self.encoder = encoder
        self.train_mean = np.asarray(train_mean, dtype=np.float64)
        self.variant = variant

    @property
    def report_metadata(self):
        return {"simpleshot_variant": self.variant}

    def _features(self, episode: Episode):
        self.encoder.eval()
        s_emb, q_emb = embed_episode(self.encoder, episode)
        return s_emb.numpy().astype(np.float64), q_emb.numpy().astype(np.float64)

    def predict(self, episode: Episode) -> np.ndarray:
        s_f, q_f = self._features(episode)
        if self.variant == "CL2N":
            s_f = cl2n_transform(s_f, self.train_mean)
            q_f = cl2n_transform(q_f, self.train_mean)
        elif self.variant == "L2N":
            zero = np.zeros(s_f.shape[1])
            s_f = cl2n_transform(s_f, zero)
            q_f = cl2n_transform(q_f, zero)
        return nearest_centroid_predict(s_f, episode.support_y, q_f)

    def episode_accuracy(self, episode: Episode, rng=None) -> float:
        return float((self.predict(episode) == episode.query_y).mean())


def simpleshot_classify(state: SimpleShotState, episode: Episode, variant: Optional[str] = None):
    """Accuracy of SimpleShot on one episode; no parameter updates."""
    if variant is not None and variant != state.variant:
        state = SimpleShotState(state.encoder, state.train_mean, variant)
    return state.episode_accuracy(episode)


# ---------------------------------------------------------------------------
# Meta-Baseline
# ---------------------------------------------------------------------------

class MetaBaselineState:
    algorithm = "meta_baseline"
    fixed_n_way = None

    def __init__(self, encoder: nn.Module, scale: float = 10.0):
        self.encoder = encoder
        self.scale = nn.Parameter(torch.tensor(float(scale)))
        self.stopping_rule = "untrained"

    @property
    def report_metadata(self):
        return {"finetune_stopping": self.stopping_rule}

    def predict(self, episode: Episode) -> np.ndarray:
        self.encoder.eval()
        with torch.no_grad():
            s_emb, q_emb = embed_episode(self.encoder, episode)
            sy = torch.as_tensor(episode.support_y)
            centroids = _class_centroids(s_emb, sy, episode.spec.n_way)
            logits = cosine_logits(q_emb, centroids, self.scale)
        return logits.argmax(dim=1).numpy()

    def episode_accuracy(self, episode: Episode, rng=None) -> float:
        return float((self.predict(episode) == episode.query_y).mean())


def metabaseline_episode(state: MetaBaselineState, episode: Episode, grad: bool = False):
    """One Meta-Baseline episode: cosine logits against support centroids,
    scaled by the learnable temperature. Returns (loss, accuracy)."""
    s_emb, q_emb = embed_episode(state.encoder, episode, grad=grad)
    sy = torch.as_tensor(episode.support_y)
    qy = torch.as_tensor(episode.query_y)
    centroids = _class_centroids(s_emb, sy, episode.spec.n_way)
    logits = cosine_logits(q_emb, centroids, state.scale)
    loss = F.cross_entropy(logits, qy)
    accuracy = (logits.argmax(dim=1) == qy).float().mean().item()
    return loss, accuracy


def metabaseline_finetune(
    state: MetaBaselineState,
    sampler,
    *,
    steps: int,
    meta_batch: int = 4,
    lr: float = 1e-3,
    seed: int = 0,
    val_fn=None,
    val_every: int = 100,
    patience: Optional[int] = None,
    log: Optional[list] = None,
) -> MetaBaselineState:
    """Episodic fine-tuning of the conventionally trained encoder plus the
    logit scale. Stops early when validation accuracy has not improved for
    ``patience`` consecutive checks (when a validation hook is given)."""
    optimizer = torch.optim.Adam(list(state.encoder.parameters()) + [state.scale], lr=lr)
    rng = spawn_rng(seed, "train-meta-baseline")
    if val_fn is not None and patience is not None:
        state.stopping_rule = f"val_plateau(patience={patience})"
    else:
        state.stopping_rule = f"fixed_steps({steps})"
    best_val, best_snapshot, stale = -1.0, None, 0
    state.encoder.train()
    for step in range(steps):
        optimizer.zero_grad()
        batch_loss = 0.0
        for _ in range(meta_batch):
            loss, _ = metabaseline_episode(state, sampler.sample(rng), grad=True)
            (loss / meta_batch).backward()
            batch_loss += loss.item() / meta_batch
        optimizer.step()
        if log is not None:
            log.append({"step": step, "loss": batch_loss, "scale": state.scale.item()})
        if val_fn is not None and (step + 1) % val_every == 0:
            val_acc = val_fn(state)
            if log is not None:
                log[-1]["val_accuracy"] = val_acc
            if val_acc > best_val:
                best_val, stale = val_acc, 0
                best_snapshot = {
                    "encoder": copy.deepcopy(state.encoder.state_dict()),
                    "scale": state.scale.item(),
                }
            else:
                stale += 1
                if patience is not None and stale >= patience:
                    break
            state.encoder.train()
    if best_snapshot is not None:
        state.encoder.load_state_dict(best_snapshot["encoder"])
        with torch.no_grad():
            state.scale.copy_(torch.tensor(best_snapshot["scale"]))
    state.encoder.eval()
    return state


# ---------------------------------------------------------------------------
# Checkpoint wiring
# ---------------------------------------------------------------------------

def save_learner(path, state, seed: int, step: int) -> None:
    """Persist any learner state as a checkpoint with algorithm extras."""
    if isinstance(state, (ProtoNetState,)):
        save_checkpoint(path, state.model, seed, step, state.algorithm, {})
    elif isinstance(state, GBMLState):
        extras = {"inner_steps": state.inner_steps, "inner_lr": state.inner_lr}
        if state.transform is not None:
            extras["transform_state"] = state.transform.state_dict()
        save_checkpoint(path, state.model, seed, step, state.algorithm, extras)
    elif isinstance(state, SimpleShotState):
        save_checkpoint(
            path, state.encoder, seed, step, state.algorithm,
            {"train_mean": torch.as_tensor(state.train_mean), "variant": state.variant},
        )
    elif isinstance(state, MetaBaselineState):
        save_checkpoint(
            path, state.encoder, seed, step, state.algorithm, {"scale": state.scale.item()}
        )
    else:
        raise TypeError(f"cannot checkpoint {type(state).__name__}")


def load_learner(path):
    """Rebuild a learner state from a checkpoint written by save_learner."""
    payload = load_checkpoint(path)
    algorithm = payload["algorithm"]
    model = payload["model"]
    extras = payload["extras"]
    if algorithm == "protonet":
        return ProtoNetState(model)
    if algorithm in ("fo_maml", "fo_meta_curvature"):
        transform = None
        if algorithm == "fo_meta_curvature":
            transform = MetaCurvatureTransform(model)
            transform.load_state_dict(extras["transform_state"])
        return GBMLState(
            model,
            inner_steps=int(extras["inner_steps"]),
            inner_lr=float(extras["inner_lr"]),
            transform=transform,
            algorithm=algorithm,
        )
    if algorithm == "simpleshot":
        return SimpleShotState(model, extras["train_mean"].numpy(), extras["variant"])
    if algorithm == "meta_baseline":
        return MetaBaselineState(model, extras["scale"])
    raise ValueError(f"unknown algorithm in checkpoint: {algorithm!r}")
