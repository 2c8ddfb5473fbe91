"""PIT binary cross-entropy and the chunked training loop."""

from __future__ import annotations

import copy
import itertools
import logging
import math
from dataclasses import dataclass, fields
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .corpus import LabelMatrix, SapSequence
from .features import FeatureSequence
from .model import CorrectionModel, ModelConfig, build_model

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 5
    learning_rate: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    chunk_frames: int = 500
    batch_size: int = 8
    seed: int = 0
    max_steps: int | None = None
    grad_clip: float | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.chunk_frames < 1:
            raise ValueError(f"chunk_frames must be >= 1, got {self.chunk_frames}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_steps is not None and self.max_steps < 0:
            raise ValueError("max_steps must be non-negative")

    @classmethod
    def from_mapping(cls, values: dict) -> "TrainConfig":
        """Build from string values (config file / CLI), ignoring unknown keys."""
        kwargs = {}
        for f in fields(cls):
            if f.name not in values or values[f.name] is None:
                continue
            raw = values[f.name]
            if f.name in ("max_steps", "grad_clip") and str(raw).lower() in ("", "none"):
                kwargs[f.name] = None
            elif f.name in ("epochs", "chunk_frames", "batch_size", "seed", "max_steps"):
                kwargs[f.name] = int(raw)
            else:
                kwargs[f.name] = float(raw)
        return cls(**kwargs)


@dataclass(frozen=True)
class LossReport:
    loss: float
    best_perm: tuple[int, ...]


def pit_bce(logits, labels) -> LossReport:
    """Permutation-invariant mean BCE between logits (T, C) and binary labels (T, C).

    ``best_perm[c]`` is the output column matched with label column ``c``.
    """
    if isinstance(labels, LabelMatrix):
        labels = labels.values
    if isinstance(logits, SapSequence):
        logits = logits.values
    z = torch.as_tensor(np.ascontiguousarray(logits, dtype=np.float64))
    y = torch.as_tensor(np.ascontiguousarray(labels, dtype=np.float64))
    if z.shape != y.shape or z.dim() != 2:
        raise ValueError(f"shape mismatch: logits {tuple(z.shape)} vs labels {tuple(y.shape)}")
    best = None
    for perm in itertools.permutations(range(z.shape[1])):
        loss = F.binary_cross_entropy_with_logits(z[:, list(perm)], y).item()
        if best is None or loss < best.loss:
            best = LossReport(loss, perm)
    return best


def pit_bce_batch(logits: torch.Tensor, labels: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
    """Differentiable PIT-BCE for a padded batch.

    ``logits`` and ``labels`` are (B, T, C); ``mask`` (B, T) is True on valid
    frames.  Each sequence takes its own best permutation; the result is the
    mean over sequences.
    """
    b, t, c = logits.shape
    if mask is None:
        mask = torch.ones(b, t, dtype=torch.bool, device=logits.device)
    weight = mask.to(logits.dtype).unsqueeze(-1)
    denom = weight.sum(dim=(1, 2)) * c
    per_perm = []
    for perm in itertools.permutations(range(c)):
        cell = F.binary_cross_entropy_with_logits(logits[..., list(perm)], labels, reduction="none")
        per_perm.append((cell * weight).sum(dim=(1, 2)) / denom)
    return torch.stack(per_perm, dim=1).min(dim=1).values.mean()


# ---------------------------------------------------------------------------
# data


Example = tuple[FeatureSequence, SapSequence, LabelMatrix]


def make_chunks(corpus: Sequence[Example], chunk_frames: int) -> list[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    chunks = []
    for i, (feats, sap, labels) in enumerate(corpus):
        x = np.asarray(feats.values if hasattr(feats, "values") else feats, dtype=np.float32)
        z = np.asarray(sap.values, dtype=np.float32)
        y = np.asarray(labels.values, dtype=np.float32)
        if not (len(x) == len(z) == len(y)):
            raise ValueError(f"recording {i}: misaligned lengths {len(x)}/{len(z)}/{len(y)}")
        for start in range(0, len(x), chunk_frames):
            stop = start + chunk_frames
            chunks.append((x[start:stop], z[start:stop], y[start:stop]))
    return chunks


def collate(chunks) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
    """Zero-pad chunks to a batch; returns features, SAP, labels and a validity mask."""
    t = max(len(c[0]) for c in chunks)
    b = len(chunks)
    x = torch.zeros(b, t, chunks[0][0].shape[1])
    z = torch.zeros(b, t, chunks[0][1].shape[1])
    y = torch.zeros(b, t, chunks[0][2].shape[1])
    mask = torch.zeros(b, t, dtype=torch.bool)
    for i, (xi, zi, yi) in enumerate(chunks):
        n = len(xi)
        x[i, :n] = torch.from_numpy(xi)
        z[i, :n] = torch.from_numpy(zi)
        y[i, :n] = torch.from_numpy(yi)
        mask[i, :n] = True
    return x, z, y, mask


# ---------------------------------------------------------------------------
# loops


def train(
    corpus: Sequence[Example],
    cfg: TrainConfig = TrainConfig(),
    *,
    model_config: ModelConfig = ModelConfig(),
    init: CorrectionModel | None = None,
    history: list[float] | None = None,
    on_epoch: Callable[[int, float], None] | None = None,
) -> list[CorrectionModel]:
    """Train a correction model and return one checkpoint per epoch.

    With ``cfg.max_steps`` set, training stops after that many optimizer
    steps (ending any partial epoch with a checkpoint) instead of after
    ``cfg.epochs`` epochs.  Per-step losses are appended to ``history``.
    """
    if not corpus:
        raise ValueError("empty training corpus")
    chunks = make_chunks(corpus, cfg.chunk_frames)
    model = copy.deepcopy(init) if init is not None else build_model(model_config, cfg.seed)
    if cfg.max_steps == 0:
        return [model]

    rng = np.random.default_rng(cfg.seed)
    params = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.Adam(params, lr=cfg.learning_rate, betas=(cfg.beta1, cfg.beta2))
    checkpoints: list[CorrectionModel] = []
    step = 0
    epoch = 0
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed)
        model.train()
        while True:
            order = rng.permutation(len(chunks))
            losses = []
            for start in range(0, len(order), cfg.batch_size):
                x, z, y, mask = collate([chunks[i] for i in order[start : start + cfg.batch_size]])
                loss = pit_bce_batch(model(x, z, ~mask), y, mask)
                if not torch.isfinite(loss):
                    raise TrainingError(f"non-finite loss at epoch {epoch + 1}, step {step + 1}")
                opt.zero_grad()
                loss.backward()
                if cfg.grad_clip is not None:
                    torch.nn.utils.clip_grad_norm_(params, cfg.grad_clip)
                opt.step()
                step += 1
                losses.append(loss.item())
                if history is not None:
                    history.append(losses[-1])
                if cfg.max_steps is not None and step >= cfg.max_steps:
                    break
            epoch += 1
            mean_loss = float(np.mean(losses))
            log.info("epoch %d: %d steps, mean loss %.5f", epoch, len(losses), mean_loss)
            if on_epoch is not None:
                on_epoch(epoch, mean_loss)
            snapshot = copy.deepcopy(model)
            snapshot.eval()
            checkpoints.append(snapshot)
            if cfg.max_steps is not None:
                if step >= cfg.max_steps:
                    break
            elif epoch >= cfg.epochs:
                break
    model.eval()
    return checkpoints


def fine_tune(model: CorrectionModel, corpus: Sequence[Example], cfg: TrainConfig = TrainConfig(), **kwargs) -> list[CorrectionModel]:
    """Continue training from ``model``; the input model is left untouched."""
    return train(corpus, cfg, init=model, model_config=model.config, **kwargs)


@torch.no_grad()
def evaluate_loss(model: CorrectionModel, corpus: Sequence[Example]) -> float:
    """Frame-weighted PIT-BCE of ``model`` over whole recordings (eval mode)."""
    was_training = model.training
    model.eval()
    total, frames = 0.0, 0
    for feats, sap, labels in corpus:
        x = torch.as_tensor(np.asarray(feats.values, dtype=np.float32)).unsqueeze(0)
        z = torch.as_tensor(sap.values, dtype=torch.float32).unsqueeze(0)
        out = model(x, z)[0].double().numpy()
        total += pit_bce(out, labels.values).loss * len(labels)
        frames += len(labels)
    model.train(was_training)
    if frames == 0:
        return math.nan
    return total / frames
