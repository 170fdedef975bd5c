"""Logit-matching knowledge distillation: compress an expanded child back to
the initial architecture (l2 loss on teacher logits, then joint hard+soft)."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .netcore import Arch, Batch, DenseNet, backward, forward, init_network, loss_ce, predict_logits, sgd_step
from .regularize import TrainingDiverged


@dataclass
class SoftTargets:
    logits: np.ndarray  # [n, K], row-aligned with the dataset

    def __post_init__(self):
        if not np.all(np.isfinite(self.logits)):
            raise ValueError("soft targets must be finite")


def collect_soft_targets(teacher: DenseNet, dataset: Dataset) -> SoftTargets:
    if dataset.input_dim != teacher.arch.input_dim:
        raise ValueError("teacher input dim does not match dataset")
    return SoftTargets(predict_logits(teacher, dataset.inputs))


def kd_loss(student_logits: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared l2 distance between student and teacher logits."""
    if student_logits.shape != targets.shape:
        raise ValueError("logit shapes differ")
    n = student_logits.shape[0]
    diff = student_logits - targets
    return float(np.sum(diff * diff) / n), 2.0 * diff / n


@dataclass(frozen=True)
class CompressConfig:
    epochs: int = 20
    batch_size: int = 256
    lr: float = 0.005
    momentum: float = 0.0
    kd_warmup_frac: float = 0.25  # KD-only phase share of the epoch budget


def compress(teacher: DenseNet, initial_arch: Arch, dataset: Dataset,
             cfg: CompressConfig, seed: int,
             init_net: DenseNet | None = None) -> DenseNet:
    """Train a student of the initial architecture against the teacher.

    Phase 1 minimizes the KD loss alone; phase 2 adds the ground-truth CE term
    with unit weighting. The student starts from `init_net` when given (warm
    start from the carried model) and from a fresh init otherwise. The
    student's parameter count never exceeds the initial network's.
    """
    targets = collect_soft_targets(teacher, dataset).logits
    if init_net is not None:
        if init_net.arch != initial_arch:
            raise ValueError("warm-start network does not match the target architecture")
        student = init_net.copy()
    else:
        student = init_network(initial_arch, seed)
    rng = np.random.default_rng(seed)
    velocity = None
    warm = int(round(cfg.kd_warmup_frac * cfg.epochs))
    n = len(dataset)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            batch = Batch(dataset.inputs[idx], dataset.labels[idx])
            logits, cache = forward(student, batch)
            kd_v, kd_d = kd_loss(logits, targets[idx])
            if epoch < warm:
                value, dlogits = kd_v, kd_d
            else:
                ce_v, ce_d = loss_ce(logits, batch.labels)
                value, dlogits = ce_v + kd_v, ce_d + kd_d
            if not np.isfinite(value):
                raise TrainingDiverged(f"non-finite compression loss at epoch {epoch}")
            grads = backward(student, cache, dlogits)
            velocity = sgd_step(student, grads, cfg.lr, cfg.momentum, velocity)
    return student


def teacher_fingerprint(teacher: DenseNet) -> str:
    """Content hash for caching soft targets against a specific teacher."""
    h = hashlib.sha256()
    h.update(repr(teacher.arch).encode())
    h.update(teacher.get_flat().tobytes())
    return h.hexdigest()
