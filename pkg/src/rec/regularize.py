"""Fisher-diagonal estimation and the consolidation penalty family.

The combined loss is CE + quadratic Fisher anchoring + smoothed l2,1 coupling
of current/previous weights + smoothed l1 sparsity. With an expansion mask the
anchored terms skip new coordinates and the l1 term applies only to them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .netcore import Batch, DenseNet, backward, forward, loss_ce, sgd_step


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class FisherDiag:
    values: np.ndarray  # nonnegative, aligned with a flat view
    sample_count: int

    def __post_init__(self):
        if np.any(self.values < 0):
            raise ValueError("Fisher entries must be nonnegative")


@dataclass
class Anchor:
    params: np.ndarray  # frozen previous-task parameters


@dataclass(frozen=True)
class PenaltyConfig:
    lambda_ewc: float = 2.0
    lambda_21: float = 1e-4
    lambda_1: float = 1e-3
    epsilon: float = 1e-8

    def __post_init__(self):
        if min(self.lambda_ewc, self.lambda_21, self.lambda_1) < 0:
            raise ValueError("lambdas must be nonnegative")
        if not (0 < self.epsilon <= 1e-4):
            raise ValueError("epsilon must be in (0, 1e-4]")


def estimate_fisher(net: DenseNet, dataset: Dataset, max_samples: int, seed: int) -> FisherDiag:
    """Empirical diagonal Fisher: mean squared gradient of log p(true label)."""
    if len(dataset) == 0:
        raise ValueError("cannot estimate Fisher on an empty dataset")
    n = min(max_samples, len(dataset))
    idx = np.random.default_rng(seed).choice(len(dataset), size=n, replace=False)
    acc = np.zeros(net.param_count())
    for i in idx:
        batch = Batch(dataset.inputs[i:i + 1], dataset.labels[i:i + 1])
        logits, cache = forward(net, batch)
        shifted = logits - logits.max(axis=1, keepdims=True)
        probs = np.exp(shifted)
        probs /= probs.sum(axis=1, keepdims=True)
        # d log p(y) / dlogits = onehot(y) - softmax
        dlogits = -probs
        dlogits[0, batch.labels[0]] += 1.0
        g = backward(net, cache, dlogits)
        acc += g * g
    return FisherDiag(acc / n, n)


def ewc_term(params: np.ndarray, anchor: Anchor, fisher: FisherDiag,
             lambda_ewc: float) -> tuple[float, np.ndarray]:
    """(lambda/2) * sum_i F_i (theta_i - anchor_i)^2 and its gradient."""
    if params.shape != anchor.params.shape or params.shape != fisher.values.shape:
        raise ValueError("params/anchor/fisher lengths differ")
    diff = params - anchor.params
    value = 0.5 * lambda_ewc * float(np.sum(fisher.values * diff * diff))
    return value, lambda_ewc * fisher.values * diff


def l21_term(params: np.ndarray, anchor: Anchor, lambda_21: float,
             epsilon: float) -> tuple[float, np.ndarray]:
    """Row-wise l2,1 coupling: sum_i sqrt(theta_i^2 + anchor_i^2), smoothed.

    Groups are coordinate pairs (current, previous); the anchor is frozen so
    no gradient flows to it.
    """
    if params.shape != anchor.params.shape:
        raise ValueError("params/anchor lengths differ")
    root = np.sqrt(params ** 2 + anchor.params ** 2 + epsilon ** 2)
    return lambda_21 * float(np.sum(root)), lambda_21 * params / root


def l1_term(params: np.ndarray, mask: np.ndarray | None, lambda_1: float,
            epsilon: float) -> tuple[float, np.ndarray]:
    """Smoothed l1 over the masked coordinates (all coordinates if mask is None)."""
    if mask is not None and mask.shape != params.shape:
        raise ValueError("mask length differs from params")
    root = np.sqrt(params ** 2 + epsilon ** 2)
    grad = lambda_1 * params / root
    if mask is None:
        return lambda_1 * float(np.sum(root)), grad
    grad = np.where(mask, grad, 0.0)
    return lambda_1 * float(np.sum(root[mask])), grad


def mwc_loss(net: DenseNet, batch: Batch, anchor: Anchor | None, fisher: FisherDiag | None,
             cfg: PenaltyConfig, mask: np.ndarray | None = None) -> tuple[float, np.ndarray]:
    """Full consolidation objective: value and flat gradient.

    anchor/fisher absent disables every penalty (first-task objective). With a
    mask, anchor and fisher must already be aligned to the current flat view
    (zeros at masked positions; see transform.align_reference).
    """
    logits, cache = forward(net, batch)
    value, dlogits = loss_ce(logits, batch.labels)
    grads = backward(net, cache, dlogits)
    if anchor is None:
        return value, grads

    assert fisher is not None
    params = net.get_flat()
    if mask is None:
        old_anchor, old_fisher = anchor, fisher
        v, g = ewc_term(params, old_anchor, old_fisher, cfg.lambda_ewc)
        value += v
        grads += g
        v, g = l21_term(params, old_anchor, cfg.lambda_21, cfg.epsilon)
        value += v
        grads += g
        v, g = l1_term(params, None, cfg.lambda_1, cfg.epsilon)
        value += v
        grads += g
        return value, grads

    if mask.shape != params.shape:
        raise ValueError("mask length differs from net parameter count")
    old = ~mask
    # Anchored terms on surviving coordinates only; aligned vectors carry zeros
    # at masked positions so restricting by `old` is exact.
    v, g = ewc_term(params[old], Anchor(anchor.params[old]),
                    FisherDiag(fisher.values[old], fisher.sample_count), cfg.lambda_ewc)
    value += v
    grads[old] += g
    v, g = l21_term(params[old], Anchor(anchor.params[old]), cfg.lambda_21, cfg.epsilon)
    value += v
    grads[old] += g
    v, g = l1_term(params, mask, cfg.lambda_1, cfg.epsilon)
    value += v
    grads += g
    return value, grads


def train_task(net: DenseNet, train_set: Dataset, anchor: Anchor | None,
               fisher: FisherDiag | None, cfg: PenaltyConfig, mask: np.ndarray | None,
               epochs: int, batch_size: int, lr: float, seed: int,
               momentum: float = 0.0) -> DenseNet:
    """Minibatch SGD over mwc_loss; seeded shuffling; mutates and returns net."""
    rng = np.random.default_rng(seed)
    velocity = None
    n = len(train_set)
    for epoch in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            batch = Batch(train_set.inputs[idx], train_set.labels[idx])
            value, grads = mwc_loss(net, batch, anchor, fisher, cfg, mask)
            if not np.isfinite(value) or not np.all(np.isfinite(grads)):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, batch offset {start}: value={value}")
            velocity = sgd_step(net, grads, lr, momentum, velocity)
    return net
