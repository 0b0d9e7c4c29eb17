"""Pre-training losses over partition features, and their combinations.

Three signals: which modality a uni feature came from (modality
classification), whether a feature is uni or paired (binary
discrimination), and how well the decoder reconstructs the original
representation. The per-stage totals are plain weighted sums; every loss
is differentiable end to end.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

__all__ = [
    "LossReport",
    "pool_sequence",
    "ufc_loss",
    "pfc_loss",
    "upr_loss",
    "pretrain_loss",
    "joint_loss",
]


@dataclass
class LossReport:
    """Per-epoch loss row; component values are already summed over
    partition iterations, so `total` reproduces the stage arithmetic."""

    epoch: int
    stage: str  # "pretrain" | "joint"
    ufc: float
    pfc: float
    upr: float
    task: float | None
    total: float

    def check(self, alpha: float, beta: float, tol: float = 1e-9):
        parts = self.ufc + self.pfc + self.upr
        expected = parts if self.stage == "pretrain" else alpha * parts + beta * self.task
        if abs(expected - self.total) > tol:
            raise ValueError(f"loss row inconsistent: {expected} != {self.total}")


def pool_sequence(feat: Tensor) -> Tensor:
    """(B, S, D) -> (B, D) by mean over sequence positions."""
    return T.mean_axis(feat, 1)


def ufc_loss(uni_features: list, head_w: Tensor, head_b: Tensor, modality_ids=None) -> Tensor:
    """Cross-entropy for predicting the source modality of each uni feature.

    Features are pooled over the sequence axis and pushed through one shared
    linear head; the mean runs over every (sample, modality) instance.
    """
    n_mod = len(uni_features)
    if n_mod < 2:
        raise ValueError("modality classification needs at least 2 modalities")
    if modality_ids is None:
        modality_ids = list(range(n_mod))
    n_classes = head_w.shape[1]
    total = None
    for feat, mod_id in zip(uni_features, modality_ids):
        logits = T.linear(pool_sequence(feat), head_w, head_b)
        onehot = np.zeros((feat.shape[0], n_classes))
        onehot[:, mod_id] = 1.0
        ce = T.cross_entropy_logits(logits, onehot)
        total = ce if total is None else T.add(total, ce)
    return T.scale(total, 1.0 / n_mod)


def pfc_loss(uni_features: list, paired_features: list, head_w: Tensor, head_b: Tensor) -> Tensor:
    """Binary cross-entropy separating uni from paired features.

    Uni instances carry class 0, paired instances class 1; one shared linear
    head scores the pooled features of every modality.
    """
    if len(uni_features) != len(paired_features):
        raise ValueError("need matching uni and paired feature lists")
    groups = [(f, 0) for f in uni_features] + [(f, 1) for f in paired_features]
    total = None
    for feat, label in groups:
        logits = T.linear(pool_sequence(feat), head_w, head_b)
        onehot = np.zeros((feat.shape[0], 2))
        onehot[:, label] = 1.0
        ce = T.cross_entropy_logits(logits, onehot)
        total = ce if total is None else T.add(total, ce)
    return T.scale(total, 1.0 / len(groups))


def upr_loss(originals: list, reconstructions: list, d_h: int) -> Tensor:
    """Reconstruction error: summed squared difference over sequence and
    feature axes, divided by the feature width and the batch size."""
    if d_h <= 0:
        raise ValueError("feature width d_h must be positive")
    if len(originals) != len(reconstructions):
        raise ValueError("need one reconstruction per original")
    batch = originals[0].shape[0]
    total = None
    for orig, recon in zip(originals, reconstructions):
        err = T.sum_squared_error(orig, recon)
        total = err if total is None else T.add(total, err)
    return T.scale(total, 1.0 / (d_h * batch))


def pretrain_loss(iteration_triples: list, n_iters: int) -> Tensor:
    """Sum of (ufc + pfc + upr) over partition iterations."""
    if len(iteration_triples) != n_iters:
        raise ValueError(f"expected {n_iters} iteration triples, got {len(iteration_triples)}")
    total = None
    for ufc, pfc, upr in iteration_triples:
        step = T.add(T.add(ufc, pfc), upr)
        total = step if total is None else T.add(total, step)
    return total


def joint_loss(l_pretrain: Tensor, l_task: Tensor, alpha: float, beta: float) -> Tensor:
    """Weighted objective for the joint stage: alpha * pretrain + beta * task."""
    if alpha < 0 or beta < 0:
        raise ValueError("loss weights must be non-negative")
    return T.add(T.scale(l_pretrain, alpha), T.scale(l_task, beta))
