"""Downstream fusion: two feature streams, one prediction head.

Uni features from all modalities are concatenated and reduced by a
feed-forward layer, likewise the paired features; each stream then runs
through its own (unmasked) transformer block. The fused representation is
the concatenation of the two streams passed through a final feed-forward,
mean-pooled over sequence positions.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .learners import _bias, _linear, _linear_init, init_attention_block, masked_attention_block
from .tensor import Tensor

__all__ = ["init_fusion", "fuse", "predict", "task_loss"]


def init_fusion(d_model: int, n_modalities: int, n_out: int, rng: np.random.Generator) -> dict:
    """Stream reducers, per-stream transformer blocks, fusion layer, and a
    zero-initialized prediction head (uniform logits at step zero)."""
    return {
        "uni_w": _linear_init(rng, n_modalities * d_model, d_model),
        "uni_b": _bias(d_model),
        "paired_w": _linear_init(rng, n_modalities * d_model, d_model),
        "paired_b": _bias(d_model),
        "uni_block": init_attention_block(d_model, d_model, rng),
        "paired_block": init_attention_block(d_model, d_model, rng),
        "fuse_w": _linear_init(rng, 2 * d_model, d_model),
        "fuse_b": _bias(d_model),
        "head_w": Tensor(np.zeros((d_model, n_out)), requires_grad=True),
        "head_b": Tensor(np.zeros(n_out), requires_grad=True),
    }


def _stream(features: list, w: Tensor, b: Tensor, block: dict, n_heads: int) -> Tensor:
    reduced = T.gelu(_linear(T.concat_last(features), w, b))
    return masked_attention_block(reduced, None, block, n_heads)


def fuse(uni_features: list, paired_features: list, params: dict, n_heads: int) -> Tensor:
    """Fuse per-modality partition features into a (B, D) representation."""
    if not uni_features or not paired_features:
        raise ValueError("fusion needs at least one modality per stream")
    u_f = _stream(uni_features, params["uni_w"], params["uni_b"], params["uni_block"], n_heads)
    p_f = _stream(paired_features, params["paired_w"], params["paired_b"], params["paired_block"], n_heads)
    fused = _linear(T.concat_last([u_f, p_f]), params["fuse_w"], params["fuse_b"])
    return T.mean_axis(fused, 1)


def predict(fused: Tensor, params: dict, task: str) -> Tensor:
    """Class logits (B, n_classes) for classification, (B, 1) for regression."""
    if task not in ("classification", "regression"):
        raise ValueError(f"unknown task kind: {task!r}")
    return _linear(fused, params["head_w"], params["head_b"])


def task_loss(pred: Tensor, labels: np.ndarray, task: str) -> Tensor:
    """Cross-entropy against integer class labels, or mean squared error."""
    labels = np.asarray(labels)
    if pred.shape[0] != labels.shape[0]:
        raise ValueError("batch sizes of predictions and labels disagree")
    if task == "classification":
        n_classes = pred.shape[1]
        if labels.min() < 0 or labels.max() >= n_classes:
            raise ValueError("class label out of range")
        onehot = np.eye(n_classes)[labels.astype(int)]
        return T.cross_entropy_logits(pred, onehot)
    if task == "regression":
        target = Tensor(labels.reshape(pred.shape).astype(np.float64))
        return T.scale(T.sum_squared_error(pred, target), 1.0 / labels.shape[0])
    raise ValueError(f"unknown task kind: {task!r}")
