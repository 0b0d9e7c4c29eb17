"""Transformer learners restricted to one feature partition, plus the decoder.

Masking is multiplicative on feature channels: the block input and output
are gated, so channels outside a hard gate's support stay exactly zero
while soft gates merely attenuate. An optional literal mode additionally
offsets masked input channels by the additive padding constant, matching
the mask matrices used in reports.

No positional encoding anywhere: partitions are channel-structured, so the
blocks are permutation-equivariant over sequence positions.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .partitioner import MASK_FILL, HardGate
from .tensor import Tensor

__all__ = [
    "init_attention_block",
    "init_learner",
    "init_decoder",
    "attention_core",
    "masked_attention_block",
    "run_learner",
    "decode",
    "block_param_count",
]

FF_MULT = 4  # feed-forward expands D -> 4D -> D


def _linear_init(rng, fan_in, fan_out):
    return Tensor(rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out)), requires_grad=True)


def _bias(fan_out):
    return Tensor(np.zeros(fan_out), requires_grad=True)


def init_attention_block(d_model: int, d_attn: int, rng: np.random.Generator) -> dict:
    """Self-attention block parameters: QKV and output projections,
    a GELU feed-forward, and two layer norms."""
    d_ff = FF_MULT * d_model
    return {
        "wq": _linear_init(rng, d_model, d_attn),
        "bq": _bias(d_attn),
        "wk": _linear_init(rng, d_model, d_attn),
        "bk": _bias(d_attn),
        "wv": _linear_init(rng, d_model, d_attn),
        "bv": _bias(d_attn),
        "wo": _linear_init(rng, d_attn, d_model),
        "bo": _bias(d_model),
        "ff1_w": _linear_init(rng, d_model, d_ff),
        "ff1_b": _bias(d_ff),
        "ff2_w": _linear_init(rng, d_ff, d_model),
        "ff2_b": _bias(d_model),
        "ln1_g": Tensor(np.ones(d_model), requires_grad=True),
        "ln1_b": _bias(d_model),
        "ln2_g": Tensor(np.ones(d_model), requires_grad=True),
        "ln2_b": _bias(d_model),
    }


def init_learner(d_model: int, d_attn: int, n_blocks: int, rng: np.random.Generator) -> list:
    return [init_attention_block(d_model, d_attn, rng) for _ in range(n_blocks)]


def init_decoder(d_model: int, d_attn: int, rng: np.random.Generator) -> dict:
    """Decoder: merge projection (2D -> D), one attention block, feed-forward.

    No final layer norm, so reconstruction is not pinned to unit scale.
    """
    d_ff = FF_MULT * d_model
    return {
        "merge_w": _linear_init(rng, 2 * d_model, d_model),
        "merge_b": _bias(d_model),
        "wq": _linear_init(rng, d_model, d_attn),
        "bq": _bias(d_attn),
        "wk": _linear_init(rng, d_model, d_attn),
        "bk": _bias(d_attn),
        "wv": _linear_init(rng, d_model, d_attn),
        "bv": _bias(d_attn),
        "wo": _linear_init(rng, d_attn, d_model),
        "bo": _bias(d_model),
        "ln_g": Tensor(np.ones(d_model), requires_grad=True),
        "ln_b": _bias(d_model),
        "ff1_w": _linear_init(rng, d_model, d_ff),
        "ff1_b": _bias(d_ff),
        "ff2_w": _linear_init(rng, d_ff, d_model),
        "ff2_b": _bias(d_model),
    }


def _linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return T.linear(x, w, b)


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    b, s, d = x.shape
    if d % n_heads:
        raise ValueError(f"attention width {d} not divisible by {n_heads} heads")
    return T.transpose(T.reshape(x, (b, s, n_heads, d // n_heads)), (0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    b, h, s, dh = x.shape
    return T.reshape(T.transpose(x, (0, 2, 1, 3)), (b, s, h * dh))


def attention_core(x: Tensor, params: dict, n_heads: int) -> Tensor:
    """Multi-head self-attention over sequence positions: (B,S,D) -> (B,S,D)."""
    q = _split_heads(_linear(x, params["wq"], params["bq"]), n_heads)
    k = _split_heads(_linear(x, params["wk"], params["bk"]), n_heads)
    v = _split_heads(_linear(x, params["wv"], params["bv"]), n_heads)
    out = _merge_heads(T.attention(q, k, v))
    return _linear(out, params["wo"], params["bo"])


def masked_attention_block(
    x: Tensor,
    gate,
    params: dict,
    n_heads: int,
    literal_additive_mask: bool = False,
) -> Tensor:
    """One transformer block whose view of the features is restricted by `gate`.

    gate: length-D Tensor (soft), HardGate, or None for an unmasked block.
    Input and output are gated, so hard-masked channels are exactly zero at
    the output. With `literal_additive_mask`, masked input channels are also
    offset by the additive padding constant before attention.
    """
    g = gate
    if isinstance(gate, HardGate):
        g = Tensor(gate.g_hat)
    if g is not None:
        h = T.mul(x, g)
        if literal_additive_mask:
            # additive form of the same restriction; broadcasts like the gate
            h = T.add(h, Tensor((1.0 - g.data) * MASK_FILL))
    else:
        h = x

    attn = attention_core(h, params, n_heads)
    h1 = T.layer_norm(T.add(h, attn), params["ln1_g"], params["ln1_b"])
    ff = _linear(T.gelu(_linear(h1, params["ff1_w"], params["ff1_b"])), params["ff2_w"], params["ff2_b"])
    out = T.layer_norm(T.add(h1, ff), params["ln2_g"], params["ln2_b"])
    if g is not None:
        out = T.mul(out, g)
    return out


def run_learner(x: Tensor, gate, blocks: list, n_heads: int, literal_additive_mask: bool = False) -> Tensor:
    """Stack of masked blocks sharing one gate (a uni- or paired-modal learner)."""
    h = x
    for params in blocks:
        h = masked_attention_block(h, gate, params, n_heads, literal_additive_mask)
    return h


def decode(uni_feat: Tensor, paired_feat: Tensor, params: dict, n_heads: int) -> Tensor:
    """Reconstruct a modal representation from its two partition features.

    Concatenates the partitions on the feature axis, merges back to width D,
    then one attention block and a feed-forward refine the merged view.
    """
    if uni_feat.shape != paired_feat.shape:
        raise ValueError("partition features must share a shape")
    merged = _linear(T.concat_last([uni_feat, paired_feat]), params["merge_w"], params["merge_b"])
    attn = attention_core(merged, params, n_heads)
    h = T.layer_norm(T.add(merged, attn), params["ln_g"], params["ln_b"])
    ff = _linear(T.gelu(_linear(h, params["ff1_w"], params["ff1_b"])), params["ff2_w"], params["ff2_b"])
    return T.add(h, ff)


def block_param_count(params: dict) -> int:
    return sum(t.data.size for t in params.values())
