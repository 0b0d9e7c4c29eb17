"""Feature partitioning of modal representations via cumulative-softmax gates.

Each modality owns a small trainable affine map per gate role. Pooled
partition statistics pass through the affine map and a cumulative softmax,
yielding a monotone soft gate over feature channels: the uni-modal gate
decays along the channel axis, the paired-modal gate grows. Iterating the
gate/update cycle lets the two partitions drift apart while keeping every
step differentiable. Hard (binary, contiguous) gates are derived only for
mask construction, evaluation and reporting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

MASK_FILL = -10000.0  # stand-in for -inf in additive padding masks

__all__ = [
    "MASK_FILL",
    "GateSet",
    "PartitionState",
    "HardGate",
    "PartitionTrace",
    "init_partitioner_params",
    "cumsoftmax",
    "compute_gates",
    "update_partitions",
    "harden",
    "build_padding_mask",
    "partition",
    "partition_report_row",
]


@dataclass
class GateSet:
    """Soft gates for one iteration; all are length-D tensors in [0, 1].

    g_uni is non-increasing, g_paired non-decreasing, overlap is their
    elementwise product, and upper/downer are the exclusive remainders.
    """

    g_uni: Tensor
    g_paired: Tensor
    overlap: Tensor
    upper: Tensor
    downer: Tensor
    iteration: int


@dataclass
class PartitionState:
    uni: Tensor  # (B, S, D)
    paired: Tensor  # (B, S, D)
    shared: Tensor  # (B, S, D), the overlap-gated slice of the source
    gates: GateSet


@dataclass
class HardGate:
    g_hat: np.ndarray  # binary, contiguous ones block
    cut: int  # 1-based segmentation index
    role: str


@dataclass
class PartitionTrace:
    states: list  # one PartitionState per iteration
    hard_uni: HardGate
    hard_paired: HardGate

    def __len__(self):
        return len(self.states)

    @property
    def final(self) -> PartitionState:
        return self.states[-1]


def init_partitioner_params(d_model: int, rng: np.random.Generator, init_scale: float = 0.01) -> dict:
    """One affine map per gate role; small weights keep the initial gates
    near the uniform ramp (cut at D/2)."""
    return {
        "w_uni": Tensor(rng.normal(0.0, init_scale, size=(d_model, d_model)), requires_grad=True),
        "b_uni": Tensor(np.zeros(d_model), requires_grad=True),
        "w_paired": Tensor(rng.normal(0.0, init_scale, size=(d_model, d_model)), requires_grad=True),
        "b_paired": Tensor(np.zeros(d_model), requires_grad=True),
    }


def cumsoftmax(v: Tensor) -> Tensor:
    """Cumulative sum of a softmax along the last axis.

    Monotone non-decreasing map onto (0, 1] that ends at 1; the smooth
    relaxation of a contiguous binary gate.
    """
    if v.shape[-1] < 2:
        raise ValueError("cumsoftmax needs at least 2 channels")
    return T.cumsum_last(T.softmax_last(v))


def _pool_and_map(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    pooled = T.mean_axis(x, (0, 1))  # (D,)
    logits = T.add(T.matmul(T.reshape(pooled, (1, -1)), w), b)
    return T.reshape(logits, (-1,))


def compute_gates(uni: Tensor, paired: Tensor, params: dict, iteration: int) -> GateSet:
    """Derive the iteration's gate set from pooled partition statistics.

    Gates are shared across the samples of a batch: the pooling runs over
    batch and sequence axes before the affine map and cumulative softmax.
    """
    if uni.shape != paired.shape:
        raise ValueError("uni and paired partitions must share a shape")
    one = Tensor(np.ones(uni.shape[-1]))
    g_uni = T.sub(one, cumsoftmax(_pool_and_map(uni, params["w_uni"], params["b_uni"])))
    g_paired = cumsoftmax(_pool_and_map(paired, params["w_paired"], params["b_paired"]))
    overlap = T.mul(g_uni, g_paired)
    upper = T.sub(g_uni, overlap)
    downer = T.sub(g_paired, overlap)
    return GateSet(g_uni, g_paired, overlap, upper, downer, iteration)


def update_partitions(source: Tensor, state: PartitionState, gates: GateSet) -> PartitionState:
    """Advance both partitions one iteration.

    The overlap gate carves a shared slice out of the source representation;
    each partition keeps its exclusive remainder and absorbs the shared slice.
    """
    if source.shape != state.uni.shape:
        raise ValueError("source and partition shapes disagree")
    shared = T.mul(gates.overlap, source)
    uni_next = T.add(T.mul(gates.upper, state.uni), shared)
    paired_next = T.add(T.mul(gates.downer, state.paired), shared)
    return PartitionState(uni_next, paired_next, shared, gates)


def _monotone(values: np.ndarray, direction: str, tol: float = 1e-9) -> bool:
    diffs = np.diff(values)
    if direction == "non-increasing":
        return bool(np.all(diffs <= tol))
    return bool(np.all(diffs >= -tol))


def harden(gate, role: str, theta: float = 0.5) -> HardGate:
    """Threshold a monotone soft gate into a contiguous binary gate.

    If nothing clears the threshold, the single largest entry is kept so a
    partition never collapses to empty. Cut indices are 1-based: uni counts
    its ones-prefix, paired points at the first element of its ones-suffix.
    """
    values = gate.data if isinstance(gate, Tensor) else np.asarray(gate, dtype=np.float64)
    if role not in ("uni", "paired"):
        raise ValueError(f"unknown gate role: {role!r}")
    direction = "non-increasing" if role == "uni" else "non-decreasing"
    if not _monotone(values, direction):
        raise ValueError(f"gate is not {direction}; cannot harden as {role}")
    g_hat = (values >= theta).astype(np.float64)
    if g_hat.sum() == 0:  # minimum-width rule
        g_hat[int(np.argmax(values))] = 1.0
    ones = int(g_hat.sum())
    d = values.shape[0]
    cut = ones if role == "uni" else d - ones + 1
    return HardGate(g_hat=g_hat, cut=cut, role=role)


def build_padding_mask(g_hat, s_len: int, fill: float = MASK_FILL) -> np.ndarray:
    """Broadcast a binary channel gate into an (S, D) additive padding mask.

    Rows are identical: 0 on kept channels, `fill` on masked ones.
    """
    if s_len < 1:
        raise ValueError("sequence length must be >= 1")
    hat = g_hat.g_hat if isinstance(g_hat, HardGate) else np.asarray(g_hat, dtype=np.float64)
    row = np.where(hat == 1.0, 0.0, fill)  # exact +0.0 on kept channels
    return np.broadcast_to(row, (s_len, hat.shape[0])).copy()


def partition(source: Tensor, params: dict, n_iters: int, theta: float = 0.5) -> PartitionTrace:
    """Run the gate/update cycle `n_iters` times over one modality.

    Both partitions start as the source representation itself. Gates are
    recomputed each iteration from the evolving partitions; final hard gates
    come from the last iteration's soft gates.
    """
    if n_iters < 1:
        raise ValueError("n_iters must be >= 1")
    state = PartitionState(uni=source, paired=source, shared=source, gates=None)
    states = []
    for i in range(1, n_iters + 1):
        gates = compute_gates(state.uni, state.paired, params, iteration=i)
        state = update_partitions(source, state, gates)
        states.append(state)
    last = states[-1].gates
    return PartitionTrace(
        states=states,
        hard_uni=harden(last.g_uni, "uni", theta),
        hard_paired=harden(last.g_paired, "paired", theta),
    )


def partition_report_row(modality: str, trace: PartitionTrace) -> dict:
    """One report row: channel percentages may sum above 100 (overlap)."""
    hu, hp = trace.hard_uni.g_hat, trace.hard_paired.g_hat
    d = hu.shape[0]
    return {
        "modality": modality,
        "percent_uni": 100.0 * float(hu.sum()) / d,
        "percent_paired": 100.0 * float(hp.sum()) / d,
        "percent_overlap": 100.0 * float((hu * hp).sum()) / d,
        "cut_u": trace.hard_uni.cut,
        "cut_p": trace.hard_paired.cut,
    }
