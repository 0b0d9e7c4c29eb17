"""Full model bundle: per-modality partitioners, shared partition learners,
decoder, classification heads, and the downstream fusion head.

The learners and decoder are shared across modalities, so the forward pass
stacks all modalities along the batch axis and runs them in one shot;
attention never crosses batch rows, making this exactly equivalent to
per-modality passes. Per-modality views are sliced back out where a loss
or the fusion head needs them.

Ablation switches drop a module together with its loss term. Dropping the
partitioner collapses the model to pooled-feature concatenation with a
linear prediction head (the plain fusion baseline), since the learners and
decoder have nothing to consume without partitions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import fusion as FU
from . import learners as LN
from . import objectives as OBJ
from . import partitioner as PT
from . import tensor as T
from .tensor import Tensor

__all__ = [
    "ModelDims",
    "Model",
    "build_model",
    "flatten_params",
    "module_param_counts",
    "partition_features",
    "pretrain_objective",
    "task_logits",
    "joint_objective",
]


@dataclass
class ModelDims:
    n_modalities: int = 2
    d_model: int = 16
    n_heads: int = 4
    n_blocks: int = 2
    n_iters: int = 3
    n_classes: int = 2
    task: str = "classification"
    gate_theta: float = 0.5
    no_partitioner: bool = False
    no_uni_learner: bool = False
    no_paired_learner: bool = False
    no_decoder: bool = False
    literal_additive_mask: bool = False
    soft_learner_masks: bool = False

    def __post_init__(self):
        # the learners and decoder are built on top of the partitioner, so
        # removing it removes all three
        if self.no_partitioner:
            self.no_uni_learner = True
            self.no_paired_learner = True
            self.no_decoder = True

    @property
    def head_out(self) -> int:
        return self.n_classes if self.task == "classification" else 1


@dataclass
class Model:
    dims: ModelDims
    partitioners: list = field(default_factory=list)  # per modality param dicts
    uni_learner: list = field(default_factory=list)  # block param dicts
    paired_learner: list = field(default_factory=list)
    decoder: dict | None = None
    ufc_head: dict | None = None
    pfc_head: dict | None = None
    fusion: dict | None = None
    concat_head: dict | None = None  # partitioner-less fallback head


def build_model(dims: ModelDims, seed: int) -> Model:
    rng = np.random.default_rng([seed, 100])
    d = dims.d_model
    model = Model(dims=dims)
    if dims.no_partitioner:
        model.concat_head = {
            "w": Tensor(np.zeros((dims.n_modalities * d, dims.head_out)), requires_grad=True),
            "b": Tensor(np.zeros(dims.head_out), requires_grad=True),
        }
        return model

    model.partitioners = [PT.init_partitioner_params(d, rng) for _ in range(dims.n_modalities)]
    if not dims.no_uni_learner:
        model.uni_learner = LN.init_learner(d, d, dims.n_blocks, rng)
        # random head init starts near its decay equilibrium, so the
        # classification curves flatten once the features stabilize
        model.ufc_head = {
            "w": Tensor(rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, dims.n_modalities)), requires_grad=True),
            "b": Tensor(np.zeros(dims.n_modalities), requires_grad=True),
        }
    if not dims.no_paired_learner:
        model.paired_learner = LN.init_learner(d, d, dims.n_blocks, rng)
        model.pfc_head = {
            "w": Tensor(rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, 2)), requires_grad=True),
            "b": Tensor(np.zeros(2), requires_grad=True),
        }
    if not dims.no_decoder:
        model.decoder = LN.init_decoder(d, d, rng)
    model.fusion = FU.init_fusion(d, dims.n_modalities, dims.head_out, rng)
    return model


def flatten_params(model: Model) -> dict:
    """Stable name -> Tensor map over every trainable parameter."""
    out = {}

    def put(prefix, obj):
        if obj is None:
            return
        if isinstance(obj, Tensor):
            out[prefix] = obj
        elif isinstance(obj, dict):
            for k, v in obj.items():
                put(f"{prefix}.{k}", v)
        elif isinstance(obj, list):
            for i, v in enumerate(obj):
                put(f"{prefix}.{i}", v)
        else:
            raise TypeError(f"unexpected param node at {prefix}: {type(obj)}")

    for m, p in enumerate(model.partitioners):
        put(f"partitioner.{m}", p)
    put("uni_learner", model.uni_learner)
    put("paired_learner", model.paired_learner)
    put("decoder", model.decoder)
    put("ufc_head", model.ufc_head)
    put("pfc_head", model.pfc_head)
    put("fusion", model.fusion)
    put("concat_head", model.concat_head)
    return out


MODULE_ORDER = (
    "encoder",
    "partitioner",
    "uni_learner",
    "paired_learner",
    "decoder",
    "ufc_head",
    "pfc_head",
    "fusion",
    "concat_head",
)


def module_param_counts(model: Model) -> dict:
    """Trainable parameters per module; frozen encoder stubs count zero."""
    counts = {name: 0 for name in MODULE_ORDER}
    for name, tensor in flatten_params(model).items():
        counts[name.split(".")[0]] += tensor.data.size
    counts["total"] = sum(counts[name] for name in MODULE_ORDER)
    return counts


# ---------------------------------------------------------------------------
# forward passes


def _stack(parts: list) -> Tensor:
    return parts[0] if len(parts) == 1 else T.stack_rows(parts)


def _stacked_gate(states: list, role: str, dims: ModelDims, hard: bool, batch: int):
    """Per-modality gates tiled into one (M*B, 1, D) gate tensor."""
    d = dims.d_model
    if hard:
        rows = []
        for state in states:
            soft = state.gates.g_uni if role == "uni" else state.gates.g_paired
            hat = PT.harden(soft, role, dims.gate_theta).g_hat
            rows.append(np.broadcast_to(hat, (batch, 1, d)))
        return Tensor(np.concatenate(rows, axis=0))
    rows = []
    for state in states:
        soft = state.gates.g_uni if role == "uni" else state.gates.g_paired
        rows.append(T.broadcast_to(T.reshape(soft, (1, 1, d)), (batch, 1, d)))
    return _stack(rows)


def partition_features(model: Model, features: list, hard: bool = False):
    """Run partitioners, learners, and decoder for every modality.

    Returns (traces, per_iteration); per_iteration[i] holds the stacked
    learner outputs and reconstruction for iteration i, modalities laid out
    in blocks of B rows. Under ablations the raw partitions stand in for
    learner outputs.

    Learner masks are hardened by default (partition updates stay soft, so
    partitioner gradients flow through the learner inputs); with
    `soft_learner_masks` the masks stay soft unless `hard` forces
    evaluation mode.
    """
    dims = model.dims
    batch = features[0].shape[0]
    mask_hard = hard or not dims.soft_learner_masks
    traces = [
        PT.partition(features[m], model.partitioners[m], dims.n_iters, dims.gate_theta)
        for m in range(dims.n_modalities)
    ]
    per_iteration = []
    for i in range(dims.n_iters):
        states = [tr.states[i] for tr in traces]
        uni_stack = _stack([s.uni for s in states])
        paired_stack = _stack([s.paired for s in states])
        if not dims.no_uni_learner:
            gate = _stacked_gate(states, "uni", dims, mask_hard, batch)
            uni_stack = LN.run_learner(
                uni_stack, gate, model.uni_learner, dims.n_heads, dims.literal_additive_mask
            )
        if not dims.no_paired_learner:
            gate = _stacked_gate(states, "paired", dims, mask_hard, batch)
            paired_stack = LN.run_learner(
                paired_stack, gate, model.paired_learner, dims.n_heads, dims.literal_additive_mask
            )
        recon_stack = None
        if not dims.no_decoder:
            recon_stack = LN.decode(uni_stack, paired_stack, model.decoder, dims.n_heads)
        per_iteration.append({"uni": uni_stack, "paired": paired_stack, "recon": recon_stack})
    return traces, per_iteration


def _zero():
    return Tensor(np.asarray(0.0))


def _modality_onehot(n_modalities: int, batch: int) -> np.ndarray:
    return np.eye(n_modalities)[np.repeat(np.arange(n_modalities), batch)]


def pretrain_objective(model: Model, features: list, hard: bool = False, cached=None):
    """Sum over iterations of (ufc + pfc + upr); returns the scalar tensor,
    per-component floats, and the cached partition forward."""
    dims = model.dims
    if dims.no_partitioner:
        return _zero(), {"ufc": 0.0, "pfc": 0.0, "upr": 0.0}, None
    batch = features[0].shape[0]
    cached = cached or partition_features(model, features, hard)
    _, per_iteration = cached
    source_stack = _stack(features)
    triples = []
    for step in per_iteration:
        if dims.no_uni_learner:
            ufc = _zero()
        else:
            pooled = OBJ.pool_sequence(step["uni"])
            logits = T.linear(pooled, model.ufc_head["w"], model.ufc_head["b"])
            ufc = T.cross_entropy_logits(logits, _modality_onehot(dims.n_modalities, batch))
        if dims.no_paired_learner:
            pfc = _zero()
        else:
            pooled = T.stack_rows([OBJ.pool_sequence(step["uni"]), OBJ.pool_sequence(step["paired"])])
            logits = T.linear(pooled, model.pfc_head["w"], model.pfc_head["b"])
            half = dims.n_modalities * batch
            onehot = np.eye(2)[np.repeat([0, 1], half)]
            pfc = T.cross_entropy_logits(logits, onehot)
        if dims.no_decoder:
            upr = _zero()
        else:
            upr = T.scale(T.sum_squared_error(source_stack, step["recon"]), 1.0 / (dims.d_model * batch))
        triples.append((ufc, pfc, upr))
    total = OBJ.pretrain_loss(triples, dims.n_iters)
    components = {
        "ufc": sum(float(t[0].data) for t in triples),
        "pfc": sum(float(t[1].data) for t in triples),
        "upr": sum(float(t[2].data) for t in triples),
    }
    return total, components, cached


def task_logits(model: Model, features: list, hard: bool = False, cached=None):
    """Prediction logits; reuses a cached partition forward when provided."""
    dims = model.dims
    if dims.no_partitioner:
        pooled = [OBJ.pool_sequence(f) for f in features]
        return T.linear(T.concat_last(pooled), model.concat_head["w"], model.concat_head["b"])
    if cached is None:
        cached = partition_features(model, features, hard)
    _, per_iteration = cached
    last = per_iteration[-1]
    batch = features[0].shape[0]
    uni_list = [T.slice_rows(last["uni"], m * batch, (m + 1) * batch) for m in range(dims.n_modalities)]
    paired_list = [T.slice_rows(last["paired"], m * batch, (m + 1) * batch) for m in range(dims.n_modalities)]
    fused = FU.fuse(uni_list, paired_list, model.fusion, dims.n_heads)
    return FU.predict(fused, model.fusion, dims.task)


def joint_objective(model: Model, features: list, labels: np.ndarray, alpha: float, beta: float, hard: bool = False):
    """alpha * pretrain-objective + beta * task loss, sharing one forward."""
    l_pre, components, cached = pretrain_objective(model, features, hard)
    logits = task_logits(model, features, hard, cached=cached)
    l_task = FU.task_loss(logits, labels, model.dims.task)
    total = OBJ.joint_loss(l_pre, l_task, alpha, beta)
    components = dict(components)
    components["task"] = float(l_task.data)
    return total, components, logits
