"""Two-stage training, evaluation metrics, and the benchmark grid.

Stage one minimizes the partition objectives alone; stage two adds the
downstream task loss with configurable weights. Optimization is Adam with
per-module learning rates (the partition learners and the decoder train at
their own rates). Runs are deterministic: a (config, seed) pair fixes
batch order, initialization, and therefore every emitted artifact.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np

from . import synth as SY
from .model import Model, ModelDims, build_model, flatten_params, module_param_counts
from .model import joint_objective, partition_features, pretrain_objective, task_logits
from .objectives import LossReport
from .partitioner import partition_report_row
from .storage import config_hash
from .synth import SynthConfig, SynthDataset, baseline_forward, init_baseline, pooled_features
from .tensor import NonFiniteError, Tape, Tensor
from .fusion import task_loss as fusion_task_loss

__all__ = [
    "TrainConfig",
    "TrainingDiverged",
    "MetricsReport",
    "Adam",
    "pretrain",
    "train_joint",
    "evaluate",
    "param_report",
    "run_benchmark",
    "accuracy_score",
    "weighted_f1_score",
    "per_class_stats",
]


@dataclass
class TrainConfig:
    n_iters: int = 3
    alpha: float = 0.5
    beta: float = 1.0
    pretrain_epochs: int = 20
    joint_epochs: int = 50
    batch_size: int = 32
    lr_overall: float = 3e-4
    lr_learners: float = 1e-4
    lr_decoder: float = 1e-3
    weight_decay: float = 0.003
    gate_theta: float = 0.5
    seed: int = 0
    n_heads: int = 4
    n_blocks: int = 2
    task: str = "classification"
    no_partitioner: bool = False
    no_uni_learner: bool = False
    no_paired_learner: bool = False
    no_decoder: bool = False
    literal_additive_mask: bool = False
    soft_learner_masks: bool = False

    def validate(self):
        if self.pretrain_epochs < 0 or self.joint_epochs < 0:
            raise ValueError("epoch counts must be >= 0")
        if min(self.lr_overall, self.lr_learners, self.lr_decoder) <= 0:
            raise ValueError("learning rates must be positive")
        if self.n_iters < 1:
            raise ValueError("n_iters must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0 < self.gate_theta < 1:
            raise ValueError("gate_theta must lie in (0, 1)")

    def dims(self, synth_cfg: SynthConfig, n_classes: int = 2) -> ModelDims:
        return ModelDims(
            n_modalities=synth_cfg.n_modalities,
            d_model=synth_cfg.d_model,
            n_heads=self.n_heads,
            n_blocks=self.n_blocks,
            n_iters=self.n_iters,
            n_classes=n_classes,
            task=self.task,
            gate_theta=self.gate_theta,
            no_partitioner=self.no_partitioner,
            no_uni_learner=self.no_uni_learner,
            no_paired_learner=self.no_paired_learner,
            no_decoder=self.no_decoder,
            literal_additive_mask=self.literal_additive_mask,
            soft_learner_masks=self.soft_learner_masks,
        )


class TrainingDiverged(RuntimeError):
    """Raised when a forward op produced non-finite values mid-training."""


@dataclass
class MetricsReport:
    accuracy: float
    weighted_f1: float
    per_class: list
    partition_table: list
    seed: int
    config_hash: str


class Adam:
    """Adam with one learning rate per named parameter and decoupled weight
    decay on matrix-shaped parameters (gains and biases are left alone)."""

    def __init__(self, params: dict, lr_for, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        self.items = [(name, t, lr_for(name)) for name, t in params.items()]
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.m = {name: np.zeros_like(t.data) for name, t, _ in self.items}
        self.v = {name: np.zeros_like(t.data) for name, t, _ in self.items}
        self.t = 0

    def zero_grad(self):
        for _, tensor, _ in self.items:
            tensor.grad = None

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1 - b1**self.t
        bias2 = 1 - b2**self.t
        for name, tensor, lr in self.items:
            if tensor.grad is None:
                continue
            g = tensor.grad
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            m_hat = self.m[name] / bias1
            v_hat = self.v[name] / bias2
            update = m_hat / (np.sqrt(v_hat) + self.eps)
            if self.weight_decay and tensor.data.ndim >= 2:
                update = update + self.weight_decay * tensor.data
            tensor.data = tensor.data - lr * update


def _lr_for(cfg: TrainConfig):
    def lr(name: str) -> float:
        module = name.split(".")[0]
        if module in ("uni_learner", "paired_learner"):
            return cfg.lr_learners
        if module == "decoder":
            return cfg.lr_decoder
        return cfg.lr_overall

    return lr


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def _batch_tensors(split, idx):
    return [Tensor(feat[idx]) for feat in split.features], split.labels[idx]


def _run_epochs(model, dataset, cfg, stage, n_epochs, rng, epoch_offset=0):
    """Shared minibatch loop for both stages; returns per-epoch loss rows."""
    train = dataset.splits["train"]
    params = flatten_params(model)
    optimizer = Adam(params, _lr_for(cfg), weight_decay=cfg.weight_decay)
    rows = []
    for epoch in range(1, n_epochs + 1):
        sums = {"ufc": 0.0, "pfc": 0.0, "upr": 0.0, "task": 0.0, "total": 0.0}
        n_steps = 0
        for idx in _batches(train.n, cfg.batch_size, rng):
            features, labels = _batch_tensors(train, idx)
            optimizer.zero_grad()
            try:
                with Tape() as tape:
                    if stage == "pretrain":
                        loss, comps, _ = pretrain_objective(model, features)
                    else:
                        loss, comps, _ = joint_objective(model, features, labels, cfg.alpha, cfg.beta)
                    tape.backward(loss)
            except NonFiniteError as err:
                raise TrainingDiverged(
                    f"non-finite loss at stage={stage} epoch={epoch} step={n_steps}: {err}"
                ) from err
            optimizer.step()
            for key in ("ufc", "pfc", "upr"):
                sums[key] += comps[key]
            if stage == "joint":
                sums["task"] += comps["task"]
            sums["total"] += float(loss.data)
            n_steps += 1
        means = {k: v / max(n_steps, 1) for k, v in sums.items()}
        rows.append(
            LossReport(
                epoch=epoch_offset + epoch,
                stage=stage,
                ufc=means["ufc"],
                pfc=means["pfc"],
                upr=means["upr"],
                task=means["task"] if stage == "joint" else None,
                total=means["total"],
            )
        )
    return rows


def pretrain(model: Model, dataset: SynthDataset, cfg: TrainConfig):
    """Stage one: minimize the partition objectives for cfg.pretrain_epochs."""
    cfg.validate()
    rng = np.random.default_rng([cfg.seed, 500])
    return _run_epochs(model, dataset, cfg, "pretrain", cfg.pretrain_epochs, rng)


def train_joint(model: Model, dataset: SynthDataset, cfg: TrainConfig, epoch_offset: int = 0):
    """Stage two: weighted partition objectives plus the task loss."""
    cfg.validate()
    rng = np.random.default_rng([cfg.seed, 501])
    return _run_epochs(model, dataset, cfg, "joint", cfg.joint_epochs, rng, epoch_offset)


def train_two_stage(dataset: SynthDataset, cfg: TrainConfig):
    """Build, pretrain, and jointly train a model; returns (model, rows)."""
    model = build_model(cfg.dims(dataset.config), cfg.seed)
    rows = pretrain(model, dataset, cfg)
    rows += train_joint(model, dataset, cfg, epoch_offset=len(rows))
    return model, rows


# ---------------------------------------------------------------------------
# metrics


def accuracy_score(pred: np.ndarray, truth: np.ndarray) -> float:
    return float(np.mean(pred == truth))


def per_class_stats(pred: np.ndarray, truth: np.ndarray, n_classes: int) -> list:
    stats = []
    for c in range(n_classes):
        tp = int(np.sum((pred == c) & (truth == c)))
        fp = int(np.sum((pred == c) & (truth != c)))
        fn = int(np.sum((pred != c) & (truth == c)))
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        stats.append(
            {
                "label": c,
                "precision": precision,
                "recall": recall,
                "f1": f1,
                "support": int(np.sum(truth == c)),
            }
        )
    return stats


def weighted_f1_score(pred: np.ndarray, truth: np.ndarray, n_classes: int) -> float:
    stats = per_class_stats(pred, truth, n_classes)
    total = sum(s["support"] for s in stats)
    return float(sum(s["f1"] * s["support"] for s in stats) / total) if total else 0.0


def evaluate(model: Model, dataset: SynthDataset, split: str, cfg: TrainConfig) -> MetricsReport:
    """Hard-gate evaluation over a whole split, plus the partition table."""
    data = dataset.splits[split]
    if data.n == 0:
        raise ValueError(f"split {split!r} is empty")
    features = [Tensor(f) for f in data.features]
    logits = task_logits(model, features, hard=True)
    pred = np.argmax(logits.data, axis=1)
    n_classes = model.dims.head_out

    table = []
    if not model.dims.no_partitioner:
        traces, _ = partition_features(model, features, hard=True)
        table = [
            partition_report_row(dataset.modality_names[m], traces[m])
            for m in range(model.dims.n_modalities)
        ]
    return MetricsReport(
        accuracy=accuracy_score(pred, data.labels),
        weighted_f1=weighted_f1_score(pred, data.labels, n_classes),
        per_class=per_class_stats(pred, data.labels, n_classes),
        partition_table=table,
        seed=cfg.seed,
        config_hash=config_hash({"train": asdict(cfg), "synth": asdict(dataset.config)}),
    )


def param_report(model: Model) -> dict:
    return module_param_counts(model)


# ---------------------------------------------------------------------------
# benchmark grid


def _train_baseline(method: str, dataset: SynthDataset, cfg: TrainConfig):
    """Task-only training of a pooled-feature baseline under the full epoch
    budget (they have no pretraining stage of their own)."""
    scfg = dataset.config
    rng = np.random.default_rng([cfg.seed, 502])
    params = init_baseline(method, scfg.d_model, scfg.n_modalities, 2, rng)
    optimizer = Adam(params, lambda name: cfg.lr_overall, weight_decay=cfg.weight_decay)
    train = dataset.splits["train"]
    pooled = pooled_features(train)
    n_epochs = cfg.pretrain_epochs + cfg.joint_epochs
    shuffle_rng = np.random.default_rng([cfg.seed, 503])
    for _ in range(n_epochs):
        for idx in _batches(train.n, cfg.batch_size, shuffle_rng):
            features = [Tensor(p[idx]) for p in pooled]
            optimizer.zero_grad()
            with Tape() as tape:
                logits = baseline_forward(method, features, params)
                loss = fusion_task_loss(logits, train.labels[idx], "classification")
                tape.backward(loss)
            optimizer.step()
    return params


def _eval_baseline(method: str, params: dict, dataset: SynthDataset, split: str):
    data = dataset.splits[split]
    features = [Tensor(p) for p in pooled_features(data)]
    logits = baseline_forward(method, features, params)
    pred = np.argmax(logits.data, axis=1)
    return accuracy_score(pred, data.labels), weighted_f1_score(pred, data.labels, 2)


def benchmark_methods(n_modalities: int) -> list:
    return [f"uni:{m}" for m in range(n_modalities)] + list(SY.BASELINE_METHODS) + ["modalsplit"]


def run_benchmark(synth_cfg: SynthConfig, cfg: TrainConfig, seeds, methods=None, oracle_mc: int = 50_000):
    """Train and evaluate every method per seed; aggregate mean +- std.

    Each seed regenerates the dataset and reinitializes every model, so the
    spread reflects both sampling and initialization variance. The oracle
    row reports the generative ceiling with its Monte-Carlo standard error.
    """
    if methods is None:
        methods = benchmark_methods(synth_cfg.n_modalities)
    cells = {method: {"acc": [], "f1": []} for method in methods}
    for seed in seeds:
        dataset = SY.generate(replace(synth_cfg, seed=seed))
        run_cfg = replace(cfg, seed=seed)
        for method in methods:
            if method == "modalsplit":
                model, _ = train_two_stage(dataset, run_cfg)
                report = evaluate(model, dataset, "test", run_cfg)
                acc, f1 = report.accuracy, report.weighted_f1
            else:
                params = _train_baseline(method, dataset, run_cfg)
                acc, f1 = _eval_baseline(method, params, dataset, "test")
            cells[method]["acc"].append(acc)
            cells[method]["f1"].append(f1)

    rows = []
    for method in methods:
        acc = np.array(cells[method]["acc"])
        f1 = np.array(cells[method]["f1"])
        rows.append(
            {
                "method": method,
                "accuracy_mean": float(acc.mean()),
                "accuracy_std": float(acc.std()),
                "weighted_f1_mean": float(f1.mean()),
                "weighted_f1_std": float(f1.std()),
                "n_seeds": len(seeds),
            }
        )
    oracle = SY.bayes_oracle(synth_cfg, n_mc=oracle_mc)
    rows.append(
        {
            "method": "bayes_oracle",
            "accuracy_mean": oracle.accuracy,
            "accuracy_std": oracle.stderr,
            "weighted_f1_mean": None,
            "weighted_f1_std": None,
            "n_seeds": oracle.n_mc,
        }
    )
    return rows
