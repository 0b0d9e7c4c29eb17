"""Synthetic multimodal benchmark with a planted uni/paired channel split.

Each modality's feature vector is [own latent | cross latent]: the first
block is private to the modality, the second only carries label signal
through its inner product with the other modalities' cross blocks. That
makes the paired signal provably invisible to any single modality, while
the planted block boundary gives partition-recovery tests a ground truth.

A Monte-Carlo oracle applies the generative decision rule to denoised
observations, providing the accuracy ceiling for benchmark tables.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from . import tensor as T
from .learners import _bias, _linear, _linear_init
from .tensor import Tensor

__all__ = [
    "SynthConfig",
    "Split",
    "SynthDataset",
    "OracleEstimate",
    "generate",
    "bayes_oracle",
    "single_modality_ceiling",
    "pooled_features",
    "BASELINE_METHODS",
    "init_baseline",
    "baseline_forward",
]

SPLIT_NAMES = ("train", "val", "test")


@dataclass
class SynthConfig:
    n_modalities: int = 2
    d_model: int = 16  # total channels per modality
    seq_len: int = 8
    d_uni: int = 8  # planted width of the modality-private block
    d_paired: int = 8
    beta_uni: float = 1.0
    beta_paired: float = 1.0
    noise_sigma: float = 0.1
    marker_scale: float = 0.5  # per-modality constant offset, like distinct encoders
    n_train: int = 2048
    n_val: int = 256
    n_test: int = 2048
    seed: int = 0
    entangle: bool = False

    def validate(self):
        if self.d_uni + self.d_paired != self.d_model:
            raise ValueError("d_uni + d_paired must equal d_model")
        if min(self.d_uni, self.d_paired) < 1:
            raise ValueError("block widths must be >= 1")
        if self.n_modalities < 1:
            raise ValueError("need at least one modality")
        if min(self.n_train, self.n_val, self.n_test, self.seq_len) < 1:
            raise ValueError("counts must be >= 1")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")


@dataclass
class Split:
    features: list  # per modality, (n, S, D) float64
    labels: np.ndarray  # (n,) int64 in {0, 1}
    uni_latents: list  # per modality, (n, d_uni)
    paired_latents: list  # per modality, (n, d_paired)

    @property
    def n(self) -> int:
        return int(self.labels.shape[0])


@dataclass
class SynthDataset:
    config: SynthConfig
    splits: dict
    uni_dirs: list  # per modality, unit vector over the private block
    markers: list = None  # per modality, constant (D,) offset identifying it
    mixing: list | None = None  # per modality (D, D) orthogonal, if entangled

    modality_names: list = field(init=False)

    def __post_init__(self):
        self.modality_names = [f"mod{m}" for m in range(self.config.n_modalities)]


def _decision_stat(cfg: SynthConfig, uni_latents, paired_latents, uni_dirs) -> np.ndarray:
    uni_part = sum(lat @ w for lat, w in zip(uni_latents, uni_dirs))
    paired_part = np.zeros(uni_latents[0].shape[0])
    for i, j in combinations(range(cfg.n_modalities), 2):
        paired_part = paired_part + (paired_latents[i] * paired_latents[j]).sum(axis=1)
    return cfg.beta_uni * uni_part + cfg.beta_paired * paired_part


def generate(config: SynthConfig) -> SynthDataset:
    """Draw all splits from seed-derived disjoint streams; bit-reproducible."""
    config.validate()
    cfg = config
    setup_rng = np.random.default_rng([cfg.seed, 1000])
    uni_dirs = []
    for _ in range(cfg.n_modalities):
        v = setup_rng.normal(size=cfg.d_uni)
        uni_dirs.append(v / np.linalg.norm(v))
    # constant per-modality offsets make modalities identifiable, mirroring
    # distinct real encoders; they carry no label information
    markers = [cfg.marker_scale * setup_rng.normal(size=cfg.d_model) for _ in range(cfg.n_modalities)]
    mixing = None
    if cfg.entangle:
        mixing = []
        for _ in range(cfg.n_modalities):
            q, _ = np.linalg.qr(setup_rng.normal(size=(cfg.d_model, cfg.d_model)))
            mixing.append(q)

    splits = {}
    counts = {"train": cfg.n_train, "val": cfg.n_val, "test": cfg.n_test}
    for idx, name in enumerate(SPLIT_NAMES):
        rng = np.random.default_rng([cfg.seed, idx])
        n = counts[name]
        uni_lat = [rng.normal(size=(n, cfg.d_uni)) for _ in range(cfg.n_modalities)]
        paired_lat = [rng.normal(size=(n, cfg.d_paired)) for _ in range(cfg.n_modalities)]
        labels = (_decision_stat(cfg, uni_lat, paired_lat, uni_dirs) > 0).astype(np.int64)

        features = []
        for m in range(cfg.n_modalities):
            base = np.concatenate([uni_lat[m], paired_lat[m]], axis=1) + markers[m]  # (n, D)
            x = np.repeat(base[:, None, :], cfg.seq_len, axis=1)
            if cfg.noise_sigma > 0:
                x = x + cfg.noise_sigma * rng.normal(size=x.shape)
            if mixing is not None:
                x = x @ mixing[m]
            features.append(x)
        splits[name] = Split(features, labels, uni_lat, paired_lat)
    return SynthDataset(config=cfg, splits=splits, uni_dirs=uni_dirs, markers=markers, mixing=mixing)


@dataclass
class OracleEstimate:
    accuracy: float
    stderr: float
    n_mc: int


def bayes_oracle(config: SynthConfig, n_mc: int = 100_000, seed: int = 0) -> OracleEstimate:
    """Accuracy of the generative rule applied to posterior-mean latents.

    Observations average the per-position noise, then shrink toward the
    prior mean; entanglement is information-free (orthogonal mixing), so the
    estimate is computed directly in latent space.
    """
    if n_mc < 10_000:
        raise ValueError("oracle needs at least 10^4 Monte-Carlo samples")
    cfg = config
    rng = np.random.default_rng([config.seed, 2000, seed])
    shrink = cfg.seq_len / (cfg.seq_len + cfg.noise_sigma**2)
    noise_scale = cfg.noise_sigma / np.sqrt(cfg.seq_len)

    setup_rng = np.random.default_rng([cfg.seed, 1000])
    uni_dirs = []
    for _ in range(cfg.n_modalities):
        v = setup_rng.normal(size=cfg.d_uni)
        uni_dirs.append(v / np.linalg.norm(v))

    uni_lat = [rng.normal(size=(n_mc, cfg.d_uni)) for _ in range(cfg.n_modalities)]
    paired_lat = [rng.normal(size=(n_mc, cfg.d_paired)) for _ in range(cfg.n_modalities)]
    labels = _decision_stat(cfg, uni_lat, paired_lat, uni_dirs) > 0

    est_uni = [shrink * (lat + noise_scale * rng.normal(size=lat.shape)) for lat in uni_lat]
    est_paired = [shrink * (lat + noise_scale * rng.normal(size=lat.shape)) for lat in paired_lat]
    decisions = _decision_stat(cfg, est_uni, est_paired, uni_dirs) > 0

    acc = float(np.mean(decisions == labels))
    stderr = float(np.sqrt(acc * (1 - acc) / n_mc))
    return OracleEstimate(accuracy=acc, stderr=stderr, n_mc=n_mc)


def single_modality_ceiling(config: SynthConfig, modality: int = 0, n_mc: int = 100_000, seed: int = 0) -> float:
    """Best possible accuracy given one modality's (noiseless) latents.

    Conditioned on one modality, the remaining signal is Gaussian, so the
    optimal predictor and its accuracy have a closed conditional form that
    Monte-Carlo averages over the conditioning draw.
    """
    from math import erf

    cfg = config
    if cfg.n_modalities != 2:
        raise NotImplementedError("ceiling formula implemented for 2 modalities")
    rng = np.random.default_rng([cfg.seed, 3000, seed])
    setup_rng = np.random.default_rng([cfg.seed, 1000])
    w = [setup_rng.normal(size=cfg.d_uni) for _ in range(2)]
    w = [v / np.linalg.norm(v) for v in w][modality]

    uni = rng.normal(size=(n_mc, cfg.d_uni))
    paired = rng.normal(size=(n_mc, cfg.d_paired))
    own = cfg.beta_uni * (uni @ w)
    rest_std = np.sqrt(cfg.beta_uni**2 + cfg.beta_paired**2 * (paired**2).sum(axis=1))
    # P(label = 1 | this modality) via the Gaussian tail of the remainder
    z = own / np.maximum(rest_std, 1e-12)
    p_one = 0.5 * (1 + np.vectorize(erf)(z / np.sqrt(2)))
    return float(np.mean(np.maximum(p_one, 1 - p_one)))


# ---------------------------------------------------------------------------
# simple fusion baselines over pooled features


BASELINE_METHODS = ("concat", "add", "max", "linear", "mlp")


def pooled_features(split: Split) -> list:
    """Per-modality (n, D) features: mean over sequence positions."""
    return [x.mean(axis=1) for x in split.features]


def init_baseline(method: str, d_model: int, n_modalities: int, n_out: int, rng: np.random.Generator) -> dict:
    base = method.split(":")[0]
    if base == "concat":
        return {"w": _linear_init(rng, n_modalities * d_model, n_out), "b": _bias(n_out)}
    if base in ("add", "max", "uni"):
        return {"w": _linear_init(rng, d_model, n_out), "b": _bias(n_out)}
    if base == "linear":
        return {
            "lam": Tensor(np.ones(n_modalities) / n_modalities, requires_grad=True),
            "w": _linear_init(rng, d_model, n_out),
            "b": _bias(n_out),
        }
    if base == "mlp":
        hidden = 2 * d_model
        return {
            "w1": _linear_init(rng, n_modalities * d_model, hidden),
            "b1": _bias(hidden),
            "w2": _linear_init(rng, hidden, n_out),
            "b2": _bias(n_out),
        }
    raise ValueError(f"unknown baseline method: {method!r}")


def baseline_forward(method: str, features: list, params: dict) -> Tensor:
    """Score pooled per-modality features with one of the stock fusions.

    `uni:<m>` uses modality m alone; the others combine all modalities by
    concatenation, addition, elementwise maximum, learned scalar weights,
    or a two-layer perceptron.
    """
    base, _, arg = method.partition(":")
    if base == "uni":
        return _linear(features[int(arg)], params["w"], params["b"])
    if base == "concat":
        return _linear(T.concat_last(features), params["w"], params["b"])
    if base == "add":
        combined = features[0]
        for f in features[1:]:
            combined = T.add(combined, f)
        return _linear(combined, params["w"], params["b"])
    if base == "max":
        combined = features[0]
        for f in features[1:]:
            combined = T.maximum(combined, f)
        return _linear(combined, params["w"], params["b"])
    if base == "linear":
        combined = None
        for m, f in enumerate(features):
            term = T.mul(f, T.slice_last(params["lam"], m, m + 1))
            combined = term if combined is None else T.add(combined, term)
        return _linear(combined, params["w"], params["b"])
    if base == "mlp":
        hidden = T.gelu(_linear(T.concat_last(features), params["w1"], params["b1"]))
        return _linear(hidden, params["w2"], params["b2"])
    raise ValueError(f"unknown baseline method: {method!r}")

