"""modalsplit: partitioned multimodal representation learning, desk scale."""

from .model import Model, ModelDims, build_model, module_param_counts
from .synth import SynthConfig, SynthDataset, bayes_oracle, generate
from .tensor import NonFiniteError, Tape, Tensor
from .training import MetricsReport, TrainConfig, evaluate, pretrain, run_benchmark, train_joint

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "Tape",
    "NonFiniteError",
    "Model",
    "ModelDims",
    "build_model",
    "module_param_counts",
    "SynthConfig",
    "SynthDataset",
    "generate",
    "bayes_oracle",
    "TrainConfig",
    "MetricsReport",
    "pretrain",
    "train_joint",
    "evaluate",
    "run_benchmark",
    "__version__",
]
