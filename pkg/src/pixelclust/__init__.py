"""Single-image unsupervised segmentation by per-image pixel clustering."""

from .errors import ConfigurationError, DivergenceError, InputError
from .losses import LossConfig
from .metrics import MetricReport, evaluate
from .network import ClusterNetwork
from .postprocess import refine
from .superpixels import slic
from .train import TrainConfig, TrainTrace, train_ois, train_one

__version__ = "0.1.0"

__all__ = [
    "ClusterNetwork",
    "ConfigurationError",
    "DivergenceError",
    "InputError",
    "LossConfig",
    "MetricReport",
    "TrainConfig",
    "TrainTrace",
    "evaluate",
    "refine",
    "slic",
    "train_one",
    "train_ois",
    "__version__",
]
