"""Disentangled incremental retraining for graph-based recommenders."""

from .config import ExperimentConfig, parse_config, parse_config_text
from .engine import SparseMatrix, Tape, Tensor, backward
from .pipeline import run_pipeline

__version__ = "0.1.0"

__all__ = [
    "ExperimentConfig",
    "SparseMatrix",
    "Tape",
    "Tensor",
    "backward",
    "parse_config",
    "parse_config_text",
    "run_pipeline",
    "__version__",
]
