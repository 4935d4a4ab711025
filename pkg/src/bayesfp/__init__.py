"""Bayesian fractional polynomial model search via genetically modified mode-jumping MCMC."""

from .data import Dataset, DataError, from_arrays, load_csv, split, write_csv
from .evidence import EvidenceEvaluator, Model, PriorConfig, evaluate_model
from .transforms import Feature, Transform, parse_feature

__all__ = [
    "Dataset",
    "DataError",
    "EvidenceEvaluator",
    "Feature",
    "Model",
    "PriorConfig",
    "Transform",
    "evaluate_model",
    "from_arrays",
    "load_csv",
    "parse_feature",
    "split",
    "write_csv",
]

__version__ = "0.1.0"
