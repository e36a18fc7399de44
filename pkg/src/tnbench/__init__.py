"""Tensor-network generative models and a multi-objective benchmark harness."""

from .metrics import dominates, frechet_distance, hv_contribution, hypervolume, pareto_front
from .sequences import TokenAlphabet, build_alphabet, dataset_from_strings, load_dataset
from .tn import TNKind, TNModel, init_model, log_prob, nll, sample_indices

__version__ = "0.1.0"

__all__ = [
    "TNKind", "TNModel", "TokenAlphabet", "build_alphabet", "dataset_from_strings", "dominates",
    "frechet_distance", "hv_contribution", "hypervolume", "init_model", "load_dataset", "log_prob",
    "nll", "pareto_front", "sample_indices",
]
