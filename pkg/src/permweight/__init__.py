"""Permutation weighting: balancing weights from a classifier that separates
observed (treatment, covariate) pairs from independently resampled ones."""

__version__ = "0.1.0"

from .data import Dataset, Normalization, Schema, TreatmentKind, WeightSet, load_dataset  # noqa: E402
from .pw import PwConfig, PwResult, StochasticConfig, estimate_pw_weights, estimate_pw_weights_stochastic  # noqa: E402
from .classifiers import ClassifierSpec, Family, Loss  # noqa: E402

__all__ = [
    "__version__", "ClassifierSpec", "Dataset", "Family", "Loss", "Normalization",
    "PwConfig", "PwResult", "Schema", "StochasticConfig", "TreatmentKind", "WeightSet",
    "estimate_pw_weights", "estimate_pw_weights_stochastic", "load_dataset",
]
