"""Bootstrap and marginal resampling, and the labeled classification set.

Every random draw comes from a Philox stream keyed by
``(master_seed, replicate_index, purpose, attempt)``, so any replicate can be
regenerated in isolation and in any order.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .data import Dataset


class Purpose(enum.IntEnum):
    OBSERVED = 0
    TREATMENT = 1
    COVARIATES = 2
    FIT = 3
    TUNE = 4
    SIMULATION = 5
    STOCHASTIC = 6


def stream(*keys: int) -> np.random.Generator:
    """Independent generator for a tuple of nonnegative integer keys."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(k) for k in keys])))


@dataclass(frozen=True)
class ReplicateSeed:
    master_seed: int
    replicate_index: int = 0
    attempt: int = 0

    def __post_init__(self):
        if self.master_seed < 0 or self.master_seed >= 2**64:
            raise ValueError("master_seed must be a 64-bit nonnegative integer")
        if self.replicate_index < 0:
            raise ValueError("replicate_index must be >= 0")

    def rng(self, purpose: Purpose) -> np.random.Generator:
        return stream(self.master_seed, self.replicate_index, int(purpose), self.attempt)

    def retry(self) -> "ReplicateSeed":
        return ReplicateSeed(self.master_seed, self.replicate_index, self.attempt + 1)


def bootstrap_observed(dataset: Dataset | int, seed: ReplicateSeed) -> np.ndarray:
    """n row indices drawn uniformly with replacement."""
    n = dataset if isinstance(dataset, int) else dataset.n
    return seed.rng(Purpose.OBSERVED).integers(0, n, size=n)


@dataclass(frozen=True)
class PseudoSample:
    """Draw from the product of the treatment and covariate-row marginals."""

    treatment: np.ndarray
    covariates: np.ndarray
    treatment_index: np.ndarray
    covariate_index: np.ndarray

    @property
    def n(self) -> int:
        return int(self.treatment.shape[0])


def resample_marginals(dataset: Dataset, seed: ReplicateSeed, size: int | None = None) -> PseudoSample:
    """Independent with-replacement draws of treatments and whole covariate rows."""
    n = dataset.n
    size = n if size is None else size
    ia = seed.rng(Purpose.TREATMENT).integers(0, n, size=size)
    ix = seed.rng(Purpose.COVARIATES).integers(0, n, size=size)
    return PseudoSample(dataset.treatment[ia], dataset.covariates[ix], ia, ix)


def feature_map(treatment: np.ndarray, covariates: np.ndarray) -> np.ndarray:
    """Rows ``[x, a, a * x]``; shape (n, 2d + 1)."""
    a = np.asarray(treatment, dtype=float).reshape(-1, 1)
    x = np.asarray(covariates, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    return np.hstack([x, a, a * x])


@dataclass(frozen=True)
class LabeledPairSet:
    """Observed block (label 0) stacked over a pseudo block (label 1)."""

    features: np.ndarray
    labels: np.ndarray
    n_observed: int

    @property
    def m(self) -> int:
        return int(self.labels.shape[0])

    @property
    def d(self) -> int:
        return (self.features.shape[1] - 1) // 2


def build_training_set(observed_indices: np.ndarray, pseudo: PseudoSample,
                       dataset: Dataset) -> LabeledPairSet:
    idx = np.asarray(observed_indices, dtype=np.int64)
    if idx.shape[0] != pseudo.n:
        raise ValueError(
            f"observed block has {idx.shape[0]} rows but pseudo block has {pseudo.n}"
        )
    if pseudo.covariates.shape[1] != dataset.d:
        raise ValueError("pseudo-sample covariate width does not match dataset")
    obs = feature_map(dataset.treatment[idx], dataset.covariates[idx])
    pse = feature_map(pseudo.treatment, pseudo.covariates)
    labels = np.concatenate([np.zeros(idx.shape[0]), np.ones(pseudo.n)])
    return LabeledPairSet(np.vstack([obs, pse]), labels, int(idx.shape[0]))
