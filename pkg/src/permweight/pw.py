"""Permutation weighting.

For each replicate a classifier learns to tell a bootstrap of the observed
rows (label 0) from a draw of the product of marginals (label 1). Its odds
``p / (1 - p)`` at the original rows estimate the density ratio
``p(a) p(x) / p(a, x)``; replicate odds are averaged.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .classifiers import EPS, ClassifierSpec, Family, ProbabilisticClassifier, fit, tune
from .classifiers.logistic import LinearScoreModel
from .data import Dataset, Normalization, WeightSet, hajek_normalize
from .resampling import (
    Purpose,
    ReplicateSeed,
    bootstrap_observed,
    build_training_set,
    feature_map,
    resample_marginals,
    stream,
)


class ReplicateError(RuntimeError):
    def __init__(self, replicate_index: int, cause: BaseException):
        super().__init__(f"replicate {replicate_index} failed twice: {cause}")
        self.replicate_index = replicate_index


@dataclass(frozen=True)
class StochasticConfig:
    batch_size: int = 256
    iterations: int = 2000
    step_size: float = 1.0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.iterations < 1:
            raise ValueError("stochastic iterations must be >= 1")
        if self.step_size < 0:
            raise ValueError("step_size must be >= 0")


@dataclass(frozen=True)
class PwConfig:
    classifier: ClassifierSpec = field(default_factory=ClassifierSpec.logistic_default)
    replicates: int = 100
    normalization: Normalization = Normalization.NONE
    stochastic: StochasticConfig | None = None

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        object.__setattr__(self, "normalization", Normalization(self.normalization))

    def to_dict(self) -> dict[str, Any]:
        return {
            "classifier": self.classifier.to_dict(),
            "replicates": self.replicates,
            "normalization": self.normalization.value,
            "stochastic": None if self.stochastic is None else dataclasses.asdict(self.stochastic),
        }


@dataclass
class ReplicateTrace:
    replicate_index: int
    risk: float
    clamp_count: int
    weights: np.ndarray
    observed_indices: np.ndarray
    attempts: int = 1
    warnings: list[str] = field(default_factory=list)


@dataclass
class PwResult:
    weight_set: WeightSet
    traces: list[ReplicateTrace]
    classifier: ClassifierSpec
    cv_table: list = field(default_factory=list)


def odds_weights(model: ProbabilisticClassifier, features: np.ndarray,
                 eps: float = EPS) -> tuple[np.ndarray, int]:
    """Clamped odds ``p / (1 - p)`` and the number of clamped probabilities."""
    p = model.loss.probability(model.raw_score(features))
    clamped = int(np.sum((p < eps) | (p > 1.0 - eps)))
    p = np.clip(p, eps, 1.0 - eps)
    return p / (1.0 - p), clamped


def _one_replicate(dataset, spec, seed: ReplicateSeed, eval_features) -> ReplicateTrace:
    error: BaseException | None = None
    for attempt in (0, 1):
        s = ReplicateSeed(seed.master_seed, seed.replicate_index, attempt)
        try:
            idx = bootstrap_observed(dataset, s)
            pairs = build_training_set(idx, resample_marginals(dataset, s), dataset)
            model = fit(spec, pairs.features, pairs.labels, s.rng(Purpose.FIT))
            w, clamped = odds_weights(model, eval_features)
            if not np.all(np.isfinite(w)):
                raise FloatingPointError("non-finite weights")
        except (ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
            error = exc
            continue
        return ReplicateTrace(seed.replicate_index, model.training_risk, clamped, w, idx,
                              attempt + 1, list(model.warnings))
    raise ReplicateError(seed.replicate_index, error)


def resolve_classifier(dataset: Dataset, spec: ClassifierSpec, master_seed: int):
    """Run CV once on replicate 0's training set; later replicates reuse the choice."""
    if not spec.tunes:
        return spec, []
    s = ReplicateSeed(master_seed, 0)
    pairs = build_training_set(bootstrap_observed(dataset, s), resample_marginals(dataset, s), dataset)
    return tune(spec, pairs.features, pairs.labels, s.rng(Purpose.TUNE))


def estimate_pw_weights(
    dataset: Dataset,
    config: PwConfig,
    master_seed: int,
    threads: int = 1,
    keep_traces: bool = False,
) -> PwResult:
    """Average replicate odds-ratio weights over ``config.replicates`` replicates.

    Replicates may run on several threads; results are reduced in
    replicate order so the output does not depend on ``threads``.
    """
    spec, table = resolve_classifier(dataset, config.classifier, master_seed)
    eval_features = feature_map(dataset.treatment, dataset.covariates)

    def run(b):
        return _one_replicate(dataset, spec, ReplicateSeed(master_seed, b), eval_features)

    B = config.replicates
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            traces = list(pool.map(run, range(B)))
    else:
        traces = [run(b) for b in range(B)]

    total = np.zeros(dataset.n)
    for tr in traces:
        total += tr.weights
    weights = total / B
    clamp_count = sum(tr.clamp_count for tr in traces)
    if config.normalization is Normalization.HAJEK:
        weights = hajek_normalize(weights)
    tag = f"pw-{spec.family.value}-{spec.loss.value}"
    extra = {"retried_replicates": [t.replicate_index for t in traces if t.attempts > 1]}
    ws = WeightSet(weights, B, config.normalization, clamp_count, tag, extra)
    return PwResult(ws, traces if keep_traces else [], spec, table)


def estimate_pw_weights_stochastic(dataset: Dataset, config: PwConfig, master_seed: int) -> PwResult:
    """Train one linear-score model by mini-batch gradient descent.

    Each step pairs a fresh bootstrap batch of observed rows (label 0) with a
    fresh product-of-marginals batch (label 1). Features are standardized
    with the observed-row moments and the step size decays as
    ``step_size / sqrt(t + 1)``. Starts from all-zero coefficients.
    """
    if config.stochastic is None:
        raise ValueError("config.stochastic must be set for the stochastic variant")
    spec = config.classifier
    if spec.family is not Family.LOGISTIC:
        raise ValueError("stochastic training supports the logistic family only")
    sc = config.stochastic
    loss, l2 = spec.loss, spec.logistic.l2_penalty
    eval_features = feature_map(dataset.treatment, dataset.covariates)
    mu = eval_features.mean(axis=0)
    sd = eval_features.std(axis=0)
    sd[sd == 0] = 1.0
    p = eval_features.shape[1]
    theta = np.zeros(p + 1)  # standardized intercept + slopes
    rng = stream(master_seed, 0, int(Purpose.STOCHASTIC))
    n, k = dataset.n, sc.batch_size
    labels = np.concatenate([np.zeros(k), np.ones(k)])
    for t in range(sc.iterations):
        io = rng.integers(0, n, size=k)
        ia = rng.integers(0, n, size=k)
        ix = rng.integers(0, n, size=k)
        X = np.vstack([
            feature_map(dataset.treatment[io], dataset.covariates[io]),
            feature_map(dataset.treatment[ia], dataset.covariates[ix]),
        ])
        Z = (X - mu) / sd
        g = loss.gradient(theta[0] + Z @ theta[1:], labels)
        grad = np.concatenate(([g.mean()], Z.T @ g / (2 * k)))
        # ridge acts on original-scale slopes, scaled to the per-row risk
        grad[1:] += l2 / (2 * n) * theta[1:] / sd**2
        theta -= sc.step_size / np.sqrt(t + 1.0) * grad
    coef = theta[1:] / sd
    intercept = theta[0] - float(mu @ coef)
    model = ProbabilisticClassifier(spec, p, LinearScoreModel(intercept, coef, sc.iterations),
                                    float("nan"), sc.iterations)
    w, clamped = odds_weights(model, eval_features)
    if config.normalization is Normalization.HAJEK:
        w = hajek_normalize(w)
    tag = f"pw-stochastic-{spec.loss.value}"
    ws = WeightSet(w, 1, config.normalization, clamped, tag)
    return PwResult(ws, [], spec)
