"""Inverse propensity score weights.

Binary treatment uses a logistic or boosted propensity model; continuous
treatment uses a homoskedastic normal-linear generalized propensity score,
stabilized by a normal fit to the treatment marginal.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .classifiers import EPS, ClassifierSpec, Family, ProbabilisticClassifier, fit
from .data import Dataset, Normalization, TreatmentKind, WeightSet
from .resampling import Purpose, ReplicateSeed


class PropensityKind(enum.Enum):
    LOGISTIC = "logistic-ps"
    BOOSTED = "boosted-ps"
    NORMAL_LINEAR = "normal-linear-gps"


@dataclass(frozen=True)
class NormalLinearFit:
    intercept: float
    coef: np.ndarray
    residual_sd: float
    marginal_mean: float
    marginal_sd: float


@dataclass
class PropensityModel:
    kind: PropensityKind
    classifier: ProbabilisticClassifier | None = None
    gps: NormalLinearFit | None = None

    def treated_probability(self, covariates: np.ndarray) -> tuple[np.ndarray, int]:
        """Clamped ``P(A = 1 | x)`` and the number of clamped values."""
        if self.classifier is None:
            raise TypeError("treated_probability needs a binary propensity model")
        p = self.classifier.loss.probability(self.classifier.raw_score(covariates))
        clamped = int(np.sum((p < EPS) | (p > 1.0 - EPS)))
        return np.clip(p, EPS, 1.0 - EPS), clamped

    def conditional_density(self, treatment: np.ndarray, covariates: np.ndarray) -> np.ndarray:
        g = self._require_gps()
        mean = g.intercept + np.asarray(covariates, dtype=float) @ g.coef
        return norm.pdf(treatment, loc=mean, scale=g.residual_sd)

    def marginal_density(self, treatment: np.ndarray) -> np.ndarray:
        g = self._require_gps()
        return norm.pdf(treatment, loc=g.marginal_mean, scale=g.marginal_sd)

    def _require_gps(self) -> NormalLinearFit:
        if self.gps is None:
            raise TypeError("densities need a normal-linear GPS model")
        return self.gps


def _fit_normal_linear(a: np.ndarray, x: np.ndarray) -> NormalLinearFit:
    design = np.hstack([np.ones((x.shape[0], 1)), x])
    beta, *_ = np.linalg.lstsq(design, a, rcond=None)
    resid = a - design @ beta
    sigma = float(np.sqrt(np.mean(resid**2)))
    tau = float(np.std(a))
    if sigma <= 0 or tau <= 0:
        raise ValueError("normal-linear GPS needs positive residual and marginal variance")
    return NormalLinearFit(float(beta[0]), beta[1:], sigma, float(np.mean(a)), tau)


def fit_propensity(
    dataset: Dataset,
    kind: PropensityKind | str,
    spec: ClassifierSpec | None = None,
    seed: int = 0,
) -> PropensityModel:
    """Fit a propensity model of treatment on covariates.

    ``spec`` configures the boosted model (defaults to the permutation
    weighting boosting defaults, so both share hyperparameters).
    """
    kind = PropensityKind(kind)
    binary = dataset.treatment_kind is TreatmentKind.BINARY
    if kind is PropensityKind.NORMAL_LINEAR:
        if binary:
            raise ValueError("normal-linear GPS requires a continuous treatment")
        return PropensityModel(kind, gps=_fit_normal_linear(dataset.treatment, dataset.covariates))
    if not binary:
        raise ValueError(f"{kind.value} requires a binary treatment")
    if kind is PropensityKind.LOGISTIC:
        spec = ClassifierSpec.logistic_default()
    elif spec is None:
        spec = ClassifierSpec.boosting_default()
    elif spec.family is not Family.BOOSTING:
        raise ValueError("boosted propensity model needs a boosting spec")
    rng = ReplicateSeed(seed, 0).rng(Purpose.FIT)
    model = fit(spec, dataset.covariates, dataset.treatment, rng)
    return PropensityModel(kind, classifier=model)


def ipsw_weights(model: PropensityModel, dataset: Dataset, stabilized: bool = True) -> WeightSet:
    """Inverse propensity weights for the observed treatment of each unit.

    Binary: ``1 / p(a_i | x_i)``, times the empirical share of arm ``a_i``
    when stabilized. Continuous: always stabilized, marginal over
    conditional normal density.
    """
    a, x = dataset.treatment, dataset.covariates
    if model.kind is PropensityKind.NORMAL_LINEAR:
        g = model.gps
        cond_mean = g.intercept + x @ g.coef
        # ratio of log densities avoids 0/0 in far tails
        w = np.exp(norm.logpdf(a, g.marginal_mean, g.marginal_sd)
                   - norm.logpdf(a, cond_mean, g.residual_sd))
        return WeightSet(w, 1, Normalization.NONE, 0, "ipsw-normal-linear-gps")
    p1, clamped = model.treated_probability(x)
    p_obs = np.where(a == 1.0, p1, 1.0 - p1)
    w = 1.0 / p_obs
    if stabilized:
        share1 = float(np.mean(a))
        w = w * np.where(a == 1.0, share1, 1.0 - share1)
    tag = f"ipsw-{model.kind.value}" + ("-stabilized" if stabilized else "")
    return WeightSet(w, 1, Normalization.NONE, clamped, tag)


__all__ = [
    "NormalLinearFit", "PropensityKind", "PropensityModel", "fit_propensity",
    "ipsw_weights",
]
