"""Probabilistic binary classifiers trained under strictly proper scoring rules."""

from .boosting import BoostedEnsemble, BoostingParams, fit_boosted_classifier, fit_boosted_regression
from .logistic import LinearScoreModel, LogisticParams, fit_linear_score
from .losses import EPS, ZERO_ONE_DIVERGENCE, DivergenceInfo, Loss, ScoringRuleError, clamp
from .model import (
    DEFAULT_BOOSTING_GRID,
    ClassifierSpec,
    Family,
    ProbabilisticClassifier,
    constant_classifier,
    cv_risk,
    fit,
    score_residual,
    stratified_folds,
    tune,
)

__all__ = [
    "BoostedEnsemble", "BoostingParams", "ClassifierSpec", "DEFAULT_BOOSTING_GRID",
    "DivergenceInfo", "EPS", "Family", "LinearScoreModel", "LogisticParams", "Loss",
    "ProbabilisticClassifier", "ScoringRuleError", "ZERO_ONE_DIVERGENCE", "clamp",
    "constant_classifier", "cv_risk", "fit", "fit_boosted_classifier",
    "fit_boosted_regression", "fit_linear_score", "score_residual",
    "stratified_folds", "tune",
]
