"""Classifier specifications, fitting, prediction and cross-validated tuning."""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from .boosting import BoostedEnsemble, BoostingParams, fit_boosted_classifier
from .logistic import LinearScoreModel, LogisticParams, fit_linear_score
from .losses import EPS, Loss, clamp


class Family(enum.Enum):
    LOGISTIC = "logistic-interaction"
    BOOSTING = "boosted-trees"

    @classmethod
    def parse(cls, name: "str | Family") -> "Family":
        if isinstance(name, Family):
            return name
        key = str(name).strip().lower()
        aliases = {
            "logit": cls.LOGISTIC, "glm": cls.LOGISTIC, "logistic": cls.LOGISTIC,
            "boosting": cls.BOOSTING, "gbt": cls.BOOSTING, "boosted": cls.BOOSTING,
        }
        if key in aliases:
            return aliases[key]
        return cls(key)


DEFAULT_BOOSTING_GRID: tuple[dict[str, Any], ...] = tuple(
    {"max_depth": depth, "num_trees": trees} for depth in (1, 2) for trees in (50, 100)
)


@dataclass(frozen=True)
class ClassifierSpec:
    """What to fit: model family, scoring rule, hyperparameters and CV setup.

    ``cv_grid`` entries are partial hyperparameter records; each overrides
    the base hyperparameters of the family in use.
    """

    family: Family = Family.LOGISTIC
    loss: Loss = Loss.LOG
    logistic: LogisticParams = LogisticParams()
    boosting: BoostingParams = BoostingParams()
    cv_folds: int = 0
    cv_grid: tuple[Mapping[str, Any], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "family", Family.parse(self.family))
        object.__setattr__(self, "loss", Loss.parse(self.loss))
        object.__setattr__(self, "cv_grid", tuple(dict(g) for g in self.cv_grid))
        if self.cv_folds == 1 or self.cv_folds < 0:
            raise ValueError("cv_folds must be 0 (disabled) or >= 2")
        for point in self.cv_grid:
            self._override(point)  # validates names and ranges

    @classmethod
    def logistic_default(cls, l2_penalty: float = 0.0) -> "ClassifierSpec":
        return cls(Family.LOGISTIC, Loss.LOG, LogisticParams(l2_penalty=l2_penalty))

    @classmethod
    def boosting_default(cls, loss: Loss | str = Loss.EXPONENTIAL) -> "ClassifierSpec":
        return cls(Family.BOOSTING, Loss.parse(loss), cv_folds=3, cv_grid=DEFAULT_BOOSTING_GRID)

    @property
    def hyperparameters(self) -> LogisticParams | BoostingParams:
        return self.logistic if self.family is Family.LOGISTIC else self.boosting

    @property
    def tunes(self) -> bool:
        return self.cv_folds >= 2 and len(self.cv_grid) > 0

    def _override(self, overrides: Mapping[str, Any]) -> LogisticParams | BoostingParams:
        base = self.hyperparameters
        unknown = set(overrides) - {f.name for f in dataclasses.fields(base)}
        if unknown:
            raise ValueError(f"unknown hyperparameters for {self.family.value}: {sorted(unknown)}")
        return dataclasses.replace(base, **dict(overrides))

    def with_hyperparameters(self, overrides: Mapping[str, Any]) -> "ClassifierSpec":
        new = self._override(overrides)
        if self.family is Family.LOGISTIC:
            return dataclasses.replace(self, logistic=new)
        return dataclasses.replace(self, boosting=new)

    def untuned(self) -> "ClassifierSpec":
        return dataclasses.replace(self, cv_folds=0, cv_grid=())

    def to_dict(self) -> dict[str, Any]:
        return {
            "family": self.family.value,
            "loss": self.loss.value,
            "hyperparameters": dataclasses.asdict(self.hyperparameters),
            "cv_folds": self.cv_folds,
            "cv_grid": [dict(g) for g in self.cv_grid],
        }


@dataclass
class ProbabilisticClassifier:
    """A fitted class-probability model for the label ``C``."""

    spec: ClassifierSpec
    n_features: int
    model: LinearScoreModel | BoostedEnsemble
    training_risk: float
    iterations: int
    warnings: list[str] = field(default_factory=list)
    cv_table: list[tuple[dict[str, Any], float]] = field(default_factory=list)

    @property
    def loss(self) -> Loss:
        return self.spec.loss

    @property
    def coefficients(self) -> np.ndarray:
        """Intercept followed by slopes (logistic family only)."""
        if not isinstance(self.model, LinearScoreModel):
            raise TypeError("coefficients exist only for the logistic family")
        return np.concatenate(([self.model.intercept], self.model.coef))

    def raw_score(self, features: np.ndarray) -> np.ndarray:
        X = np.asarray(features, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(
                f"feature width {X.shape[-1] if X.ndim else 0} does not match "
                f"training width {self.n_features}"
            )
        return self.model.raw_score(X)

    def predict_proba(self, features: np.ndarray, eps: float = EPS) -> np.ndarray:
        return clamp(self.loss.probability(self.raw_score(features)), eps)

    def summary(self) -> dict[str, Any]:
        out = self.spec.to_dict()
        out["diagnostics"] = {
            "training_risk": self.training_risk,
            "iterations": self.iterations,
            "warnings": list(self.warnings),
        }
        if self.cv_table:
            out["cv"] = [{"hyperparameters": p, "risk": r} for p, r in self.cv_table]
        return out


def _fit_once(spec, X, c, rng, sample_weight):
    if spec.family is Family.LOGISTIC:
        model = fit_linear_score(X, c, spec.loss, spec.logistic, sample_weight)
        iterations, notes = model.iterations, list(model.warnings)
    else:
        model = fit_boosted_classifier(X, c, spec.loss, spec.boosting, rng, sample_weight)
        iterations, notes = model.n_trees, []
    w = np.ones(len(c)) if sample_weight is None else np.asarray(sample_weight, dtype=float)
    risk = float(np.dot(w, spec.loss.pointwise(model.raw_score(X), c)) / w.sum())
    return ProbabilisticClassifier(spec, X.shape[1], model, risk, iterations, notes)


def _check_training_data(X, c):
    X = np.ascontiguousarray(X, dtype=float)
    c = np.asarray(c, dtype=float)
    if X.ndim != 2 or c.ndim != 1 or X.shape[0] != c.shape[0]:
        raise ValueError("features must be (m, p) and labels length m")
    if not np.all((c == 0) | (c == 1)):
        raise ValueError("labels must be 0 or 1")
    return X, c


def stratified_folds(c: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Fold id per row; each class is shuffled then dealt round-robin."""
    c = np.asarray(c)
    folds = np.empty(c.shape[0], dtype=np.int64)
    offset = 0
    for label in (0, 1):
        idx = np.flatnonzero(c == label)
        idx = idx[rng.permutation(idx.size)]
        folds[idx] = (np.arange(idx.size) + offset) % k
        offset += idx.size
    return folds


def _held_out_risk(spec, X, c, folds, k, rng):
    risks = []
    for f in range(k):
        test = folds == f
        train = ~test
        if not test.any():
            continue
        c_train = c[train]
        if c_train.min() == c_train.max():
            # single-class training fold: predict its clamped base rate
            p = np.full(int(test.sum()), float(c_train[0]))
        else:
            model = _fit_once(spec, X[train], c_train, rng, None)
            p = model.predict_proba(X[test])
        risks.append(float(np.mean(spec.loss.score_probability(p, c[test]))))
    return float(np.mean(risks))


def cv_risk(
    spec: ClassifierSpec,
    X: np.ndarray,
    c: np.ndarray,
    rng: np.random.Generator,
) -> float:
    """Mean held-out risk under the classifier's scoring rule (stratified folds)."""
    if spec.cv_folds < 2:
        raise ValueError("cv_risk requires cv_folds >= 2")
    X, c = _check_training_data(X, c)
    folds = stratified_folds(c, spec.cv_folds, rng)
    return _held_out_risk(spec.untuned(), X, c, folds, spec.cv_folds, rng)


def tune(
    spec: ClassifierSpec,
    X: np.ndarray,
    c: np.ndarray,
    rng: np.random.Generator,
) -> tuple[ClassifierSpec, list[tuple[dict[str, Any], float]]]:
    """Pick the grid point with the lowest held-out risk.

    All grid points share one fold assignment. Ties go to the earlier point.
    Returns the resolved (untuned) spec and the full risk table.
    """
    X, c = _check_training_data(X, c)
    if not spec.tunes:
        return spec.untuned(), []
    folds = stratified_folds(c, spec.cv_folds, rng)
    table = []
    for point in spec.cv_grid:
        candidate = spec.with_hyperparameters(point).untuned()
        table.append((dict(point), _held_out_risk(candidate, X, c, folds, spec.cv_folds, rng)))
    best = min(range(len(table)), key=lambda i: table[i][1])
    return spec.with_hyperparameters(table[best][0]).untuned(), table


def fit(
    spec: ClassifierSpec,
    X: np.ndarray,
    c: np.ndarray,
    rng: np.random.Generator | None = None,
    sample_weight: np.ndarray | None = None,
) -> ProbabilisticClassifier:
    """Fit a classifier, tuning over ``spec.cv_grid`` first if enabled.

    Parameters
    ----------
    spec : ClassifierSpec
    X : ndarray, shape (m, p)
    c : ndarray, shape (m,)
        Labels in {0, 1}; both classes must be present.
    rng : numpy Generator, optional
        Drives fold assignment and row subsampling.
    sample_weight : ndarray, optional
        Case weights for the training risk.
    """
    X, c = _check_training_data(X, c)
    if c.min() == c.max():
        raise ValueError("both classes must be present to fit a classifier")
    rng = np.random.default_rng(0) if rng is None else rng
    table: list = []
    if spec.tunes:
        spec_final, table = tune(spec, X, c, rng)
    else:
        spec_final = spec
    model = _fit_once(spec_final, X, c, rng, sample_weight)
    model.cv_table = table
    return model


def constant_classifier(spec: ClassifierSpec, n_features: int, probability: float):
    """A logistic-family model predicting ``probability`` everywhere."""
    F = float(spec.loss.raw_score(probability))
    model = LinearScoreModel(F, np.zeros(n_features))
    return ProbabilisticClassifier(spec, n_features, model, float("nan"), 0)


def score_residual(model: ProbabilisticClassifier, X: np.ndarray, c: np.ndarray) -> np.ndarray:
    """``|sum_i (c_i - p_i) f_i|`` per feature, intercept first.

    Zero at an unpenalized log-loss optimum; equals the penalty gradient
    ``l2 * |beta|`` on slopes when a ridge penalty is used.
    """
    if model.spec.family is not Family.LOGISTIC:
        raise TypeError("score residuals are defined for the logistic family only")
    X = np.asarray(X, dtype=float)
    c = np.asarray(c, dtype=float)
    p = model.loss.probability(model.raw_score(X))
    r = c - p
    return np.abs(np.concatenate(([r.sum()], X.T @ r)))


__all__: Sequence[str] = (
    "Family", "ClassifierSpec", "ProbabilisticClassifier", "fit", "cv_risk", "tune",
    "stratified_folds", "constant_classifier", "score_residual", "DEFAULT_BOOSTING_GRID",
)
