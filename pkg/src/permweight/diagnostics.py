"""Balance diagnostics.

A weighting is balanced for a pair of functions ``phi(a)`` and ``psi(x)`` when
the weighted mean of ``phi(a) psi(x)`` matches its value under independent
treatment and covariates, estimated here by ``mean(phi(a)) * mean(psi(x))``.
"""

from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .classifiers import Family, ProbabilisticClassifier, constant_classifier, fit, score_residual
from .data import Dataset, WeightSet, write_header
from .pw import PwConfig, odds_weights
from .resampling import (
    LabeledPairSet,
    Purpose,
    ReplicateSeed,
    bootstrap_observed,
    build_training_set,
    feature_map,
    resample_marginals,
)


class Basis(enum.Enum):
    LINEAR = "linear"
    QUADRATIC = "quadratic"
    PAIRWISE = "pairwise"


@dataclass(frozen=True)
class BalanceRow:
    basis_id: str
    unweighted: float
    weighted: float
    target: float
    discrepancy: float
    unweighted_discrepancy: float
    standardized: float


@dataclass
class BalanceReport:
    rows: list[BalanceRow]
    classifier_risk: float | None = None
    clamp_count: int = 0
    meta: dict[str, Any] = field(default_factory=dict)

    @property
    def discrepancies(self) -> np.ndarray:
        return np.array([r.discrepancy for r in self.rows])

    def mean_discrepancy(self) -> float:
        return float(np.mean(self.discrepancies))

    def to_dict(self) -> dict[str, Any]:
        return {
            "rows": [asdict(r) for r in self.rows],
            "classifier_risk": self.classifier_risk,
            "clamp_count": self.clamp_count,
            **self.meta,
        }

    def write_table(self, path: str | Path, meta: dict[str, Any] | None = None) -> None:
        cols = list(BalanceRow.__dataclass_fields__)
        with open(path, "w") as fh:
            write_header(fh, meta)
            fh.write(",".join(cols) + "\n")
            for r in self.rows:
                vals = [getattr(r, c) for c in cols]
                fh.write(",".join(v if isinstance(v, str) else repr(float(v)) for v in vals) + "\n")

    def write_json(self, path: str | Path, meta: dict[str, Any] | None = None) -> None:
        with open(path, "w") as fh:
            json.dump({**(meta or {}), **self.to_dict()}, fh, indent=2, sort_keys=True)
            fh.write("\n")


def basis_pairs(dataset: Dataset, basis: Basis | str) -> list[tuple[str, np.ndarray, np.ndarray]]:
    """``(id, phi(a), psi(x))`` columns for a basis family."""
    basis = Basis(basis)
    a, x, names = dataset.treatment, dataset.covariates, dataset.covariate_names
    pairs = [(f"a*{names[j]}", a, x[:, j]) for j in range(dataset.d)]
    if basis is Basis.QUADRATIC:
        pairs += [(f"a*{names[j]}^2", a, x[:, j] ** 2) for j in range(dataset.d)]
        if not dataset.is_binary:  # a^2 == a for binary treatment
            pairs += [(f"a^2*{names[j]}", a**2, x[:, j]) for j in range(dataset.d)]
    elif basis is Basis.PAIRWISE:
        pairs += [
            (f"a*{names[j]}*{names[k]}", a, x[:, j] * x[:, k])
            for j in range(dataset.d) for k in range(j + 1, dataset.d)
        ]
    return pairs


def functional_discrepancy(
    dataset: Dataset,
    weights: WeightSet | np.ndarray | None,
    basis: Basis | str = Basis.LINEAR,
) -> BalanceReport:
    w = np.ones(dataset.n) if weights is None else (
        weights.weights if isinstance(weights, WeightSet) else np.asarray(weights, float)
    )
    if w.shape != (dataset.n,):
        raise ValueError(f"expected {dataset.n} weights, got shape {w.shape}")
    wt = w / w.sum()
    rows = []
    for name, phi, psi in basis_pairs(dataset, basis):
        prod = phi * psi
        target = float(phi.mean() * psi.mean())
        weighted = float(np.dot(wt, prod))
        unweighted = float(prod.mean())
        disc = abs(weighted - target)
        scale = float(phi.std() * psi.std())
        rows.append(BalanceRow(name, unweighted, weighted, target, disc,
                               abs(unweighted - target), disc / scale if scale > 0 else 0.0))
    clamp = weights.clamp_count if isinstance(weights, WeightSet) else 0
    return BalanceReport(rows, clamp_count=clamp, meta={"basis": Basis(basis).value})


def score_condition_residual(model: ProbabilisticClassifier, data: LabeledPairSet) -> np.ndarray:
    """Per-feature ``|sum_i (c_i - p_i) f_i|``, intercept first."""
    return score_residual(model, data.features, data.labels)


def bias_bound_check(y: np.ndarray, true_weights: np.ndarray,
                     est_weights: np.ndarray) -> tuple[float, float]:
    """``(|mean(y w_hat) - mean(y w)|, mean(|y| |w_hat - w|))``; lhs <= rhs always."""
    y = np.asarray(y, float)
    w = np.asarray(true_weights, float)
    wh = np.asarray(est_weights, float)
    if not (y.shape == w.shape == wh.shape):
        raise ValueError("y, true_weights and est_weights must have equal length")
    lhs = abs(float(np.mean(y * wh)) - float(np.mean(y * w)))
    rhs = float(np.mean(np.abs(y) * np.abs(wh - w)))
    return lhs, rhs


@dataclass(frozen=True)
class RiskBalancePoint:
    level: int
    held_out_risk: float
    linear_discrepancy: float


def balance_vs_risk_curve(
    dataset: Dataset,
    config: PwConfig,
    risk_levels: Sequence[int],
    master_seed: int = 0,
) -> list[RiskBalancePoint]:
    """Held-out risk and linear imbalance for classifiers of growing capacity.

    A level is the number of trees (boosting) or Newton iterations
    (logistic); level 0 is the intercept-only model. Each classifier is
    trained on one replicate's pair set, scored on an independent pair set,
    and its odds at the original rows give the weights.
    """
    spec = config.classifier.untuned()
    s_train, s_test = ReplicateSeed(master_seed, 0), ReplicateSeed(master_seed, 1)
    train = build_training_set(bootstrap_observed(dataset, s_train),
                               resample_marginals(dataset, s_train), dataset)
    test = build_training_set(bootstrap_observed(dataset, s_test),
                              resample_marginals(dataset, s_test), dataset)
    eval_features = feature_map(dataset.treatment, dataset.covariates)
    out = []
    for level in risk_levels:
        level = int(level)
        if level < 0:
            raise ValueError("risk levels must be >= 0")
        if level == 0:
            model = constant_classifier(spec, eval_features.shape[1], float(train.labels.mean()))
        else:
            key = "num_trees" if spec.family is Family.BOOSTING else "max_iterations"
            model = fit(spec.with_hyperparameters({key: level}), train.features, train.labels,
                        s_train.rng(Purpose.FIT))
        p = model.predict_proba(test.features)
        risk = float(np.mean(spec.loss.score_probability(p, test.labels)))
        w, _ = odds_weights(model, eval_features)
        disc = functional_discrepancy(dataset, w, Basis.LINEAR).mean_discrepancy()
        out.append(RiskBalancePoint(level, risk, disc))
    return out
