"""Gradient-boosted regression trees for classification and regression."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .losses import Loss
from .trees import Forest, RegressionTree, grow_tree_with_leaves, presort

_MAX_HALVINGS = 10


@dataclass(frozen=True)
class BoostingParams:
    num_trees: int = 100
    max_depth: int = 2
    learning_rate: float = 0.1
    min_leaf_size: int = 10
    subsample_fraction: float = 1.0

    def __post_init__(self):
        if self.num_trees < 0:
            raise ValueError("num_trees must be >= 0")
        if self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError("learning_rate must lie in (0, 1]")
        if self.min_leaf_size < 1:
            raise ValueError("min_leaf_size must be >= 1")
        if not 0.0 < self.subsample_fraction <= 1.0:
            raise ValueError("subsample_fraction must lie in (0, 1]")


@dataclass
class BoostedEnsemble:
    """Additive tree model ``F(x) = base_score + sum_t tree_t(x)``.

    Tree leaf values already include the learning rate and any step-halving.
    """

    base_score: float
    forest: Forest
    n_features: int
    risk_path: list[float] = field(default_factory=list)

    @property
    def n_trees(self) -> int:
        return self.forest.n_trees

    def raw_score(self, X: np.ndarray, n_trees: int | None = None) -> np.ndarray:
        return self.base_score + self.forest.predict(X, n_trees)


def _boost(X, derivs, base_score, params, rng, weight):
    m = X.shape[0]
    order = presort(X)
    wsum = float(np.sum(weight))
    F = np.full(m, base_score, dtype=float)
    values, g, h = derivs(F)
    risk = float(np.dot(weight, values) / wsum)
    path = [risk]
    trees: list[RegressionTree] = []
    for _ in range(params.num_trees):
        if params.subsample_fraction < 1.0:
            k = max(1, int(round(params.subsample_fraction * m)))
            active = np.zeros(m, dtype=np.bool_)
            active[rng.choice(m, size=k, replace=False)] = True
        else:
            active = None
        tree, leaf = grow_tree_with_leaves(
            X, order, g * weight, h * weight,
            max_depth=params.max_depth, min_leaf=params.min_leaf_size, active=active,
        )
        if active is None:
            contribution = tree.value[leaf]
        else:
            contribution = tree.predict(X)
        # step-halving keeps the in-sample risk non-increasing
        step = params.learning_rate
        accepted = False
        for _ in range(_MAX_HALVINGS + 1):
            F_new = F + step * contribution
            new_values, new_g, new_h = derivs(F_new)
            new_risk = float(np.dot(weight, new_values) / wsum)
            if new_risk <= risk:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        F, risk, g, h = F_new, new_risk, new_g, new_h
        path.append(risk)
        trees.append(tree.scaled(step))
    width = 2 ** (params.max_depth + 1) - 1
    return Forest.from_trees(trees, width), path


def fit_boosted_classifier(
    X: np.ndarray,
    c: np.ndarray,
    loss: Loss,
    params: BoostingParams,
    rng: np.random.Generator,
    sample_weight: np.ndarray | None = None,
) -> BoostedEnsemble:
    """Boost trees on the gradients of a proper scoring rule.

    The base score is the link-transformed (weighted) base rate, so a model
    with zero trees predicts the clamped base rate everywhere.
    """
    X = np.ascontiguousarray(X, dtype=float)
    c = np.asarray(c, dtype=float)
    w = np.ones_like(c) if sample_weight is None else np.asarray(sample_weight, dtype=float)
    base = float(loss.raw_score(np.sum(w * c) / np.sum(w)))

    def derivs(F):
        return loss.derivatives(F, c)

    forest, path = _boost(X, derivs, base, params, rng, w)
    return BoostedEnsemble(base, forest, X.shape[1], path)


def fit_boosted_regression(
    X: np.ndarray,
    y: np.ndarray,
    params: BoostingParams,
    rng: np.random.Generator,
    sample_weight: np.ndarray | None = None,
) -> BoostedEnsemble:
    """Least-squares boosting; leaves hold (weighted) mean residuals."""
    X = np.ascontiguousarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.ones_like(y) if sample_weight is None else np.asarray(sample_weight, dtype=float)
    base = float(np.sum(w * y) / np.sum(w))
    ones = np.ones_like(y)

    def derivs(F):
        r = F - y
        return 0.5 * r * r, r, ones

    forest, path = _boost(X, derivs, base, params, rng, w)
    return BoostedEnsemble(base, forest, X.shape[1], path)
