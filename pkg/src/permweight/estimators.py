"""Causal estimates from weights and outcome models.

All weighting estimators are Hajek-type: weights are renormalized within the
relevant group (treatment arm, or kernel neighbourhood for dose-response), so
rescaling every weight by a positive constant leaves estimates unchanged.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .classifiers import BoostedEnsemble, BoostingParams, fit_boosted_regression
from .data import Dataset, EstimandRequest, WeightSet, effective_sample_size, write_header
from .pw import PwConfig, estimate_pw_weights
from .resampling import Purpose, ReplicateSeed

MIN_KERNEL_MASS = 10.0
# resolution of the treatment grid used to interpolate tree-model direct-method curves
_DM_INTERP_POINTS = 201


def _as_weights(weights: WeightSet | np.ndarray | None, n: int) -> np.ndarray:
    if weights is None:
        return np.ones(n)
    w = weights.weights if isinstance(weights, WeightSet) else np.asarray(weights, dtype=float)
    if w.shape != (n,):
        raise ValueError(f"expected {n} weights, got shape {w.shape}")
    return w


@dataclass(frozen=True)
class BinaryEstimate:
    mean0: float
    mean1: float

    @property
    def ate(self) -> float:
        return self.mean1 - self.mean0

    def as_array(self) -> np.ndarray:
        return np.array([self.mean0, self.mean1])


def _hajek_mean(y, w):
    total = w.sum()
    if total <= 0:
        raise ValueError("weights within a treatment arm sum to zero")
    return float(np.dot(w, y) / total)


def weighted_means_binary(dataset: Dataset, weights: WeightSet | np.ndarray | None = None) -> BinaryEstimate:
    """Per-arm Hajek weighted outcome means."""
    if not dataset.is_binary:
        raise ValueError("weighted_means_binary requires a binary treatment")
    y = dataset.require_outcome()
    w = _as_weights(weights, dataset.n)
    arm1 = dataset.treatment == 1.0
    if arm1.all() or not arm1.any():
        raise ValueError("both treatment arms must be nonempty")
    return BinaryEstimate(_hajek_mean(y[~arm1], w[~arm1]), _hajek_mean(y[arm1], w[arm1]))


# -- local-linear smoothing ------------------------------------------------------


def weighted_quantile(values: np.ndarray, weights: np.ndarray, q: Sequence[float]) -> np.ndarray:
    """Quantiles of the weighted empirical distribution (midpoint interpolation)."""
    order = np.argsort(values, kind="stable")
    v, w = np.asarray(values, float)[order], np.asarray(weights, float)[order]
    cw = np.cumsum(w) - 0.5 * w
    return np.interp(np.asarray(q, float) * w.sum(), cw, v)


def silverman_bandwidth(a: np.ndarray, weights: np.ndarray | None = None) -> float:
    """``0.9 * min(sd, IQR / 1.34) * n_eff^(-1/5)`` of the weighted sample."""
    a = np.asarray(a, dtype=float)
    w = np.ones_like(a) if weights is None else np.asarray(weights, dtype=float)
    mean = np.dot(w, a) / w.sum()
    sd = float(np.sqrt(np.dot(w, (a - mean) ** 2) / w.sum()))
    q25, q75 = weighted_quantile(a, w, [0.25, 0.75])
    spread = min(sd, (q75 - q25) / 1.34) if q75 > q25 else sd
    if spread <= 0:
        raise ValueError("treatment has no spread; cannot choose a bandwidth")
    return float(0.9 * spread * effective_sample_size(w) ** -0.2)


def local_linear(a: np.ndarray, y: np.ndarray, w: np.ndarray, grid: np.ndarray,
                 bandwidth: float) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian-kernel local-linear fit at each grid point.

    Returns the fitted values and the effective number of units (Kish size of
    kernel times case weights) behind each value. Kernel weights are rescaled
    by their maximum before use, which leaves the fit unchanged and keeps
    far-tail grid points finite.
    """
    a = np.asarray(a, float)
    y = np.asarray(y, float)
    w = np.asarray(w, float)
    values = np.empty(len(grid))
    mass = np.empty(len(grid))
    for g, a0 in enumerate(np.asarray(grid, float)):
        u2 = ((a - a0) / bandwidth) ** 2
        k = w * np.exp(-0.5 * (u2 - u2[w > 0].min()))
        s0 = k.sum()
        d = a - a0
        s1 = np.dot(k, d)
        s2 = np.dot(k, d * d)
        t0 = np.dot(k, y)
        t1 = np.dot(k, d * y)
        det = s0 * s2 - s1 * s1
        if det > 1e-12 * s0 * s2 and s0 > 0:
            values[g] = (s2 * t0 - s1 * t1) / det
        else:
            values[g] = t0 / s0
        mass[g] = effective_sample_size(k)
    return values, mass


@dataclass
class DoseResponseEstimate:
    grid: np.ndarray
    values: np.ndarray
    estimator_tag: str
    bandwidth: float | None = None
    unstable: np.ndarray | None = None
    kernel_mass: np.ndarray | None = None

    def __post_init__(self):
        self.grid = np.asarray(self.grid, float)
        self.values = np.asarray(self.values, float)
        if self.grid.shape != self.values.shape:
            raise ValueError("grid and values must have equal length")
        if not np.all(np.isfinite(self.values)):
            raise FloatingPointError("dose-response values are not finite")

    def header(self) -> dict[str, Any]:
        flags = [] if self.unstable is None else [float(g) for g in self.grid[self.unstable]]
        return {"estimator_tag": self.estimator_tag, "bandwidth": self.bandwidth,
                "unstable_grid_points": flags}

    def write(self, path: str | Path, meta: dict[str, Any] | None = None) -> None:
        with open(path, "w") as fh:
            write_header(fh, {**(meta or {}), **self.header()})
            fh.write("a,estimate\n")
            for a0, v in zip(self.grid, self.values):
                fh.write(f"{float(a0)!r},{float(v)!r}\n")


def _resolve_bandwidth(a, w, bandwidth):
    if bandwidth is None or (isinstance(bandwidth, str) and bandwidth.lower() == "auto"):
        return silverman_bandwidth(a, w)
    h = float(bandwidth)
    if not h > 0:
        raise ValueError("bandwidth must be positive")
    return h


def dose_response_curve(
    dataset: Dataset,
    weights: WeightSet | np.ndarray | None,
    grid: Sequence[float],
    bandwidth: float | str = "auto",
    tag: str = "weighting",
) -> DoseResponseEstimate:
    """Weighted local-linear regression of outcome on treatment."""
    if dataset.is_binary:
        raise ValueError("dose_response_curve requires a continuous treatment")
    y = dataset.require_outcome()
    w = _as_weights(weights, dataset.n)
    h = _resolve_bandwidth(dataset.treatment, w, bandwidth)
    grid = np.asarray(grid, float)
    values, mass = local_linear(dataset.treatment, y, w, grid, h)
    return DoseResponseEstimate(grid, values, tag, h, mass < MIN_KERNEL_MASS, mass)


# -- outcome models ----------------------------------------------------------------


class OutcomeKind(enum.Enum):
    LINEAR = "linear-ls"
    BOOSTED = "boosted-regression"


OUTCOME_BOOSTING = BoostingParams(num_trees=200, max_depth=3, learning_rate=0.05, min_leaf_size=10)


@dataclass
class OutcomeModel:
    """Regression of outcome on ``[x, a]``."""

    kind: OutcomeKind
    case_weighted: bool
    coef: np.ndarray | None = None  # intercept, covariates, treatment
    ensemble: BoostedEnsemble | None = None

    def predict(self, treatment: np.ndarray | float, covariates: np.ndarray) -> np.ndarray:
        x = np.asarray(covariates, float)
        a = np.broadcast_to(np.asarray(treatment, float), (x.shape[0],))
        if self.kind is OutcomeKind.LINEAR:
            return self.coef[0] + x @ self.coef[1:-1] + self.coef[-1] * a
        return self.ensemble.raw_score(np.column_stack([x, a]))

    def average_over_covariates(self, treatment_values: np.ndarray, covariates: np.ndarray) -> np.ndarray:
        """``mean_j mu(x_j, a)`` for each treatment value ``a``."""
        t = np.asarray(treatment_values, float)
        x = np.asarray(covariates, float)
        if self.kind is OutcomeKind.LINEAR:
            return self.coef[0] + float(np.mean(x @ self.coef[1:-1])) + self.coef[-1] * t
        return np.array([float(np.mean(self.predict(v, x))) for v in t])


def fit_outcome_model(
    dataset: Dataset,
    kind: OutcomeKind | str = OutcomeKind.LINEAR,
    weights: WeightSet | np.ndarray | None = None,
    seed: int = 0,
    params: BoostingParams = OUTCOME_BOOSTING,
) -> OutcomeModel:
    kind = OutcomeKind(kind)
    y = dataset.require_outcome()
    w = _as_weights(weights, dataset.n)
    x, a = dataset.covariates, dataset.treatment
    if kind is OutcomeKind.LINEAR:
        design = np.column_stack([np.ones(dataset.n), x, a])
        sw = np.sqrt(w)
        coef, *_ = np.linalg.lstsq(design * sw[:, None], y * sw, rcond=None)
        return OutcomeModel(kind, weights is not None, coef=coef)
    rng = ReplicateSeed(seed, 0).rng(Purpose.FIT)
    ens = fit_boosted_regression(np.column_stack([x, a]), y, params, rng, w)
    return OutcomeModel(kind, weights is not None, ensemble=ens)


def _default_grid(dataset: Dataset, grid):
    if grid is None:
        if not dataset.is_binary:
            raise ValueError("a grid is required for continuous treatment")
        return np.array([0.0, 1.0])
    return np.asarray(grid, float)


def direct_method(
    dataset: Dataset,
    outcome: OutcomeModel | OutcomeKind | str,
    grid: Sequence[float] | None = None,
    weights: WeightSet | np.ndarray | None = None,
    seed: int = 0,
) -> DoseResponseEstimate:
    """Average the outcome model over the observed covariates at each grid value.

    When ``outcome`` names a model kind it is fitted here, case-weighted if
    ``weights`` are given.
    """
    if not isinstance(outcome, OutcomeModel):
        outcome = fit_outcome_model(dataset, outcome, weights, seed)
    grid = _default_grid(dataset, grid)
    values = outcome.average_over_covariates(grid, dataset.covariates)
    return DoseResponseEstimate(grid, values, f"dm-{outcome.kind.value}")


def _dm_at_observed(outcome: OutcomeModel, dataset: Dataset) -> np.ndarray:
    a = dataset.treatment
    if outcome.kind is OutcomeKind.LINEAR or dataset.is_binary:
        return outcome.average_over_covariates(a, dataset.covariates)
    # tree models are piecewise constant in a; interpolate a fine grid
    fine = np.linspace(a.min(), a.max(), _DM_INTERP_POINTS)
    return np.interp(a, fine, outcome.average_over_covariates(fine, dataset.covariates))


def doubly_robust(
    dataset: Dataset,
    outcome: OutcomeModel,
    weights: WeightSet | np.ndarray,
    grid: Sequence[float] | None = None,
    bandwidth: float | str = "auto",
) -> DoseResponseEstimate:
    """Direct method plus weighted outcome-model residuals.

    Binary: ``DM(a) + sum_arm w (y - mu) / sum_arm w`` (the correction is 0
    for an arm whose weights sum to 0). Continuous: pseudo-outcomes
    ``(y - mu) * w / mean(w) + DM(a_i)`` smoothed on treatment.
    """
    y = dataset.require_outcome()
    w = _as_weights(weights, dataset.n)
    grid = _default_grid(dataset, grid)
    mu = outcome.predict(dataset.treatment, dataset.covariates)
    resid = y - mu
    tag = f"dr-{outcome.kind.value}"
    if dataset.is_binary:
        dm = outcome.average_over_covariates(grid, dataset.covariates)
        values = np.empty_like(dm)
        for g, arm in enumerate(grid):
            mask = dataset.treatment == arm
            total = w[mask].sum()
            corr = float(np.dot(w[mask], resid[mask]) / total) if total > 0 else 0.0
            values[g] = dm[g] + corr
        return DoseResponseEstimate(grid, values, tag)
    mean_w = w.mean()
    scaled = w / mean_w if mean_w > 0 else w
    pseudo = resid * scaled + _dm_at_observed(outcome, dataset)
    ones = np.ones(dataset.n)
    h = _resolve_bandwidth(dataset.treatment, ones, bandwidth)
    values, mass = local_linear(dataset.treatment, pseudo, ones, grid, h)
    return DoseResponseEstimate(grid, values, tag, h, mass < MIN_KERNEL_MASS, mass)


# -- unconditional bootstrap -------------------------------------------------------


@dataclass
class BootstrapInterval:
    lower: np.ndarray
    upper: np.ndarray
    level: float
    replicate_estimates: np.ndarray = field(repr=False)
    estimand: str = ""


def _estimate_on(ds: Dataset, w: np.ndarray, estimand, bandwidth) -> np.ndarray:
    if isinstance(estimand, EstimandRequest) and estimand.kind == "dose-response":
        return dose_response_curve(ds, w, estimand.grid, bandwidth).values
    kind = estimand.kind if isinstance(estimand, EstimandRequest) else estimand
    est = weighted_means_binary(ds, w)
    if kind == "ate":
        return np.array([est.ate])
    if kind == "binary-means":
        return est.as_array()
    if kind in ("mean0", "mean1"):
        return np.array([est.mean0 if kind == "mean0" else est.mean1])
    raise ValueError(f"unknown estimand {estimand!r}")


def unconditional_bootstrap_interval(
    dataset: Dataset,
    config: PwConfig,
    estimand: EstimandRequest | str,
    master_seed: int,
    level: float = 0.95,
    threads: int = 1,
    bandwidth: float | str = "auto",
) -> BootstrapInterval:
    """Percentile interval of per-replicate weighted estimates.

    Each replicate's estimate uses only that replicate's bootstrap rows,
    weighted by that replicate's own weights at those rows.
    """
    if config.replicates < 20:
        raise ValueError("need at least 20 replicates for a bootstrap interval")
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    res = estimate_pw_weights(dataset, config, master_seed, threads=threads, keep_traces=True)
    rows = []
    for tr in res.traces:
        idx = tr.observed_indices
        rows.append(_estimate_on(dataset.subset(idx), tr.weights[idx], estimand, bandwidth))
    est = np.vstack(rows)
    alpha = 1.0 - level
    lower = np.quantile(est, alpha / 2, axis=0)
    upper = np.quantile(est, 1 - alpha / 2, axis=0)
    name = estimand.kind if isinstance(estimand, EstimandRequest) else str(estimand)
    return BootstrapInterval(lower, upper, level, est, name)
