"""Linear-score binary classifier fitted by damped Newton iterations.

The score is ``F = b0 + x @ beta`` and the objective is the summed pointwise
loss plus ``l2_penalty / 2 * ||beta||^2`` (intercept unpenalized). For the
log loss the Newton step is exactly iteratively reweighted least squares.
The squared loss is not convex in ``F``; its Gauss-Newton hessian is used
instead, which keeps every step a descent direction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .losses import Loss

_MAX_HALVINGS = 30
# scores beyond the probability clamp (|logit(1e-6)| ~ 13.8) are saturated
_SEPARATION_SCORE = 15.0


@dataclass(frozen=True)
class LogisticParams:
    l2_penalty: float = 0.0
    max_iterations: int = 100
    tolerance: float = 1e-10

    def __post_init__(self):
        if self.l2_penalty < 0:
            raise ValueError("l2_penalty must be >= 0")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be > 0")


@dataclass
class LinearScoreModel:
    """Fitted coefficients on the original feature scale."""

    intercept: float
    coef: np.ndarray
    iterations: int = 0
    converged: bool = True
    separated: bool = False
    warnings: list[str] = field(default_factory=list)

    def raw_score(self, X: np.ndarray) -> np.ndarray:
        return self.intercept + np.asarray(X, dtype=float) @ self.coef


def _objective(loss, F, c, w, beta_z, pen):
    return float(np.dot(w, loss.pointwise(F, c)) + 0.5 * np.dot(pen * beta_z, beta_z))


def fit_linear_score(
    X: np.ndarray,
    c: np.ndarray,
    loss: Loss,
    params: LogisticParams = LogisticParams(),
    sample_weight: np.ndarray | None = None,
) -> LinearScoreModel:
    """Minimize the penalized empirical risk of a linear-score classifier.

    Columns are centered and scaled internally; the penalty is mapped onto
    the scaled coordinates so that it still acts on the original slopes.
    Zero-variance columns are dropped (their coefficient is 0).

    Convergence is declared when every component of the penalized gradient
    on the original scale, intercept included, is at most ``tolerance * m``.
    """
    X = np.asarray(X, dtype=float)
    c = np.asarray(c, dtype=float)
    m, d = X.shape
    w = np.ones(m) if sample_weight is None else np.asarray(sample_weight, dtype=float)
    l2 = float(params.l2_penalty)

    mu = (w @ X) / w.sum()
    sd = np.sqrt((w @ (X - mu) ** 2) / w.sum())
    keep = np.flatnonzero(sd > 1e-12 * np.maximum(1.0, np.abs(mu)))
    Z = np.empty((m, keep.size + 1))
    Z[:, 0] = 1.0
    Z[:, 1:] = (X[:, keep] - mu[keep]) / sd[keep]
    # penalty (l2/2)*sum(beta^2) with beta = theta / sd
    pen = np.zeros(keep.size + 1)
    pen[1:] = l2 / sd[keep] ** 2

    rate = np.clip(np.dot(w, c) / w.sum(), 1e-6, 1 - 1e-6)
    theta = np.zeros(keep.size + 1)
    theta[0] = float(loss.raw_score(rate))
    F = Z @ theta
    obj = _objective(loss, F, c, w, theta, pen)

    def to_original(th):
        beta = np.zeros(d)
        beta[keep] = th[1:] / sd[keep]
        return th[0] - float(mu @ beta), beta

    def stationarity(F, beta):
        g = w * loss.gradient(F, c)
        score = np.concatenate(([g.sum()], X.T @ g + l2 * beta))
        return float(np.max(np.abs(score)))

    tol = params.tolerance * m
    converged = False
    notes: list[str] = []
    it = 0
    for it in range(1, params.max_iterations + 1):
        _, g, h = loss.derivatives(F, c)
        grad = Z.T @ (w * g) + pen * theta
        hess = (Z * (w * h)[:, None]).T @ Z
        hess[np.diag_indices_from(hess)] += pen
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hess, grad, rcond=None)[0]
        t = 1.0
        accepted = False
        for _ in range(_MAX_HALVINGS):
            cand = theta - t * step
            F_new = Z @ cand
            obj_new = _objective(loss, F_new, c, w, cand, pen)
            if np.isfinite(obj_new) and obj_new <= obj:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        theta, F, obj = cand, F_new, obj_new
        if stationarity(F, to_original(theta)[1]) <= tol:
            converged = True
            break

    b0, beta = to_original(theta)
    if not converged and stationarity(F, beta) <= tol:
        converged = True
    # a vanishing gradient with saturated scores is separation, not a solution
    separated = l2 == 0.0 and bool(np.max(np.abs(loss.log_odds(F))) > _SEPARATION_SCORE)
    if separated:
        notes.append("classes appear separable; coefficients capped by max_iterations")
    elif not converged:
        notes.append(f"no convergence after {it} iterations; returning last iterate")
    return LinearScoreModel(b0, beta, it, converged, separated, notes)
