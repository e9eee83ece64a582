"""Strictly proper scoring rules for binary class-probability estimation.

Each loss is expressed on a raw score ``F`` with its own inverse link to the
class-1 probability, so that boosting and linear models share one set of
derivatives. The catalog also records which Bregman divergence (to the true
density ratio) and which f-divergence (between reweighted and target
distributions) a loss implicitly minimizes.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import expit, log_expit

EPS = 1e-6


class ScoringRuleError(ValueError):
    """Raised for losses that are not twice-differentiable strictly proper rules."""


def clamp(p: np.ndarray, eps: float = EPS) -> np.ndarray:
    return np.clip(p, eps, 1.0 - eps)


@dataclass(frozen=True)
class DivergenceInfo:
    bregman: str
    f_expression: str
    f: Callable[[np.ndarray], np.ndarray]


def _f_triangular(t):
    t = np.asarray(t, dtype=float)
    return (t - 1.0) ** 2 / (t + 1.0)


def _f_jensen_shannon(t):
    t = np.asarray(t, dtype=float)
    return 0.5 * t * np.log(t / (t + 1.0)) - 0.5 * np.log((t + 1.0) / 4.0)


def _f_hellinger(t):
    t = np.asarray(t, dtype=float)
    return (np.sqrt(t) - 1.0) ** 2


def _f_total_variation(t):
    return np.abs(np.asarray(t, dtype=float) - 1.0)


class Loss(enum.Enum):
    LOG = "log"
    EXPONENTIAL = "exponential"
    SQUARED = "squared"

    @classmethod
    def parse(cls, name: "str | Loss") -> "Loss":
        if isinstance(name, Loss):
            return name
        key = str(name).strip().lower().replace("_", "-")
        if key in ("0-1", "zero-one", "zeroone", "misclassification"):
            raise ScoringRuleError(
                "0-1 loss is not a twice-differentiable strictly proper scoring rule"
            )
        aliases = {"logistic": "log", "exp": "exponential", "brier": "squared"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ScoringRuleError(f"unknown scoring rule {name!r}") from None

    @property
    def divergence(self) -> DivergenceInfo:
        return _CATALOG[self]

    # -- link ----------------------------------------------------------------
    def probability(self, F: np.ndarray) -> np.ndarray:
        """Unclamped class-1 probability for raw score ``F``."""
        F = np.asarray(F, dtype=float)
        if self is Loss.EXPONENTIAL:
            return expit(2.0 * F)
        return expit(F)

    def raw_score(self, p: np.ndarray | float) -> np.ndarray:
        p = clamp(np.asarray(p, dtype=float))
        logit = np.log(p) - np.log1p(-p)
        return 0.5 * logit if self is Loss.EXPONENTIAL else logit

    def log_odds(self, F: np.ndarray) -> np.ndarray:
        F = np.asarray(F, dtype=float)
        return 2.0 * F if self is Loss.EXPONENTIAL else F

    # -- pointwise loss on raw scores ---------------------------------------
    def pointwise(self, F: np.ndarray, c: np.ndarray) -> np.ndarray:
        F = np.asarray(F, dtype=float)
        c = np.asarray(c, dtype=float)
        if self is Loss.LOG:
            return -(c * log_expit(F) + (1.0 - c) * log_expit(-F))
        if self is Loss.EXPONENTIAL:
            y = 2.0 * c - 1.0
            return np.exp(-y * F)
        p = expit(F)
        return (c - p) ** 2

    def gradient(self, F: np.ndarray, c: np.ndarray) -> np.ndarray:
        """Derivative of :meth:`pointwise` with respect to ``F``."""
        F = np.asarray(F, dtype=float)
        c = np.asarray(c, dtype=float)
        if self is Loss.LOG:
            return expit(F) - c
        if self is Loss.EXPONENTIAL:
            y = 2.0 * c - 1.0
            return -y * np.exp(-y * F)
        p = expit(F)
        return 2.0 * (p - c) * p * (1.0 - p)

    def hessian(self, F: np.ndarray, c: np.ndarray) -> np.ndarray:
        """Second derivative for log/exponential; Gauss-Newton term for squared."""
        F = np.asarray(F, dtype=float)
        c = np.asarray(c, dtype=float)
        if self is Loss.LOG:
            p = expit(F)
            return p * (1.0 - p)
        if self is Loss.EXPONENTIAL:
            y = 2.0 * c - 1.0
            return np.exp(-y * F)
        p = expit(F)
        return 2.0 * (p * (1.0 - p)) ** 2

    def derivatives(self, F: np.ndarray, c: np.ndarray):
        """Pointwise loss, gradient and hessian in one pass."""
        if self is Loss.EXPONENTIAL:
            y = 2.0 * np.asarray(c, dtype=float) - 1.0
            e = np.exp(-y * F)
            return e, -y * e, e
        if self is Loss.LOG:
            p = expit(F)
            value = -(c * log_expit(F) + (1.0 - c) * log_expit(-F))
            return value, p - c, p * (1.0 - p)
        p = expit(F)
        q = p * (1.0 - p)
        return (c - p) ** 2, 2.0 * (p - c) * q, 2.0 * q * q

    # -- loss on probabilities (held-out scoring) ----------------------------
    def score_probability(self, p: np.ndarray, c: np.ndarray) -> np.ndarray:
        """Pointwise loss of clamped probability forecasts ``p``."""
        p = clamp(np.asarray(p, dtype=float))
        c = np.asarray(c, dtype=float)
        if self is Loss.LOG:
            return -(c * np.log(p) + (1.0 - c) * np.log1p(-p))
        if self is Loss.EXPONENTIAL:
            return c * np.sqrt((1.0 - p) / p) + (1.0 - c) * np.sqrt(p / (1.0 - p))
        return (c - p) ** 2


_CATALOG = {
    Loss.SQUARED: DivergenceInfo(
        "triangular discrimination", "(t - 1)^2 / (t + 1)", _f_triangular
    ),
    Loss.LOG: DivergenceInfo(
        "Jensen-Shannon", "t/2 log(t/(t+1)) - 1/2 log((t+1)/4)", _f_jensen_shannon
    ),
    Loss.EXPONENTIAL: DivergenceInfo("Hellinger", "(sqrt(t) - 1)^2", _f_hellinger),
}

ZERO_ONE_DIVERGENCE = DivergenceInfo("total variation", "|t - 1|", _f_total_variation)
