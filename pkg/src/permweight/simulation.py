"""Kang-Schafer data-generating processes, error metrics and the experiment runner."""

from __future__ import annotations

import enum
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from scipy.special import expit
from scipy.stats import gaussian_kde, norm

from .baselines import PropensityKind, fit_propensity, ipsw_weights
from .classifiers import ClassifierSpec
from .data import Dataset, TreatmentKind, write_header
from .estimators import (
    OutcomeKind,
    direct_method,
    dose_response_curve,
    doubly_robust,
    fit_outcome_model,
    weighted_means_binary,
)
from .pw import PwConfig, estimate_pw_weights
from .resampling import Purpose, stream

# treatment index: X1 - 0.5 X2 + 0.25 X3 + 0.1 X4
TREATMENT_COEF = np.array([1.0, -0.5, 0.25, 0.1])
OUTCOME_COEF = np.array([27.4, 13.7, 13.7, 13.7])
OUTCOME_INTERCEPT = 210.0
# A | X ~ N(index, 1) and index ~ N(0, sum(coef^2)), so A ~ N(0, 1 + sum(coef^2))
CONTINUOUS_MARGINAL_SD = float(np.sqrt(1.0 + TREATMENT_COEF @ TREATMENT_COEF))


class DgpKind(enum.Enum):
    KS_BINARY = "ks-binary"
    KS_CONTINUOUS = "ks-continuous"


@dataclass(frozen=True)
class DgpSpec:
    kind: DgpKind
    misspecified: bool = False
    n: int = 2000
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", DgpKind(self.kind))
        if self.n < 50:
            raise ValueError("DGP sample size must be >= 50")


def misspecify(X: np.ndarray) -> np.ndarray:
    """Nonlinear observed versions of the four latent covariates."""
    x1, x2, x3, x4 = X.T
    return np.column_stack([
        np.exp(x1 / 2.0),
        x2 / (1.0 + np.exp(x1)) + 10.0,
        (x1 * x3 / 25.0 + 0.6) ** 3,
        (x2 + x4 + 20.0) ** 2,
    ])


def dose_effect(kind: DgpKind, a: np.ndarray | float) -> np.ndarray:
    a = np.asarray(a, float)
    return a if kind is DgpKind.KS_BINARY else expit(a)


@dataclass
class Oracle:
    """Ground truth for one draw.

    ``true_weights`` are ``p(a) / p(a | x)`` at the observed units, which
    equal ``p(a) p(x) / p(a, x)``.
    """

    kind: DgpKind
    latent: np.ndarray
    propensity: np.ndarray  # P(A=1|X) for binary, density of observed A given X for continuous
    marginal: np.ndarray  # P(A = a_i) for binary, marginal density at a_i for continuous
    true_weights: np.ndarray
    covariate_shift: float  # in-sample mean of the covariate part of E[Y | A, X]

    def theta(self, grid: Sequence[float], in_sample: bool = True) -> np.ndarray:
        """True dose-response at ``grid``.

        In-sample truth averages the covariate part of the outcome mean over
        this draw's units; the population truth replaces it with its mean, 0.
        """
        shift = self.covariate_shift if in_sample else 0.0
        return OUTCOME_INTERCEPT + dose_effect(self.kind, grid) + shift


def draw_dgp(spec: DgpSpec) -> tuple[Dataset, Oracle]:
    rng = stream(spec.seed, int(Purpose.SIMULATION))
    n = spec.n
    X = rng.standard_normal((n, 4))
    index = X @ TREATMENT_COEF
    if spec.kind is DgpKind.KS_BINARY:
        p1 = expit(-index)
        a = (rng.uniform(size=n) < p1).astype(float)
        propensity = p1
        p_obs = np.where(a == 1.0, p1, 1.0 - p1)
        # index is symmetric about 0, so P(A = 1) = E[expit(-index)] = 1/2
        marginal = np.full(n, 0.5)
        weights = marginal / p_obs
        kind = TreatmentKind.BINARY
    else:
        a = index + rng.standard_normal(n)
        propensity = norm.pdf(a, loc=index, scale=1.0)
        marginal = norm.pdf(a, loc=0.0, scale=CONTINUOUS_MARGINAL_SD)
        weights = np.exp(norm.logpdf(a, 0.0, CONTINUOUS_MARGINAL_SD) - norm.logpdf(a, index, 1.0))
        kind = TreatmentKind.CONTINUOUS
    cov_part = X @ OUTCOME_COEF
    y = OUTCOME_INTERCEPT + dose_effect(spec.kind, a) + cov_part + rng.standard_normal(n)
    observed = misspecify(X) if spec.misspecified else X
    ds = Dataset.create(a, observed, y, kind)
    oracle = Oracle(spec.kind, X, propensity, marginal, weights, float(cov_part.mean()))
    return ds, oracle


# -- metrics ---------------------------------------------------------------------------


def _check_metric_inputs(estimates, truths, marginal_weights):
    est = np.atleast_2d(np.asarray(estimates, float))
    tru = np.atleast_2d(np.asarray(truths, float))
    mw = np.asarray(marginal_weights, float).reshape(-1)
    if est.shape != tru.shape or est.shape[1] != mw.shape[0]:
        raise ValueError(f"shape mismatch: estimates {est.shape}, truths {tru.shape}, "
                         f"weights {mw.shape}")
    return est, tru, mw


def _rmse_and_bias(est, tru):
    err = est - tru
    bias = np.abs(np.mean(err, axis=0))
    # rescale before squaring so tiny errors do not underflow
    scale = np.max(np.abs(err), axis=0)
    safe = np.where(scale > 0, scale, 1.0)
    rmse = scale * np.sqrt(np.mean((err / safe) ** 2, axis=0))
    # rmse >= |bias| holds mathematically; guard against last-bit rounding
    return np.maximum(rmse, bias), bias


def irmse(estimates, truths, marginal_weights) -> float:
    """``sum_g mw_g * sqrt(mean_s (est_sg - truth_sg)^2)`` over an S x G grid."""
    est, tru, mw = _check_metric_inputs(estimates, truths, marginal_weights)
    return float(np.sum(mw * _rmse_and_bias(est, tru)[0]))


def integrated_abs_bias(estimates, truths, marginal_weights) -> float:
    """``sum_g mw_g * |mean_s (est_sg - truth_sg)|``."""
    est, tru, mw = _check_metric_inputs(estimates, truths, marginal_weights)
    return float(np.sum(mw * _rmse_and_bias(est, tru)[1]))


# -- experiment ------------------------------------------------------------------------

METHODS = ("unweighted", "ps", "ps-boosting", "pw-glm", "pw-boosting")
ESTIMATORS = ("weighting", "dm-ols", "dm-boost", "dr-ols", "dr-boost")
GRID_POINTS = 25


@dataclass(frozen=True)
class ExperimentConfig:
    replicates: int = 100
    pw_logistic: ClassifierSpec = field(default_factory=ClassifierSpec.logistic_default)
    pw_boosting: ClassifierSpec = field(default_factory=ClassifierSpec.boosting_default)
    bootstrap_se: int = 200
    bandwidth: float | str = "auto"


@dataclass(frozen=True)
class ReportRow:
    method: str
    estimator: str
    bias: float
    bias_se: float
    irmse: float
    irmse_se: float
    sims: int
    n: int


@dataclass
class SimulationReport:
    dgp: dict[str, Any]
    rows: list[ReportRow]
    grid: np.ndarray
    marginal_weights: np.ndarray
    curves: dict[tuple[str, str], np.ndarray] = field(repr=False, default_factory=dict)
    truths: np.ndarray | None = field(repr=False, default=None)

    def row(self, method: str, estimator: str = "weighting") -> ReportRow:
        for r in self.rows:
            if r.method == method and r.estimator == estimator:
                return r
        raise KeyError((method, estimator))

    def to_dict(self) -> dict[str, Any]:
        return {
            "dgp": self.dgp,
            "grid": [float(g) for g in self.grid],
            "marginal_weights": [float(m) for m in self.marginal_weights],
            "rows": [asdict(r) for r in self.rows],
        }

    def write_table(self, path: str | Path, meta: dict[str, Any] | None = None) -> None:
        cols = list(ReportRow.__dataclass_fields__)
        with open(path, "w") as fh:
            write_header(fh, meta)
            fh.write(",".join(cols) + "\n")
            for r in self.rows:
                vals = [getattr(r, c) for c in cols]
                fh.write(",".join(v if isinstance(v, str) else repr(v) for v in vals) + "\n")

    def write_json(self, path: str | Path, meta: dict[str, Any] | None = None) -> None:
        with open(path, "w") as fh:
            json.dump({**(meta or {}), **self.to_dict()}, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_curves(self, path: str | Path, meta: dict[str, Any] | None = None) -> None:
        """Per grid point: mean estimate, mean truth and RMSE for each method/estimator."""
        with open(path, "w") as fh:
            write_header(fh, meta)
            fh.write("method,estimator,a,marginal_weight,mean_estimate,mean_truth,rmse\n")
            for (method, estimator), est in self.curves.items():
                mean_est = est.mean(axis=0)
                mean_tru = self.truths.mean(axis=0)
                rmse = np.sqrt(np.mean((est - self.truths) ** 2, axis=0))
                for g in range(len(self.grid)):
                    fh.write(f"{method},{estimator},{float(self.grid[g])!r},"
                             f"{float(self.marginal_weights[g])!r},{float(mean_est[g])!r},"
                             f"{float(mean_tru[g])!r},{float(rmse[g])!r}\n")


def simulation_seed(master_seed: int, index: int) -> int:
    """64-bit seed for simulation ``index``; a pure function of its inputs."""
    state = np.random.SeedSequence([int(master_seed), int(index)]).generate_state(2, np.uint32)
    return int(state[0]) << 32 | int(state[1])


def evaluation_grid(kind: DgpKind, treatments: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Grid and marginal weights pooled over all simulated treatment draws.

    Binary: ``{0, 1}`` weighted by pooled arm shares. Continuous: equally
    spaced points over the pooled 5%-95% quantile range, weighted by the
    pooled kernel density estimate and normalized to sum to one.
    """
    pooled = np.concatenate([np.asarray(t, float) for t in treatments])
    if kind is DgpKind.KS_BINARY:
        share = float(pooled.mean())
        return np.array([0.0, 1.0]), np.array([1.0 - share, share])
    lo, hi = np.quantile(pooled, [0.05, 0.95])
    grid = np.linspace(lo, hi, GRID_POINTS)
    dens = gaussian_kde(pooled)(grid)
    return grid, dens / dens.sum()


def _method_weights(method, ds, seed, cfg: ExperimentConfig):
    if method == "unweighted":
        return None
    if method == "ps":
        kind = PropensityKind.LOGISTIC if ds.is_binary else PropensityKind.NORMAL_LINEAR
        return ipsw_weights(fit_propensity(ds, kind, seed=seed), ds, stabilized=True).weights
    if method == "ps-boosting":
        model = fit_propensity(ds, PropensityKind.BOOSTED, cfg.pw_boosting, seed=seed)
        return ipsw_weights(model, ds, stabilized=True).weights
    spec = cfg.pw_logistic if method == "pw-glm" else cfg.pw_boosting
    pw = PwConfig(spec, cfg.replicates)
    return estimate_pw_weights(ds, pw, seed).weight_set.weights


def _estimate(estimator, ds, w, grid, seed, cfg, outcome_cache):
    if estimator == "weighting":
        if ds.is_binary:
            return weighted_means_binary(ds, w).as_array()
        return dose_response_curve(ds, w, grid, cfg.bandwidth).values
    kind = OutcomeKind.LINEAR if estimator.endswith("ols") else OutcomeKind.BOOSTED
    if kind not in outcome_cache:
        outcome_cache[kind] = fit_outcome_model(ds, kind, w, seed)
    mu = outcome_cache[kind]
    if estimator.startswith("dm"):
        return direct_method(ds, mu, grid).values
    w_dr = np.ones(ds.n) if w is None else w
    return doubly_robust(ds, mu, w_dr, grid, cfg.bandwidth).values


def _validate_methods(kind: DgpKind, methods, estimators):
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}; choose from {METHODS}")
        if m == "ps-boosting" and kind is not DgpKind.KS_BINARY:
            raise ValueError("ps-boosting requires a binary-treatment DGP")
    for e in estimators:
        if e not in ESTIMATORS:
            raise ValueError(f"unknown estimator {e!r}; choose from {ESTIMATORS}")


def _bootstrap_se(est, tru, mw, reps, seed):
    rng = stream(seed, int(Purpose.SIMULATION), 1)
    S = est.shape[0]
    b_vals, r_vals = [], []
    for _ in range(reps):
        idx = rng.integers(0, S, size=S)
        b_vals.append(integrated_abs_bias(est[idx], tru[idx], mw))
        r_vals.append(irmse(est[idx], tru[idx], mw))
    return float(np.std(b_vals, ddof=1)), float(np.std(r_vals, ddof=1))


def run_experiment(
    dgp: DgpSpec,
    methods: Sequence[str],
    estimators: Sequence[str] = ("weighting",),
    sims: int = 100,
    master_seed: int = 0,
    config: ExperimentConfig = ExperimentConfig(),
    threads: int = 1,
    in_sample_truth: bool = True,
) -> SimulationReport:
    """Monte Carlo comparison of weighting methods and estimators.

    ``dgp.seed`` is ignored; simulation ``s`` uses
    ``simulation_seed(master_seed, s)`` for both data and methods.
    """
    if sims < 2:
        raise ValueError("need at least 2 simulations")
    methods, estimators = list(methods), list(estimators)
    _validate_methods(dgp.kind, methods, estimators)
    seeds = [simulation_seed(master_seed, s) for s in range(sims)]
    draws = [draw_dgp(DgpSpec(dgp.kind, dgp.misspecified, dgp.n, sd)) for sd in seeds]
    grid, mw = evaluation_grid(dgp.kind, [ds.treatment for ds, _ in draws])

    def one(s):
        ds, oracle = draws[s]
        out = {}
        for m in methods:
            w = _method_weights(m, ds, seeds[s], config)
            cache: dict = {}
            for e in estimators:
                out[(m, e)] = _estimate(e, ds, w, grid, seeds[s], config, cache)
        return out, oracle.theta(grid, in_sample=in_sample_truth)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(sims)))
    else:
        results = [one(s) for s in range(sims)]

    truths = np.vstack([r[1] for r in results])
    rows, curves = [], {}
    for m in methods:
        for e in estimators:
            est = np.vstack([r[0][(m, e)] for r in results])
            curves[(m, e)] = est
            bias_se, irmse_se = _bootstrap_se(est, truths, mw, config.bootstrap_se, master_seed)
            rows.append(ReportRow(m, e, integrated_abs_bias(est, truths, mw), bias_se,
                                  irmse(est, truths, mw), irmse_se, sims, dgp.n))
    info = {"kind": dgp.kind.value, "misspecified": dgp.misspecified, "n": dgp.n,
            "sims": sims, "master_seed": master_seed, "in_sample_truth": in_sample_truth}
    return SimulationReport(info, rows, grid, mw, curves, truths)
