import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import expit

from permweight.classifiers import (
    EPS,
    BoostingParams,
    ClassifierSpec,
    Family,
    LinearScoreModel,
    LogisticParams,
    Loss,
    ProbabilisticClassifier,
    ScoringRuleError,
    constant_classifier,
    cv_risk,
    fit,
    fit_boosted_classifier,
    fit_boosted_regression,
    score_residual,
    stratified_folds,
    tune,
)
from permweight.classifiers.trees import grow_tree, presort


def _logistic_model(intercept, coef, loss=Loss.LOG):
    spec = ClassifierSpec(Family.LOGISTIC, loss)
    coef = np.asarray(coef, float)
    return ProbabilisticClassifier(spec, coef.size, LinearScoreModel(intercept, coef), 0.0, 0)


# -- losses --------------------------------------------------------------------------


def test_zero_one_loss_rejected():
    with pytest.raises(ScoringRuleError):
        Loss.parse("0-1")
    with pytest.raises(ScoringRuleError):
        Loss.parse("hinge")


def test_loss_aliases():
    assert Loss.parse("logistic") is Loss.LOG
    assert Loss.parse("exp") is Loss.EXPONENTIAL
    assert Loss.parse("brier") is Loss.SQUARED


def test_divergence_catalog():
    assert Loss.LOG.divergence.bregman == "Jensen-Shannon"
    assert Loss.EXPONENTIAL.divergence.bregman == "Hellinger"
    assert Loss.SQUARED.divergence.bregman == "triangular discrimination"
    for loss in Loss:
        # generators vanish at ratio 1 and are convex, so sum_i q_i f(p_i/q_i) >= 0
        f = loss.divergence.f
        assert float(f(np.array([1.0]))[0]) == pytest.approx(0.0, abs=1e-12)
        t = np.linspace(0.05, 10, 400)
        assert np.all(np.diff(f(t), 2) > 0)
        rng = np.random.default_rng(0)
        for _ in range(20):
            p, q = rng.dirichlet(np.ones(5)), rng.dirichlet(np.ones(5))
            assert float(np.dot(q, f(p / q))) >= -1e-12


@pytest.mark.parametrize("loss", list(Loss))
def test_link_round_trip(loss):
    p = np.array([0.01, 0.3, 0.5, 0.8, 0.999])
    np.testing.assert_allclose(loss.probability(loss.raw_score(p)), p, rtol=1e-12)


@pytest.mark.parametrize("loss", list(Loss))
def test_strict_propriety(loss):
    # expected score q*S(p,1) + (1-q)*S(p,0) is minimized uniquely at p = q
    grid = np.linspace(0.001, 0.999, 999)
    for q in (0.1, 0.35, 0.5, 0.9):
        risk = q * loss.score_probability(grid, 1.0) + (1 - q) * loss.score_probability(grid, 0.0)
        assert abs(grid[np.argmin(risk)] - q) < 2e-3


@settings(max_examples=60, deadline=None)
@given(F=st.floats(-8, 8), c=st.sampled_from([0.0, 1.0]), loss=st.sampled_from(list(Loss)))
def test_pointwise_derivatives_finite_difference(F, c, loss):
    h = 1e-5
    num = (loss.pointwise(F + h, c) - loss.pointwise(F - h, c)) / (2 * h)
    g = loss.gradient(F, c)
    assert abs(g - num) <= 1e-4 * max(abs(num), 1e-6) + 1e-9
    if loss is not Loss.SQUARED:  # Gauss-Newton term is not the true curvature
        num2 = (loss.gradient(F + h, c) - loss.gradient(F - h, c)) / (2 * h)
        assert abs(loss.hessian(F, c) - num2) <= 1e-4 * max(abs(num2), 1e-6) + 1e-9
    v, g2, h2 = loss.derivatives(np.array([F]), np.array([c]))
    assert v[0] == pytest.approx(float(loss.pointwise(F, c)), rel=1e-12)
    assert g2[0] == pytest.approx(float(g), rel=1e-12, abs=1e-300)
    assert h2[0] == pytest.approx(float(loss.hessian(F, c)), rel=1e-12, abs=1e-300)


def test_constant_half_log_risk_is_ln2():
    c = np.array([0, 1, 1, 0, 1], float)
    assert Loss.LOG.score_probability(np.full(5, 0.5), c).mean() == pytest.approx(math.log(2))


# -- prediction ----------------------------------------------------------------------


def test_zero_coefficients_predict_half():
    m = _logistic_model(0.0, [0.0, 0.0])
    np.testing.assert_array_equal(m.predict_proba(np.random.default_rng(0).normal(size=(5, 2))), 0.5)


def test_log4_coefficient_gives_point_eight():
    m = _logistic_model(0.0, [math.log(4.0)])
    assert m.predict_proba(np.array([[1.0]]))[0] == pytest.approx(0.8, rel=1e-12)


def test_width_mismatch():
    with pytest.raises(ValueError, match="width"):
        _logistic_model(0.0, [1.0, 2.0]).predict_proba(np.ones((3, 3)))


def test_predictions_clamped():
    p = _logistic_model(0.0, [100.0]).predict_proba(np.array([[1.0], [-1.0]]))
    np.testing.assert_array_equal(p, [1 - EPS, EPS])


@pytest.mark.parametrize("loss", list(Loss))
def test_zero_trees_predict_base_rate(loss):
    rng = np.random.default_rng(0)
    X = rng.normal(size=(100, 2))
    c = np.r_[np.ones(30), np.zeros(70)]
    spec = ClassifierSpec(Family.BOOSTING, loss, boosting=BoostingParams(num_trees=0))
    model = fit(spec, X, c)
    np.testing.assert_allclose(model.predict_proba(X), 0.3, rtol=1e-12)


def test_constant_classifier():
    m = constant_classifier(ClassifierSpec.logistic_default(), 3, 0.25)
    np.testing.assert_allclose(m.predict_proba(np.zeros((2, 3))), 0.25, rtol=1e-12)


# -- logistic fitting ----------------------------------------------------------------


def test_single_class_is_error():
    with pytest.raises(ValueError, match="both classes"):
        fit(ClassifierSpec.logistic_default(), np.ones((4, 1)), np.zeros(4))


def test_pure_noise_coefficients_vanish():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(10_000, 3))
    c = np.r_[np.ones(5000), np.zeros(5000)]
    coef = fit(ClassifierSpec.logistic_default(), X, c).coefficients
    assert np.all(np.abs(coef) < 0.1)


def test_calibration_against_known_logistic_truth():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(50_000, 2))
    p = expit(0.3 + X @ np.array([1.0, -0.5]))
    c = (rng.uniform(size=p.size) < p).astype(float)
    model = fit(ClassifierSpec.logistic_default(), X, c)
    assert np.mean(np.abs(model.predict_proba(X) - p)) < 0.02


def test_matches_independent_solver():
    sk = pytest.importorskip("sklearn.linear_model")
    rng = np.random.default_rng(3)
    X = rng.normal(size=(800, 3)) * np.array([1.0, 5.0, 0.2])
    c = (rng.uniform(size=800) < expit(X @ np.array([0.5, -0.1, 2.0]))).astype(float)
    ours = fit(ClassifierSpec.logistic_default(), X, c).coefficients
    ref = sk.LogisticRegression(penalty=None, tol=1e-12, max_iter=10_000).fit(X, c)
    np.testing.assert_allclose(ours, np.r_[ref.intercept_, ref.coef_[0]], rtol=1e-5, atol=1e-6)
    l2 = 3.0
    ours_r = fit(ClassifierSpec.logistic_default(l2), X, c).coefficients
    ref_r = sk.LogisticRegression(C=1.0 / l2, tol=1e-12, max_iter=10_000).fit(X, c)
    np.testing.assert_allclose(ours_r, np.r_[ref_r.intercept_, ref_r.coef_[0]], rtol=1e-5, atol=1e-6)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000), m=st.integers(60, 600), p=st.integers(1, 5))
def test_score_condition_property(seed, m, p):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(m, p))
    c = (rng.uniform(size=m) < expit(X @ rng.normal(size=p) * 0.5)).astype(float)
    if c.min() == c.max():
        c[0] = 1 - c[0]
    model = fit(ClassifierSpec.logistic_default(), X, c)
    if model.model.separated:
        return
    assert score_residual(model, X, c).max() <= 1e-6 * m


def test_ridge_residual_equals_penalty_gradient():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(500, 2))
    c = (rng.uniform(size=500) < expit(X[:, 0])).astype(float)
    l2 = 5.0
    model = fit(ClassifierSpec.logistic_default(l2), X, c)
    res = score_residual(model, X, c)
    assert res[0] == pytest.approx(0.0, abs=1e-6)
    np.testing.assert_allclose(res[1:], l2 * np.abs(model.coefficients[1:]), rtol=1e-5)


def test_zero_model_residual_is_feature_class_covariance():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(200, 2))
    X -= X.mean(axis=0)
    c = np.r_[np.ones(100), np.zeros(100)]
    X[:100, 0] += 1.0
    model = _logistic_model(0.0, [0.0, 0.0])
    res = score_residual(model, X, c)
    np.testing.assert_allclose(res[1:], np.abs(X.T @ (c - 0.5)), rtol=1e-12)
    assert res[1] > 1.0


def test_separable_data_flagged():
    X = np.r_[np.linspace(-2, -0.1, 20), np.linspace(0.1, 2, 20)][:, None]
    c = np.r_[np.zeros(20), np.ones(20)]
    model = fit(ClassifierSpec.logistic_default(), X, c)
    assert model.model.separated
    assert any("separa" in w for w in model.warnings)


def test_nonconvergence_warns_and_returns_last_iterate():
    rng = np.random.default_rng(6)
    X = rng.normal(size=(300, 2))
    c = (rng.uniform(size=300) < expit(2 * X[:, 0])).astype(float)
    spec = ClassifierSpec(Family.LOGISTIC, Loss.LOG, LogisticParams(max_iterations=1))
    model = fit(spec, X, c)
    assert not model.model.converged
    assert any("converge" in w for w in model.warnings)
    assert np.all(np.isfinite(model.coefficients))


@pytest.mark.parametrize("loss", [Loss.EXPONENTIAL, Loss.SQUARED])
def test_logistic_family_other_losses_stationary(loss):
    rng = np.random.default_rng(7)
    X = rng.normal(size=(1000, 2))
    c = (rng.uniform(size=1000) < expit(X[:, 0] - X[:, 1])).astype(float)
    model = fit(ClassifierSpec(Family.LOGISTIC, loss), X, c)
    F = model.raw_score(X)
    design = np.column_stack([np.ones(1000), X])
    grad = design.T @ loss.gradient(F, c)
    assert np.max(np.abs(grad)) <= 1e-6 * 1000


def test_invalid_hyperparameters():
    with pytest.raises(ValueError):
        LogisticParams(l2_penalty=-1.0)
    with pytest.raises(ValueError):
        BoostingParams(learning_rate=0.0)
    with pytest.raises(ValueError):
        BoostingParams(subsample_fraction=1.5)
    with pytest.raises(ValueError):
        ClassifierSpec(cv_folds=1)
    with pytest.raises(ValueError):
        ClassifierSpec(Family.BOOSTING, cv_folds=3, cv_grid=({"l2_penalty": 1.0},))


# -- trees and boosting --------------------------------------------------------------


def _scan_best_split(X, g, h, min_leaf=1):
    """Exhaustive Newton-gain scan over every feature and midpoint."""
    best = (-np.inf, None, None)
    G, H = g.sum(), h.sum()
    for j in range(X.shape[1]):
        values = np.unique(X[:, j])
        for lo, hi in zip(values[:-1], values[1:]):
            thr = 0.5 * (lo + hi)
            left = X[:, j] <= thr
            if left.sum() < min_leaf or (~left).sum() < min_leaf:
                continue
            gl, hl = g[left].sum(), h[left].sum()
            gain = gl**2 / hl + (G - gl) ** 2 / (H - hl) - G**2 / H
            if gain > best[0] + 1e-12:
                best = (gain, j, thr)
    return best


def _stump_loss_after_step(x, c, loss, thr, base):
    F = np.full(c.size, base)
    _, g, h = loss.derivatives(F, c)
    left = x <= thr
    F = F + np.where(left, -g[left].sum() / h[left].sum(), -g[~left].sum() / h[~left].sum())
    return float(np.mean(loss.pointwise(F, c)))


@pytest.mark.parametrize("loss", list(Loss))
def test_separable_stump_matches_exhaustive_scan(loss):
    rng = np.random.default_rng(8)
    x = np.sort(rng.uniform(-3, 3, size=60))
    c = (x > 0.4).astype(float)
    X = x[:, None]
    base = float(loss.raw_score(c.mean()))
    _, g, h = loss.derivatives(np.full(c.size, base), c)
    tree = grow_tree(X, presort(X), g, h, max_depth=1)
    values = np.unique(x)
    mids = 0.5 * (values[:-1] + values[1:])
    risks = [_stump_loss_after_step(x, c, loss, t, base) for t in mids]
    assert tree.threshold[0] == pytest.approx(mids[int(np.argmin(risks))], rel=1e-12)
    assert x[x <= tree.threshold[0]].max() < 0.4 < x[x > tree.threshold[0]].min()


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 100_000), m=st.integers(10, 80), d=st.integers(1, 4),
       min_leaf=st.integers(1, 5))
def test_root_split_matches_exhaustive_gain_scan(seed, m, d, min_leaf):
    rng = np.random.default_rng(seed)
    X = np.round(rng.normal(size=(m, d)), 1)  # ties exercise the distinct-value rule
    g = rng.normal(size=m)
    h = rng.uniform(0.5, 2.0, size=m)
    gain, j, thr = _scan_best_split(X, g, h, min_leaf)
    tree = grow_tree(X, presort(X), g, h, max_depth=1, min_leaf=min_leaf)
    if j is None or gain <= 1e-10:
        assert tree.n_leaves == 1
        return
    # ties in gain may legitimately pick a different split with equal gain
    left = X[:, tree.feature[0]] <= tree.threshold[0]
    G, H = g.sum(), h.sum()
    got = g[left].sum() ** 2 / h[left].sum() + g[~left].sum() ** 2 / h[~left].sum() - G**2 / H
    assert got == pytest.approx(gain, rel=1e-9, abs=1e-12)
    # leaves hold Newton steps
    np.testing.assert_allclose(
        tree.value[tree.left[0]], -g[left].sum() / h[left].sum(), rtol=1e-10)


@pytest.mark.parametrize("loss", list(Loss))
def test_boosting_risk_non_increasing(loss):
    rng = np.random.default_rng(9)
    X = rng.normal(size=(400, 3))
    c = (rng.uniform(size=400) < expit(X[:, 0] * X[:, 1] + X[:, 2])).astype(float)
    ens = fit_boosted_classifier(X, c, loss, BoostingParams(num_trees=80, max_depth=2, learning_rate=0.5),
                                 np.random.default_rng(0))
    assert np.all(np.diff(ens.risk_path) <= 0)
    risks = [np.mean(loss.pointwise(ens.raw_score(X, t), c)) for t in range(ens.n_trees + 1)]
    np.testing.assert_allclose(risks, ens.risk_path, rtol=1e-10)


def test_boosting_subsample_is_seeded():
    rng = np.random.default_rng(10)
    X = rng.normal(size=(200, 2))
    c = (X[:, 0] > 0).astype(float)
    params = BoostingParams(num_trees=10, subsample_fraction=0.5)
    a = fit_boosted_classifier(X, c, Loss.LOG, params, np.random.default_rng(1)).raw_score(X)
    b = fit_boosted_classifier(X, c, Loss.LOG, params, np.random.default_rng(1)).raw_score(X)
    np.testing.assert_array_equal(a, b)


def test_boosted_regression_fits_step_function():
    rng = np.random.default_rng(11)
    x = rng.uniform(-1, 1, size=(500, 1))
    y = np.where(x[:, 0] > 0.2, 3.0, -1.0)
    ens = fit_boosted_regression(x, y, BoostingParams(num_trees=50, max_depth=1, learning_rate=0.5),
                                 np.random.default_rng(0))
    assert np.max(np.abs(ens.raw_score(x) - y)) < 1e-3


# -- cross-validation ----------------------------------------------------------------


def test_stratified_folds_balance_classes():
    c = np.r_[np.ones(31), np.zeros(59)]
    folds = stratified_folds(c, 3, np.random.default_rng(0))
    for f in range(3):
        assert abs((c[folds == f] == 1).sum() - 31 / 3) <= 1
        assert abs((folds == f).sum() - 30) <= 1


def test_cv_constant_features_log_risk_ln2():
    X = np.ones((60, 1))
    c = np.r_[np.ones(30), np.zeros(30)]
    spec = ClassifierSpec(Family.LOGISTIC, Loss.LOG, cv_folds=3)
    assert cv_risk(spec, X, c, np.random.default_rng(0)) == pytest.approx(math.log(2), rel=1e-9)


def test_cv_perfect_classifier_floor():
    x = np.r_[np.linspace(-2, -1, 30), np.linspace(1, 2, 30)][:, None]
    c = (x[:, 0] > 0).astype(float)
    spec = ClassifierSpec(Family.BOOSTING, Loss.LOG,
                          boosting=BoostingParams(num_trees=200, max_depth=1, learning_rate=1.0,
                                                  min_leaf_size=1), cv_folds=3)
    risk = cv_risk(spec, x, c, np.random.default_rng(0))
    assert risk <= float(Loss.LOG.score_probability(np.array([1 - EPS]), np.array([1.0]))[0]) + 1e-12


def test_cv_single_class_training_fold_is_finite():
    rng = np.random.default_rng(12)
    X = rng.normal(size=(20, 2))
    c = np.zeros(20)
    c[0] = 1.0
    for loss in Loss:
        spec = ClassifierSpec(Family.LOGISTIC, loss, cv_folds=2)
        assert np.isfinite(cv_risk(spec, X, c, np.random.default_rng(0)))


def test_tune_selects_minimum_risk():
    rng = np.random.default_rng(13)
    X = rng.normal(size=(300, 2))
    c = (rng.uniform(size=300) < expit(X[:, 0] * X[:, 1] * 2)).astype(float)
    spec = ClassifierSpec.boosting_default(Loss.LOG)
    chosen, table = tune(spec, X, c, np.random.default_rng(1))
    risks = [r for _, r in table]
    assert len(table) == 4
    best = table[int(np.argmin(risks))][0]
    assert chosen.boosting.max_depth == best["max_depth"]
    assert chosen.boosting.num_trees == best["num_trees"]
    assert not chosen.tunes
    model = fit(spec, X, c, np.random.default_rng(1))
    assert model.cv_table == table


def test_summary_serializes():
    import json

    rng = np.random.default_rng(14)
    X = rng.normal(size=(100, 2))
    c = (X[:, 0] > 0).astype(float)
    model = fit(ClassifierSpec.logistic_default(0.1), X, c)
    s = json.loads(json.dumps(model.summary()))
    assert s["family"] == "logistic-interaction"
    assert s["diagnostics"]["iterations"] >= 1
