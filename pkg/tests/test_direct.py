import numpy as np
import pytest

from detvi.data import TargetVector
from detvi.direct import breiman_scores, direct_scores, disruption, dominance_check, prescreen
from detvi.errors import ConfigError, DegenerateImportanceError
from detvi.predictors import LinearModel, PredictorHandle, fit_ols, ground_truth_importance
from detvi.simulation import block_covariance, friedman_response, gen_uniform_correlated


def first_feature():
    return PredictorHandle.from_callable(lambda X: X[:, 0])


def two_columns():
    return np.array([[1.0, 5.0], [2.0, 1.0], [3.0, 4.0], [4.0, 2.0]])


def test_hand_oracle_index_shift_mae_and_mse():
    X = two_columns()
    # f(x) = x1; shifted column [3,4,1,2] gives differences [-2,-2,2,2]
    mae = direct_scores(first_feature(), X, "MAE", "approx")
    assert mae.raw.tolist() == [2.0, 0.0]
    assert mae.normalized.tolist() == [1.0, 0.0]
    assert mae.method == "direct-approx"
    mse = direct_scores(first_feature(), X, "MSE", "approx")
    assert mse.raw.tolist() == [4.0, 0.0]
    assert mse.normalized.tolist() == [1.0, 0.0]
    rmse = direct_scores(first_feature(), X, "RMSE", "approx")
    assert rmse.raw[0] == pytest.approx(2.0)


def test_constant_feature_scores_zero(linear_model):
    X = np.random.default_rng(0).standard_normal((30, 6))
    X[:, 2] = 4.0
    rep = direct_scores(linear_model, X)
    assert rep.raw[2] == 0.0
    assert rep.method == "direct-opt"


def test_null_coefficients_score_exactly_zero(linear_data, linear_model):
    X, _, _ = linear_data
    rep = direct_scores(linear_model, X)
    assert rep.raw[4] == 0.0 and rep.raw[5] == 0.0
    assert np.all(rep.raw >= 0)
    assert rep.normalized.sum() == pytest.approx(1.0, abs=1e-12)


def test_degenerate_direct_scores():
    with pytest.raises(DegenerateImportanceError):
        direct_scores(LinearModel(np.zeros(2)), two_columns())


def test_unknown_metric_and_scheme():
    with pytest.raises(ConfigError):
        direct_scores(first_feature(), two_columns(), "MAPE")
    with pytest.raises(ConfigError):
        direct_scores(first_feature(), two_columns(), "MSE", "random")
    with pytest.raises(ConfigError):
        disruption(np.zeros((2, 1)), np.ones((2, 1)), "L4")


def test_direct_scores_are_repeatable_and_thread_invariant(linear_data, linear_model):
    X, _, _ = linear_data
    a = direct_scores(linear_model, X, workers=1)
    for w in (2, 4, 8):
        b = direct_scores(linear_model, X, workers=w)
        assert np.array_equal(a.raw, b.raw) and np.array_equal(a.normalized, b.normalized)


def test_schemes_agree_on_sorted_columns(linear_model):
    X = np.sort(np.random.default_rng(1).standard_normal((50, 6)), axis=0)
    a = direct_scores(linear_model, X, scheme="optimal")
    b = direct_scores(linear_model, X, scheme="approx")
    assert np.array_equal(a.raw, b.raw)


def test_prescreen():
    model = LinearModel(np.array([1.0, 0.0, -2.0]))
    X = np.random.default_rng(2).standard_normal((20, 3))
    assert prescreen(model, X).tolist() == [True, False, True]
    assert not prescreen(model, X, np.inf).any()
    rep = direct_scores(model, X, prescreen_eps=0.0)
    assert rep.extra["inactive"] == ["x2"]
    with pytest.raises(ConfigError):
        prescreen(model, X, -1.0)


def test_prescreen_friedman_informative_active():
    U = gen_uniform_correlated(500, block_covariance(8, 0.0, 5), 3)
    y = friedman_response(U, 0.1, 4)
    handle = PredictorHandle.builtin(fit_ols(U, y))
    assert prescreen(handle, U)[:5].all()


def test_breiman_clipping_and_seeds(linear_data):
    X, y, _ = linear_data
    model = fit_ols(X, y)
    a = breiman_scores(model, X, y, B=10, seed=5)
    b = breiman_scores(model, X, y, B=10, seed=5)
    assert np.array_equal(a.normalized, b.normalized)
    assert a.seeds == [5] and a.B == 10 and a.method == "breiman"
    assert a.metric == "mse-drop"
    unclipped = np.array(a.extra["unclipped"])
    assert np.array_equal(a.raw, np.maximum(unclipped, 0))
    fresh = breiman_scores(model, X, y, B=1, seed=None)
    assert isinstance(fresh.seeds[0], int)


def test_breiman_degenerate():
    X = np.random.default_rng(3).standard_normal((20, 2))
    y = TargetVector(np.zeros(20), "regression")
    with pytest.raises(DegenerateImportanceError):
        breiman_scores(LinearModel(np.zeros(2)), X, y, B=3)


def test_breiman_noise_free_matches_ground_truth():
    rng = np.random.default_rng(4)
    X = rng.standard_normal((1000, 6))
    beta = np.array([2.0, -1.0, 0.5, 0.0, 0.0, 1.5])
    y = TargetVector(X @ beta, "regression")
    model = fit_ols(X, y)
    rep = breiman_scores(model, X, y, B=10, seed=0)
    assert np.corrcoef(rep.normalized, ground_truth_importance(model, X))[0, 1] > 0.95


def test_breiman_classification_metrics():
    rng = np.random.default_rng(5)
    X = rng.standard_normal((300, 3))
    labels = (X[:, 0] > 0).astype(float)
    y = TargetVector(labels, "classification", 2)
    model = LinearModel(np.array([3.0, 0.0, 0.0]), 0.0, "logit")
    brier = breiman_scores(model, X, y, B=5, seed=1)
    acc = breiman_scores(model, X, y, B=5, seed=1, baseline_metric="accuracy-drop")
    assert brier.metric == "neg-brier-drop" and acc.metric == "accuracy-drop"
    assert brier.normalized[0] == 1.0 and acc.normalized[0] == 1.0
    with pytest.raises(ConfigError):
        breiman_scores(model, X, y, baseline_metric="mse-drop")


def test_breiman_thread_invariant(linear_data):
    X, y, _ = linear_data
    model = fit_ols(X, y)
    a = breiman_scores(model, X, y, B=4, seed=2, workers=1)
    b = breiman_scores(model, X, y, B=4, seed=2, workers=4)
    assert np.array_equal(a.raw, b.raw)


def test_dominance_check_zero_model():
    X = np.random.default_rng(6).standard_normal((40, 3))
    dc = dominance_check(LinearModel(np.zeros(3), 1.0), X, B=5, seed=0)
    assert np.all(dc.variances == 0.0)
    assert dc.lhs == 0.0
    assert not dc.verdict_literal and not dc.verdict_consistent
    with pytest.raises(ConfigError):
        dominance_check(LinearModel(np.zeros(3)), X, B=1)


def test_dominance_check_fields(linear_data, linear_model):
    X, _, _ = linear_data
    a = dominance_check(linear_model, X, B=10, seed=3)
    b = dominance_check(linear_model, X, B=10, seed=3)
    assert np.array_equal(a.deterministic, b.deterministic)
    assert a.rhs_consistent == pytest.approx(np.sum(a.variances) / 10)
    assert a.rhs_literal == pytest.approx(np.sum(a.variances**2) / 10)
    assert a.lhs == pytest.approx(np.sum((a.deterministic - a.monte_carlo) ** 2))
    assert set(a.as_dict()) >= {"lhs", "rhs_literal", "rhs_consistent", "verdict_consistent"}
