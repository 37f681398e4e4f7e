"""Clustering, classification and MLP regression."""

import itertools
import warnings
from datetime import date

import numpy as np
import pytest

from districtems.core import TimeGrid
from districtems.forecast import (
    DecisionTree,
    MlpConfig,
    NearestCentroidBaseline,
    RandomForestConfig,
    TrainingDivergedError,
    chunk_daily,
    classify_day,
    fit_profile_forecaster,
    forecast_day_cluster,
    kmeans_fit,
    load_model,
    mae,
    mlp_fit,
    mlp_gradient,
    mlp_init,
    mlp_loss,
    mlp_predict,
    rf_fit,
    save_model,
)
from districtems.forecast.mlp import MlpRegressor

GRID = TimeGrid()


def brute_force_inertia(X, k):
    best = np.inf
    for labels in itertools.product(range(k), repeat=len(X)):
        labels = np.array(labels)
        if len(set(labels)) < k:
            continue
        total = sum(((X[labels == j] - X[labels == j].mean(axis=0)) ** 2).sum() for j in range(k))
        best = min(best, total)
    return best


# --- chunking --------------------------------------------------------------


def test_chunk_whole_days():
    assert len(chunk_daily(np.arange(192.0), GRID)) == 2


def test_chunk_drops_partial_day_with_warning():
    with pytest.warns(UserWarning, match="trailing"):
        s = chunk_daily(np.arange(200.0), GRID)
    assert len(s) == 2


def test_chunk_constant_and_features():
    s = chunk_daily(np.full(288, 3.0), GRID, t_amb=np.full(288, 7.0))
    assert np.all(s.profiles == 3.0)
    assert np.all(s.features[:, -1] == 7.0)
    assert s.dates[0] == date(2018, 11, 1)
    assert list(s.features[0, :3]) == [1.0, 0.0, 0.0]  # Thursday is a weekday


def test_chunk_empty():
    with pytest.raises(ValueError):
        chunk_daily([], GRID)


# --- k-means ---------------------------------------------------------------


def test_k1_centroid_is_mean():
    X = np.random.default_rng(0).normal(size=(7, 5))
    m = kmeans_fit(X, 1)
    assert np.allclose(m.centroids[0], X.mean(axis=0), atol=1e-12)


def test_separated_groups():
    rng = np.random.default_rng(1)
    X = np.vstack([rng.normal(0, 0.1, (5, 4)), rng.normal(10, 0.1, (5, 4))])
    m = kmeans_fit(X, 2, seed=3)
    assert len(set(m.labels[:5])) == 1 and len(set(m.labels[5:])) == 1
    assert m.labels[0] != m.labels[5]


@pytest.mark.parametrize("seed", range(5))
def test_six_profiles_match_brute_force(seed):
    X = np.random.default_rng(seed).normal(size=(6, 4))
    m = kmeans_fit(X, 2, seed=seed)
    assert m.inertia == pytest.approx(brute_force_inertia(X, 2), abs=1e-9)


def test_inertia_history_non_increasing_and_centroids_are_means():
    X = np.random.default_rng(2).normal(size=(40, 6))
    m = kmeans_fit(X, 4, seed=0, n_init=1)
    assert all(b <= a + 1e-12 for a, b in zip(m.inertia_history, m.inertia_history[1:]))
    for j in range(4):
        assert np.allclose(m.centroids[j], X[m.labels == j].mean(axis=0), atol=1e-9)


def test_k_larger_than_profiles():
    with pytest.raises(ValueError):
        kmeans_fit(np.zeros((3, 4)), 4)


# --- classifiers -----------------------------------------------------------


def separable(n=120, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, (n, 3))
    y = (X[:, 0] + 0.5 * X[:, 1] > 0).astype(int)
    keep = np.abs(X[:, 0] + 0.5 * X[:, 1]) > 0.1
    return X[keep], y[keep]


def test_rf_oob_on_separable_set():
    X, y = separable()
    rf = rf_fit(X, y, RandomForestConfig(n_trees=40, max_depth=6, seed=1))
    assert rf.oob_accuracy >= 0.95


def test_depth_one_tree_on_binary_feature():
    X = np.array([[0.0], [1.0], [0.0], [1.0], [1.0]])
    y = np.array([0, 1, 0, 1, 1])
    t = DecisionTree(max_depth=1).fit(X, y)
    assert np.array_equal(t.predict(X), y)


def test_constant_labels_give_constant_prediction():
    X = np.random.default_rng(3).normal(size=(10, 2))
    with pytest.warns(UserWarning):
        rf = rf_fit(X, np.full(10, 2), n_classes=3)
    assert np.all(rf.predict(np.random.default_rng(4).normal(size=(6, 2))) == 2)


def test_rf_vote_ignores_tree_order():
    X, y = separable(seed=5)
    rf = rf_fit(X, y, RandomForestConfig(n_trees=15, seed=2))
    before = rf.predict(X)
    rf.trees = rf.trees[::-1]
    assert np.array_equal(rf.predict(X), before)


def test_rf_deterministic_for_seed():
    X, y = separable(seed=6)
    a = rf_fit(X, y, RandomForestConfig(seed=9)).predict(X)
    b = rf_fit(X, y, RandomForestConfig(seed=9)).predict(X)
    assert np.array_equal(a, b)


def test_nearest_centroid_baseline():
    F = np.array([[0.0, 0.0], [0.1, 0.0], [5.0, 5.0], [5.1, 5.0]])
    clf = NearestCentroidBaseline().fit(F, [0, 0, 1, 1])
    assert clf.predict_one([5.05, 5.0]) == 1 and clf.predict_one([0.05, 0.0]) == 0


def _profile_set(days=28, seed=0):
    rng = np.random.default_rng(seed)
    t = np.repeat(rng.uniform(0, 15, days), 96)
    hours = np.tile(np.arange(96) / 4, days)
    y = np.maximum(0, (20 - t) * (1 + np.sin(np.pi * hours / 24))) + rng.normal(0, 0.1, t.size)
    return chunk_daily(y, GRID, t_amb=t)


def test_pipeline_forecast_is_a_centroid_and_recalls_training_days():
    data = _profile_set()
    fc = fit_profile_forecaster(data, k=3, seed=1)
    hits = 0
    for d in range(len(data)):
        out = fc.forecast(data.features[d])
        assert any(np.array_equal(out, c) for c in fc.clusters.centroids)
        hits += classify_day(fc.classifier, data.features[d]) == fc.clusters.labels[d]
    assert hits / len(data) >= 0.9


def test_single_cluster_forecast_ignores_features():
    data = _profile_set(days=5)
    with pytest.warns(UserWarning, match="single-class"):
        fc = fit_profile_forecaster(data, k=1)
    for f in ([1, 0, 0, -50.0], [0, 1, 0, 40.0]):
        assert np.array_equal(forecast_day_cluster(fc.clusters, fc.classifier, np.array(f)), fc.clusters.centroids[0])


def test_saved_models_reload(tmp_path):
    data = _profile_set(days=10)
    fc = fit_profile_forecaster(data, k=2, seed=0)
    save_model(fc, tmp_path / "p.json")
    back = load_model(tmp_path / "p.json")
    for d in range(len(data)):
        assert np.array_equal(back.forecast(data.features[d]), fc.forecast(data.features[d]))


# --- MLP -------------------------------------------------------------------


def _flat(model: MlpRegressor):
    return np.concatenate([w.ravel() for w in model.weights] + [b.ravel() for b in model.biases])


def _set(model: MlpRegressor, theta):
    pos = 0
    for arr in model.weights + model.biases:
        arr[...] = theta[pos:pos + arr.size].reshape(arr.shape)
        pos += arr.size


def test_zero_weights_predict_output_bias():
    m = mlp_init([3, 4, 1])
    for w in m.weights:
        w[...] = 0.0
    m.biases[-1][...] = 2.5
    assert np.allclose(mlp_predict(m, np.random.default_rng(0).normal(size=(5, 3))), 2.5)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_fit_linear_map_one_hidden_unit(seed):
    # a single tanh unit only approaches a line as its weight shrinks; full-batch steps get there
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1, 1, (100, 1))
    model = mlp_fit(x, 2 * x[:, 0], MlpConfig(hidden=(1,), epochs=4000, lr=0.1, batch_size=100, seed=seed))
    xt = rng.uniform(-1, 1, (50, 1))
    assert np.mean((mlp_predict(model, xt) - 2 * xt[:, 0]) ** 2) <= 1e-3


def test_epoch_loss_non_increasing_on_convex_problem():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(64, 3))
    y = X @ np.array([1.0, -2.0, 0.5]) + 0.3
    model = mlp_fit(X, y, MlpConfig(hidden=(), epochs=60, lr=0.05, momentum=0.0, batch_size=64))
    h = model.loss_history
    assert all(b <= a + 1e-12 for a, b in zip(h, h[1:]))
    assert h[-1] < 1e-2 * h[0]


@pytest.mark.parametrize("net", range(20))
def test_gradient_matches_finite_differences(net):
    rng = np.random.default_rng(100 + net)
    d_in, hid, d_out = int(rng.integers(1, 5)), int(rng.integers(1, 6)), int(rng.integers(1, 3))
    layers = [d_in] + [hid] * int(rng.integers(1, 3)) + [d_out]
    model = mlp_init(layers, seed=net)
    for b in model.biases:
        b[...] = rng.normal(0, 0.5, b.shape)
    model.y_sd = rng.uniform(0.5, 2.0, d_out)
    model.y_mu = rng.normal(size=d_out)
    X = rng.normal(size=(7, d_in))
    Y = rng.normal(size=(7, d_out))
    dW, db = mlp_gradient(model, X, Y)
    g = np.concatenate([w.ravel() for w in dW] + [b.ravel() for b in db])
    theta = _flat(model)
    fd = np.zeros_like(theta)
    h = 1e-5
    for i in range(theta.size):
        t = theta.copy()
        t[i] += h
        _set(model, t)
        up = mlp_loss(model, X, Y)
        t[i] -= 2 * h
        _set(model, t)
        fd[i] = (up - mlp_loss(model, X, Y)) / (2 * h)
    _set(model, theta)
    rel = np.linalg.norm(g - fd) / max(np.linalg.norm(g), np.linalg.norm(fd), 1e-12)
    assert rel <= 1e-4


def test_divergence_aborts_with_diagnostics():
    X = np.random.default_rng(0).normal(size=(50, 2))
    with pytest.raises(TrainingDivergedError, match="epoch"):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            mlp_fit(X, X[:, 0] * 1e3, MlpConfig(lr=1e3, epochs=50))


def test_bad_training_input():
    with pytest.raises(ValueError):
        mlp_fit(np.zeros((4, 1)), np.zeros(4), MlpConfig(epochs=0))
    with pytest.raises(ValueError):
        mlp_fit(np.array([[np.nan]]), [1.0])


def test_mlp_save_load(tmp_path):
    X = np.random.default_rng(0).normal(size=(30, 2))
    m = mlp_fit(X, X.sum(axis=1), MlpConfig(epochs=5))
    save_model(m, tmp_path / "m.json")
    assert np.array_equal(mlp_predict(load_model(tmp_path / "m.json"), X), mlp_predict(m, X))


# --- MAE -------------------------------------------------------------------


def test_mae_examples():
    assert mae([1, 2, 3], [1, 2, 3]) == 0.0
    assert mae([1, 3], [2, 2]) == 1.0
    rng = np.random.default_rng(8)
    f, a = rng.normal(size=37), rng.normal(size=37)
    total = 0.0
    for i in range(37):
        total += abs(f[i] - a[i])
    assert mae(f, a) == pytest.approx(total / 37, rel=1e-12)
    with pytest.raises(ValueError):
        mae([], [])
