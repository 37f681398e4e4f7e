"""Day-ahead forecasting: cluster-and-classify pipeline, MLP regression, metrics."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cluster import ClusterModel, kmeans_fit
from .mlp import (
    MlpConfig,
    MlpRegressor,
    TrainingDivergedError,
    mlp_fit,
    mlp_gradient,
    mlp_init,
    mlp_loss,
    mlp_predict,
)
from .profiles import DAY_TYPES, DailyProfileSet, chunk_daily, day_features, day_type, mae
from .trees import DecisionTree, NearestCentroidBaseline, RandomForest, RandomForestConfig, rf_fit

__all__ = [
    "ClusterModel", "kmeans_fit", "MlpConfig", "MlpRegressor", "TrainingDivergedError", "mlp_fit",
    "mlp_gradient", "mlp_init", "mlp_loss", "mlp_predict", "DAY_TYPES", "DailyProfileSet", "chunk_daily",
    "day_features", "day_type", "mae", "DecisionTree", "NearestCentroidBaseline", "RandomForest",
    "RandomForestConfig", "rf_fit", "ProfileForecaster", "classify_day", "forecast_day_cluster",
    "fit_profile_forecaster", "save_model", "load_model",
]


def classify_day(clf, features) -> int:
    if clf is None:
        raise ValueError("classifier is not trained")
    return int(clf.predict(np.atleast_2d(features))[0])


def forecast_day_cluster(model: ClusterModel, clf, features) -> np.ndarray:
    """Day-ahead profile: the centroid of the cluster the classifier picks."""
    if model is None or model.centroids is None:
        raise ValueError("cluster model is not trained")
    if model.k == 1:
        return model.forecast(0)
    return model.forecast(classify_day(clf, features))


@dataclass
class ProfileForecaster:
    """Trained cluster prototypes plus the classifier that picks among them."""

    clusters: ClusterModel
    classifier: object

    def forecast(self, features) -> np.ndarray:
        return forecast_day_cluster(self.clusters, self.classifier, features)


def fit_profile_forecaster(data: DailyProfileSet, k: int, seed: int = 0, classifier: str = "rf",
                           rf_cfg: RandomForestConfig | None = None) -> ProfileForecaster:
    k = min(k, len(data))
    clusters = kmeans_fit(data, k, seed)
    if classifier == "rf":
        clf = rf_fit(data.features, clusters.labels, rf_cfg or RandomForestConfig(seed=seed), n_classes=k)
    elif classifier == "nearest":
        clf = NearestCentroidBaseline().fit(data.features, clusters.labels, n_classes=k)
    else:
        raise ValueError(f"unknown classifier {classifier!r}")
    return ProfileForecaster(clusters, clf)


def _model_to_dict(model) -> dict:
    if isinstance(model, ProfileForecaster):
        c = model.clusters
        return {"kind": "profile", "k": c.k, "centroids": c.centroids.tolist(), "labels": c.labels.tolist(),
                "inertia": c.inertia, "classifier": model.classifier.to_dict()}
    if isinstance(model, MlpRegressor):
        return model.to_dict()
    raise TypeError(f"cannot serialise {type(model).__name__}")


def _model_from_dict(d: dict):
    if d["kind"] == "profile":
        c = ClusterModel(d["k"], np.array(d["centroids"], dtype=float), np.array(d["labels"], dtype=int),
                         d["inertia"])
        cd = d["classifier"]
        clf = RandomForest.from_dict(cd) if cd["kind"] == "random_forest" else NearestCentroidBaseline.from_dict(cd)
        return ProfileForecaster(c, clf)
    if d["kind"] == "mlp":
        return MlpRegressor.from_dict(d)
    raise ValueError(f"unknown model kind {d['kind']!r}")


def save_model(model, path) -> None:
    Path(path).write_text(json.dumps(_model_to_dict(model), indent=1, sort_keys=True) + "\n")


def load_model(path):
    return _model_from_dict(json.loads(Path(path).read_text()))
