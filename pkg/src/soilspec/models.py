"""Model registry, default search grids and the JSON model container."""

import json
from pathlib import Path

from .base import HyperparameterError
from .ensembles import AdaBoostR2, ExtraTrees, GradientBoosting, RandomForest, TreeEnsemble
from .regressors import KNNRegressor, LinearRegression, MLPRegressor, PLSRegression, SVR
from .som import SOMRegressor

MODEL_FORMAT = "soilspec-model"
MODEL_VERSION = 1

REGISTRY = {cls.kind: cls for cls in (
    LinearRegression, PLSRegression, RandomForest, ExtraTrees, AdaBoostR2, GradientBoosting,
    KNNRegressor, SVR, MLPRegressor, SOMRegressor)}
ALIASES = {"svm": "svr", "ann": "mlp", "k-nn": "knn", "extra_trees": "et", "random_forest": "rf"}

DEFAULT_GRIDS = {
    "linear": {},
    "pls": {"n_components": [5, 10, 15]},
    "rf": {"n_estimators": [100, 500, 1000]},
    "et": {"n_estimators": [100, 500, 1000]},
    "adaboost": {"learning_rate": [1.0, 3.0], "n_estimators": [50, 150]},
    "gb": {"n_estimators": [500, 1000], "max_depth": [2, 3]},
    "knn": {"n_neighbors": [3, 6, 9, 12]},
    "svr": {"C": [1e3, 2.7e4, 1e5], "gamma": [1e-4, 1.78e-3, 1e-2]},
    "mlp": {"epochs": [35, 70]},
    "som": {"alpha_start": [0.4]},
}


class ModelFileError(ValueError):
    pass


def canonical_kind(kind):
    kind = ALIASES.get(kind.lower(), kind.lower())
    if kind not in REGISTRY:
        raise HyperparameterError(f"unknown model kind {kind!r}; choose from {sorted(REGISTRY)}")
    return kind


def make_model(kind, params=None, seed=0):
    return REGISTRY[canonical_kind(kind)](params, seed)


def default_params(kind):
    return {name: p.default for name, p in REGISTRY[canonical_kind(kind)].PARAMS.items()}


def validate_grid(kind, grid):
    """Check a grid's keys and candidate lists; returns a normalised copy."""
    cls = REGISTRY[canonical_kind(kind)]
    out = {}
    for name, values in grid.items():
        if name not in cls.PARAMS:
            raise HyperparameterError(f"unknown hyperparameter {name!r} for model {cls.kind!r}")
        if not isinstance(values, list) or not values:
            raise HyperparameterError(f"grid entry {name!r} must be a non-empty list")
        for v in values:
            cls.PARAMS[name].validate(name, v)
        out[name] = list(values)
    return out


def has_importances(model):
    return isinstance(model, TreeEnsemble)


def model_to_dict(model):
    return {"format": MODEL_FORMAT, "version": MODEL_VERSION, **model.to_dict()}


def model_from_dict(data):
    if not isinstance(data, dict) or data.get("format") != MODEL_FORMAT:
        raise ModelFileError("not a model document (missing format tag)")
    if data.get("version") != MODEL_VERSION:
        raise ModelFileError(f"unsupported model version {data.get('version')!r}")
    try:
        return REGISTRY[canonical_kind(data["kind"])].from_dict(data)
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFileError(f"malformed model document: {exc}") from exc


def dumps(obj):
    return json.dumps(obj, sort_keys=True, allow_nan=False, separators=(",", ":"))


def save_model(model, path):
    Path(path).write_text(dumps(model_to_dict(model)) + "\n", encoding="utf-8")


def load_model(path):
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ModelFileError(f"{path}: invalid JSON ({exc})") from exc
    return model_from_dict(data)
