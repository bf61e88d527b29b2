"""Optional preprocessing step: PCA, min-max scaling or nothing."""

from dataclasses import dataclass
from typing import Optional

import numpy as np

MODES = ("none", "pca", "scaling")
DEFAULT_COMPONENTS = 20


class PreprocessError(ValueError):
    pass


def _check_matrix(X, name="features"):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise PreprocessError(f"{name} must be a 2-d matrix")
    if not np.all(np.isfinite(X)):
        raise PreprocessError(f"{name} contain non-finite values")
    return X


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray

    def transform(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.mean.size:
            raise PreprocessError(f"expected {self.mean.size} feature columns, got {np.shape(X)[-1]}")
        return (X - self.mean) @ self.components.T

    def inverse_transform(self, Z):
        return np.asarray(Z, dtype=float) @ self.components + self.mean


def pca_fit(X, n_components=DEFAULT_COMPONENTS):
    """Principal directions of the centred features (no standardisation).

    Components come from a symmetric eigendecomposition of the sample
    covariance; each is sign-fixed so its largest-magnitude entry is positive.
    """
    X = _check_matrix(X)
    n, d = X.shape
    if n_components < 1 or n_components > d:
        raise PreprocessError(f"n_components must lie in [1, {d}]")
    if n <= n_components:
        raise PreprocessError(f"PCA with {n_components} components needs more than {n_components} rows, got {n}")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = Xc.T @ Xc / (n - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals, kind="stable")[::-1][:n_components]
    comps = evecs[:, order].T.copy()
    lead = comps[np.arange(n_components), np.argmax(np.abs(comps), axis=1)]
    comps *= np.where(lead < 0, -1.0, 1.0)[:, None]
    return PcaModel(mean, comps, np.maximum(evals[order], 0.0))


@dataclass(frozen=True)
class MinMaxScaler:
    """Per-column extrema of the features with the target stacked last."""

    feature_min: np.ndarray
    feature_max: np.ndarray

    @property
    def n_features(self):
        return self.feature_min.size - 1

    @staticmethod
    def _scale(x, lo, hi):
        span = hi - lo
        safe = np.where(span > 0, span, 1.0)
        return np.where(span > 0, (x - lo) / safe, 0.0)

    def transform(self, X, y=None):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise PreprocessError(f"expected {self.n_features} feature columns, got {np.shape(X)[-1]}")
        Xs = self._scale(X, self.feature_min[:-1], self.feature_max[:-1])
        if y is None:
            return Xs
        return Xs, self.transform_target(y)

    def transform_target(self, y):
        return self._scale(np.asarray(y, dtype=float), self.feature_min[-1], self.feature_max[-1])

    def inverse_transform(self, Xs):
        lo, hi = self.feature_min[:-1], self.feature_max[:-1]
        return np.asarray(Xs, dtype=float) * (hi - lo) + lo

    @property
    def target_range(self):
        return float(self.feature_max[-1] - self.feature_min[-1])

    def inverse_target(self, ys):
        """Map scaled targets back to the original units."""
        if self.target_range <= 0:
            raise PreprocessError("target column was constant during fit; cannot invert scaling")
        return np.asarray(ys, dtype=float) * self.target_range + self.feature_min[-1]


def minmax_fit(X, y):
    X = _check_matrix(X)
    y = np.asarray(y, dtype=float).reshape(-1)
    if X.shape[0] == 0:
        raise PreprocessError("cannot fit scaler on empty input")
    if y.size != X.shape[0]:
        raise PreprocessError("feature and target row counts differ")
    if not np.all(np.isfinite(y)):
        raise PreprocessError("targets contain non-finite values")
    stacked = np.column_stack([X, y])
    return MinMaxScaler(stacked.min(axis=0), stacked.max(axis=0))


@dataclass(frozen=True)
class PreprocessorState:
    mode: str = "none"
    pca: Optional[PcaModel] = None
    scaler: Optional[MinMaxScaler] = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise PreprocessError(f"unknown preprocessing mode {self.mode!r}; choose from {MODES}")
        if (self.pca is not None) != (self.mode == "pca") or (self.scaler is not None) != (self.mode == "scaling"):
            raise PreprocessError(f"state for mode {self.mode!r} carries the wrong fitted model")

    def transform(self, X, y=None):
        """Apply the fitted step; returns ``X`` or ``(X, y)`` when targets are given."""
        if self.mode == "pca":
            Xt = self.pca.transform(X)
            return Xt if y is None else (Xt, np.asarray(y, dtype=float))
        if self.mode == "scaling":
            return self.scaler.transform(X, y)
        X = np.asarray(X, dtype=float)
        return X if y is None else (X, np.asarray(y, dtype=float))

    def inverse_target(self, y):
        if self.mode == "scaling":
            return self.scaler.inverse_target(y)
        return np.asarray(y, dtype=float)

    def to_dict(self):
        out = {"mode": self.mode}
        if self.pca is not None:
            out["pca"] = {
                "mean": self.pca.mean.tolist(),
                "components": self.pca.components.tolist(),
                "explained_variance": self.pca.explained_variance.tolist(),
            }
        if self.scaler is not None:
            out["scaler"] = {
                "minima": self.scaler.feature_min.tolist(),
                "maxima": self.scaler.feature_max.tolist(),
            }
        return out

    @classmethod
    def from_dict(cls, data):
        pca = scaler = None
        if "pca" in data:
            p = data["pca"]
            pca = PcaModel(np.array(p["mean"], dtype=float), np.array(p["components"], dtype=float),
                           np.array(p["explained_variance"], dtype=float))
        if "scaler" in data:
            s = data["scaler"]
            scaler = MinMaxScaler(np.array(s["minima"], dtype=float), np.array(s["maxima"], dtype=float))
        return cls(data.get("mode", "none"), pca, scaler)


def fit_preprocessor(mode, X, y, n_components=DEFAULT_COMPONENTS):
    if mode == "pca":
        return PreprocessorState("pca", pca=pca_fit(X, n_components))
    if mode == "scaling":
        return PreprocessorState("scaling", scaler=minmax_fit(X, y))
    return PreprocessorState(mode)


def apply_preprocessing(mode, X_train, y_train, X_test, y_test, n_components=DEFAULT_COMPONENTS,
                        fit_on_all=False):
    """Fit the preprocessing step and apply it to both subsets.

    Statistics come from the training subset only unless ``fit_on_all`` is
    set. Returns ``(state, X_train, y_train, X_test, y_test)``.
    """
    if fit_on_all:
        state = fit_preprocessor(mode, np.vstack([X_train, X_test]),
                                 np.concatenate([y_train, y_test]), n_components)
    else:
        state = fit_preprocessor(mode, X_train, y_train, n_components)
    Xtr, ytr = state.transform(X_train, y_train)
    Xte, yte = state.transform(X_test, y_test)
    return state, Xtr, ytr, Xte, yte
