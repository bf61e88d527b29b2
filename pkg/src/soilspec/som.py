"""Two-stage self-organising map regressor.

An unsupervised input map is fitted to the features; a supervised output map
of scalar cells, aligned with the input neurons, is then fitted to the
targets through the frozen input map's best matching units. Prediction is a
lookup of the output cell at the query's best matching unit.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import rng
from .base import Param, Regressor, positive_int, positive_number


@dataclass(frozen=True)
class SomSchedule:
    """Exponentially decaying learning rate and neighbourhood radius.

    A schedule with ``alpha_start == alpha_end == 0`` is allowed and leaves
    maps untouched.
    """

    n_iter_input: int = 5000
    n_iter_output: int = 8000
    alpha_start: float = 0.4
    alpha_end: float = 0.005
    radius_start: Optional[float] = None
    radius_end: float = 1.0

    def __post_init__(self):
        frozen = self.alpha_start == 0 and self.alpha_end == 0
        if not frozen and not self.alpha_start > self.alpha_end > 0:
            raise ValueError("learning rates must satisfy alpha_start > alpha_end > 0")
        if self.alpha_start > 1:
            raise ValueError("alpha_start must be <= 1")
        if self.radius_end < 1 or (self.radius_start is not None and self.radius_start < self.radius_end):
            raise ValueError("radii must satisfy radius_start >= radius_end >= 1")
        if self.n_iter_input < 1 or self.n_iter_output < 1:
            raise ValueError("iteration counts must be positive")

    def start_radius(self, rows, cols):
        return self.radius_start if self.radius_start is not None else max(rows, cols) / 2.0

    @staticmethod
    def decay(start, end, n_iter):
        """Values for iterations 0..n_iter-1, hitting ``end`` at the last one."""
        if n_iter == 1 or start == end:
            return np.full(n_iter, float(start))
        t = np.arange(n_iter) / (n_iter - 1)
        vals = start * (end / start) ** t
        vals[-1] = end
        return vals

    def alphas(self, n_iter):
        return self.decay(self.alpha_start, self.alpha_end, n_iter)

    def radii(self, n_iter, rows, cols):
        return self.decay(self.start_radius(rows, cols), self.radius_end, n_iter)


@dataclass
class SomGrid:
    """Neuron weights on a rows x cols lattice, stored as (rows*cols, d)."""

    rows: int
    cols: int
    weights: np.ndarray

    @property
    def n_neurons(self):
        return self.rows * self.cols

    def coords(self):
        r, c = np.divmod(np.arange(self.n_neurons), self.cols)
        return np.column_stack([r, c]).astype(float)

    @classmethod
    def initialise(cls, rows, cols, X, seed):
        """Weights drawn uniformly within the per-feature range of ``X``."""
        gen = rng.numpy_rng(seed, "som", "init")
        lo, hi = X.min(axis=0), X.max(axis=0)
        return cls(rows, cols, lo + gen.random((rows * cols, X.shape[1])) * (hi - lo))


def find_bmu(grid, x):
    """(row, col) of the neuron closest to ``x``; ties go to the lowest row, then col."""
    x = np.asarray(x, dtype=float)
    if x.shape != (grid.weights.shape[1],):
        raise ValueError(f"query has {x.size} features, map expects {grid.weights.shape[1]}")
    flat = int(np.argmin(((grid.weights - x) ** 2).sum(axis=1)))
    return divmod(flat, grid.cols)


def bmu_indices(grid, X):
    """Flat BMU index per row of ``X`` (same tie rule as :func:`find_bmu`)."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != grid.weights.shape[1]:
        raise ValueError(f"expected {grid.weights.shape[1]} features")
    out = np.empty(X.shape[0], dtype=np.int64)
    for s in range(0, X.shape[0], 16):
        block = X[s:s + 16]
        d2 = ((block[:, None, :] - grid.weights[None, :, :]) ** 2).sum(axis=2)
        out[s:s + 16] = np.argmin(d2, axis=1)
    return out


def quantization_error(grid, X):
    """Mean Euclidean distance from each row to its best matching unit."""
    X = np.asarray(X, dtype=float)
    d = np.array([np.sqrt(((grid.weights - x) ** 2).sum(axis=1).min()) for x in X])
    return float(d.mean())


def neighborhood_weight(grid_distance, radius):
    """Gaussian weight exp(-d^2 / (2 r^2)) of a neuron at lattice distance d."""
    if not radius > 0:
        raise ValueError("radius must be positive")
    d = np.asarray(grid_distance, dtype=float)
    return np.exp(-(d ** 2) / (2.0 * radius ** 2))


def fit_input_som(grid, X, schedule, seed):
    """Train the unsupervised map; the input grid is left untouched."""
    X = np.asarray(X, dtype=float)
    if X.shape[0] == 0:
        raise ValueError("cannot fit a SOM on an empty training set")
    gen = rng.numpy_rng(seed, "som", "input")
    T = schedule.n_iter_input
    alphas = schedule.alphas(T)
    radii = schedule.radii(T, grid.rows, grid.cols)
    draws = gen.integers(0, X.shape[0], T)
    W = grid.weights.copy()
    coords = grid.coords()
    for t in range(T):
        x = X[draws[t]]
        bmu = int(np.argmin(((W - x) ** 2).sum(axis=1)))
        d2 = ((coords - coords[bmu]) ** 2).sum(axis=1)
        h = np.exp(-d2 / (2.0 * radii[t] ** 2))
        W += (alphas[t] * h)[:, None] * (x - W)
    return SomGrid(grid.rows, grid.cols, W)


def fit_output_som(grid, output, X, y, schedule, seed):
    """Train the output cells against the frozen input map's BMUs; returns new cells."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.shape[0] == 0:
        raise ValueError("cannot fit a SOM on an empty training set")
    gen = rng.numpy_rng(seed, "som", "output")
    T = schedule.n_iter_output
    alphas = schedule.alphas(T)
    radii = schedule.radii(T, grid.rows, grid.cols)
    bmus = bmu_indices(grid, X)
    draws = gen.integers(0, X.shape[0], T)
    out = np.array(output, dtype=float).reshape(-1).copy()
    coords = grid.coords()
    for t in range(T):
        k = draws[t]
        d2 = ((coords - coords[bmus[k]]) ** 2).sum(axis=1)
        h = np.exp(-d2 / (2.0 * radii[t] ** 2))
        out += alphas[t] * h * (y[k] - out)
    return out


def predict_som(grid, output, X):
    return np.asarray(output).reshape(-1)[bmu_indices(grid, X)]


class SOMRegressor(Regressor):
    kind = "som"
    PARAMS = {
        "rows": Param(30, "map rows", positive_int),
        "cols": Param(70, "map columns", positive_int),
        "n_iter_input": Param(5000, "iterations of the unsupervised input map", positive_int),
        "n_iter_output": Param(8000, "iterations of the supervised output map", positive_int),
        "alpha_start": Param(0.4, "initial learning rate", positive_number),
        "alpha_end": Param(0.005, "final learning rate", positive_number),
        "radius_start": Param(None, "initial neighbourhood radius (None = max(rows, cols)/2)",
                              lambda v: v is None or positive_number(v)),
        "radius_end": Param(1.0, "final neighbourhood radius", positive_number),
    }

    @property
    def schedule(self):
        p = self.params
        return SomSchedule(p["n_iter_input"], p["n_iter_output"], p["alpha_start"], p["alpha_end"],
                           p["radius_start"], p["radius_end"])

    def fit(self, X, y):
        X, y = self._check_fit_input(X, y)
        schedule = self.schedule
        p = self.params
        grid = SomGrid.initialise(p["rows"], p["cols"], X, self.seed)
        self.grid_ = fit_input_som(grid, X, schedule, self.seed)
        self.output_ = fit_output_som(self.grid_, np.full(grid.n_neurons, y.mean()), X, y, schedule, self.seed)
        return self

    def _predict(self, X):
        return predict_som(self.grid_, self.output_, X)

    def get_state(self):
        return {"rows": self.grid_.rows, "cols": self.grid_.cols, "weights": self.grid_.weights.tolist(),
                "output": self.output_.tolist()}

    def set_state(self, state):
        self.grid_ = SomGrid(int(state["rows"]), int(state["cols"]),
                             np.array(state["weights"], dtype=float).reshape(-1, self.n_features_))
        self.output_ = np.array(state["output"], dtype=float)
