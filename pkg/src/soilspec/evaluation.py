"""Metrics, k-fold grid search, multi-seed experiments and report export."""

import csv
import itertools
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import rng
from .dataset import SplitSpec, assemble_features, split_train_test
from .models import canonical_kind, dumps, has_importances, make_model, validate_grid
from .preprocess import DEFAULT_COMPONENTS, MODES, apply_preprocessing

log = logging.getLogger(__name__)

REPORT_SCHEMA = "soilspec-report/1"
DEFAULT_SEEDS = (0, 1, 2, 3, 4, 5, 6)


class ExperimentError(RuntimeError):
    pass


def r_squared(y_true, y_pred):
    """Coefficient of determination 1 - SS_res / SS_tot."""
    y_true = np.asarray(y_true, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float)
    if y_true.shape != y_pred.shape:
        raise ValueError("y_true and y_pred differ in length")
    if y_true.size < 2:
        raise ValueError("R^2 needs at least two samples")
    ss_tot = np.sum((y_true - y_true.mean()) ** 2)
    if ss_tot == 0:
        raise ValueError("R^2 is undefined for constant y_true")
    return float(1.0 - np.sum((y_true - y_pred) ** 2) / ss_tot)


def rmse(y_true, y_pred):
    y_true = np.asarray(y_true, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float)
    if y_true.shape != y_pred.shape:
        raise ValueError("y_true and y_pred differ in length")
    if y_true.size == 0:
        raise ValueError("RMSE needs at least one sample")
    return float(np.sqrt(np.mean((y_true - y_pred) ** 2)))


@dataclass(frozen=True)
class Metrics:
    r_squared: float
    rmse: float
    n: int


def score(y_true, y_pred):
    return Metrics(r_squared(y_true, y_pred), rmse(y_true, y_pred), int(np.size(y_true)))


def kfold_split(n, k=10, seed=0):
    """Shuffle ``range(n)`` and cut it into ``k`` contiguous folds of near-equal size."""
    if k < 2:
        raise ValueError("k must be >= 2")
    if n < k:
        raise ValueError(f"cannot make {k} folds from {n} samples")
    return np.array_split(rng.permutation(n, seed), k)


@dataclass(frozen=True)
class GridSpec:
    kind: str
    grid: dict = field(default_factory=dict)

    def points(self):
        """Cartesian product in listed key and candidate order."""
        keys = list(self.grid)
        return [dict(zip(keys, combo)) for combo in itertools.product(*(self.grid[k] for k in keys))]


def _cv_unit(args):
    kind, params, X, y, train_idx, val_idx, mode, n_components, seed = args
    try:
        _, Xtr, ytr, Xval, yval = apply_preprocessing(mode, X[train_idx], y[train_idx], X[val_idx], y[val_idx],
                                                      n_components)
        model = make_model(kind, params, seed).fit(Xtr, ytr)
        pred = model.predict(Xval)
        return r_squared(yval, pred), rmse(yval, pred), None
    except Exception as exc:  # a failing grid point is disqualified, not fatal
        return None, None, f"{type(exc).__name__}: {exc}"


def _map(fn, units, jobs):
    if jobs > 1 and len(units) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, units))
    return [fn(u) for u in units]


def grid_search(X, y, grid, k=10, seed=0, mode="none", n_components=DEFAULT_COMPONENTS, jobs=1,
                base_params=None):
    """Exhaustive grid search scored by mean k-fold cross-validated R^2.

    Preprocessing is refitted on the training folds of every split. Ties on
    mean R^2 go to the lower mean RMSE, then to the earlier grid point.
    Returns ``(best_params, cv_table)``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    kind = canonical_kind(grid.kind)
    spec = GridSpec(kind, validate_grid(kind, grid.grid))
    folds = kfold_split(X.shape[0], k, rng.derive_seed(seed, rng.STREAM_CV, "folds"))
    points = [dict(base_params or {}, **p) for p in spec.points()]
    units = []
    for params in points:
        for f, val_idx in enumerate(folds):
            train_idx = np.concatenate([folds[g] for g in range(k) if g != f])
            units.append((kind, params, X, y, train_idx, val_idx, mode, n_components,
                          rng.derive_seed(seed, rng.STREAM_CV, "fold", f)))
    results = _map(_cv_unit, units, jobs)
    table = []
    for i, params in enumerate(points):
        chunk = results[i * k:(i + 1) * k]
        errors = [e for _, _, e in chunk if e is not None]
        row = {"point": i, "params": params, "fold_sizes": [int(len(f)) for f in folds]}
        if errors:
            row.update(mean_r2=None, std_r2=None, mean_rmse=None, fold_r2=None, error=errors[0])
        else:
            r2 = np.array([c[0] for c in chunk])
            row.update(mean_r2=float(r2.mean()), std_r2=float(r2.std()),
                       mean_rmse=float(np.mean([c[1] for c in chunk])), fold_r2=r2.tolist(), error=None)
        table.append(row)
    valid = [r for r in table if r["error"] is None]
    if not valid:
        raise ExperimentError(f"every grid point failed; first error: {table[0]['error']}")
    best = min(valid, key=lambda r: (-r["mean_r2"], r["mean_rmse"], r["point"]))
    return dict(best["params"]), table


@dataclass
class ExperimentConfig:
    model: str = "et"
    mode: str = "none"
    params: dict = field(default_factory=dict)
    grid: Optional[dict] = None
    train_count: int = 641
    test_count: int = 691
    seeds: tuple = DEFAULT_SEEDS
    resplit_per_seed: bool = True
    split_seed: int = 0
    cv_folds: int = 10
    n_components: int = DEFAULT_COMPONENTS
    fit_on_all: bool = False
    hist_bins: int = 20
    jobs: int = 1

    def __post_init__(self):
        self.model = canonical_kind(self.model)
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if self.mode not in MODES:
            raise ValueError(f"unknown preprocessing mode {self.mode!r}; choose from {MODES}")
        if self.grid is not None:
            self.grid = validate_grid(self.model, self.grid)
        make_model(self.model, self.params)  # rejects unknown/invalid hyperparameters early

    def to_dict(self):
        out = asdict(self)
        out["seeds"] = list(self.seeds)
        del out["jobs"]  # scheduling must not change the report
        return out


@dataclass
class SeedRun:
    seed: int
    params: dict
    train: dict
    test: dict
    y_true: np.ndarray
    y_pred: np.ndarray
    importances: Optional[np.ndarray]
    model: object
    preprocessor: object
    cv_table: Optional[list] = None


def _metrics_dict(y, pred, state, y_scaled=None, pred_scaled=None):
    out = {"r_squared": r_squared(y, pred), "rmse_pct": rmse(y, pred), "n": int(y.size)}
    if state.mode == "scaling":
        out["rmse_scaled"] = rmse(y_scaled, pred_scaled)
    return out


def _run_seed(args):
    config, X, y, seed = args
    stage = "split"
    try:
        split_seed = rng.derive_seed(seed, rng.STREAM_SPLIT) if config.resplit_per_seed else config.split_seed
        perm = rng.permutation(X.shape[0], split_seed)
        tr, te = perm[:config.train_count], perm[config.train_count:]
        stage = "preprocess"
        state, Xtr, ytr, Xte, yte = apply_preprocessing(config.mode, X[tr], y[tr], X[te], y[te],
                                                        config.n_components, config.fit_on_all)
        params = dict(config.params)
        cv_table = None
        if config.grid is not None:
            stage = "grid_search"
            params, cv_table = grid_search(X[tr], y[tr], GridSpec(config.model, config.grid), config.cv_folds,
                                           rng.derive_seed(seed, rng.STREAM_CV), config.mode,
                                           config.n_components, base_params=config.params)
        stage = "fit"
        model = make_model(config.model, params, rng.derive_seed(seed, rng.STREAM_MODEL)).fit(Xtr, ytr)
        stage = "predict"
        ptr_s, pte_s = model.predict(Xtr), model.predict(Xte)
        ptr, pte = state.inverse_target(ptr_s), state.inverse_target(pte_s)
        train = _metrics_dict(y[tr], ptr, state, ytr, ptr_s)
        test = _metrics_dict(y[te], pte, state, yte, pte_s)
        imp = model.feature_importances() if has_importances(model) else None
        return SeedRun(seed, model.params, train, test, y[te], pte, imp, model, state, cv_table)
    except Exception as exc:
        raise ExperimentError(f"seed {seed}, stage {stage}: {type(exc).__name__}: {exc}") from exc


def run_experiment(config, dataset):
    """Split, preprocess, fit and score once per seed; returns ``(report, runs)``."""
    X, y = assemble_features(dataset)
    SplitSpec(config.train_count, config.test_count)
    if config.train_count + config.test_count != X.shape[0]:
        raise ExperimentError(f"split counts {config.train_count}+{config.test_count} "
                              f"do not sum to dataset size {X.shape[0]}")
    runs = _map(_run_seed, [(config, X, y, s) for s in config.seeds], config.jobs)
    return build_report(config, runs), runs


def _aggregate(values):
    v = np.array(values, dtype=float)
    return {"mean": float(v.mean()), "std": float(v.std(ddof=1)) if v.size > 1 else 0.0}


def build_report(config, runs):
    per_seed = [{"seed": r.seed, "params": r.params, "train": r.train, "test": r.test} for r in runs]
    aggregate = {}
    for subset in ("train", "test"):
        aggregate[subset] = {key: _aggregate([r.__dict__[subset][key] for r in runs])
                             for key in runs[0].test if key != "n"}
    report = {
        "schema": REPORT_SCHEMA,
        "config": config.to_dict(),
        "per_seed": per_seed,
        "aggregate": aggregate,
        "predictions": [{"seed": r.seed, "y_true": r.y_true.tolist(), "y_pred": r.y_pred.tolist()} for r in runs],
    }
    if runs[0].importances is not None:
        mean_imp = np.mean([r.importances for r in runs], axis=0)
        total = mean_imp.sum()
        report["importances"] = {
            "per_seed": [r.importances.tolist() for r in runs],
            "mean": (mean_imp / total if total > 0 else mean_imp).tolist(),
        }
    counts, edges = prediction_histogram2d(runs[0].y_true, runs[0].y_pred, config.hist_bins)
    report["hist2d"] = {"seed": runs[0].seed, "edges": edges.tolist(), "counts": counts.tolist()}
    if runs[0].cv_table is not None:
        report["cv_tables"] = [{"seed": r.seed, "table": r.cv_table} for r in runs]
    return report


def prediction_histogram2d(y_true, y_pred, n_bins):
    """Square 2-d histogram of (truth, prediction) on shared equal-width edges.

    ``counts[i, j]`` holds points with truth in bin ``i`` and prediction in bin ``j``.
    """
    y_true = np.asarray(y_true, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float)
    if y_true.shape != y_pred.shape:
        raise ValueError("y_true and y_pred differ in length")
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    lo = min(y_true.min(), y_pred.min())
    hi = max(y_true.max(), y_pred.max())
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.linspace(lo, hi, n_bins + 1)
    counts, _, _ = np.histogram2d(y_true, y_pred, bins=[edges, edges])
    return counts.astype(np.int64), edges


def feature_labels(n_features, band_axis=None):
    if band_axis is not None and n_features == band_axis.wavelengths.size + 1:
        return band_axis.labels()
    return [f"pc{k + 1}" for k in range(n_features)]


def importance_rows(importances, band_axis=None):
    labels = feature_labels(len(importances), band_axis)
    return [(i, labels[i], float(v)) for i, v in enumerate(importances)]


def importance_spectrum_export(importances, band_axis, mean_spectrum, std_spectrum):
    """Rows of (wavelength or "LWIR", mean, standard deviation, importance).

    ``mean_spectrum``/``std_spectrum`` carry the 115 band statistics followed
    by the LWIR temperature statistics.
    """
    n = band_axis.wavelengths.size + 1
    if not (len(importances) == len(mean_spectrum) == len(std_spectrum) == n):
        raise ValueError(f"importances, mean and std must all have {n} entries")
    labels = band_axis.labels()
    return [(labels[i], float(mean_spectrum[i]), float(std_spectrum[i]), float(importances[i]))
            for i in range(n)]


def _write_csv(path, header, rows):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def write_importances_csv(importances, path, band_axis=None):
    _write_csv(path, ["feature_index", "wavelength_nm_or_LWIR", "importance"], importance_rows(importances, band_axis))


def write_spectrum_csv(rows, path):
    _write_csv(path, ["wavelength_nm_or_LWIR", "mean", "std", "importance"], rows)


def write_cv_table(table, path):
    keys = sorted({k for row in table for k in row["params"]})
    rows = [[row["point"]] + [json.dumps(row["params"].get(k)) for k in keys]
            + [row["mean_r2"], row["std_r2"], row["mean_rmse"], row["error"] or ""] for row in table]
    _write_csv(path, ["point"] + keys + ["mean_r2", "std_r2", "mean_rmse", "error"], rows)


def write_report(report, outdir, band_axis=None):
    """Write report.json plus the flat CSV summaries into ``outdir``."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "report.json").write_text(dumps(report) + "\n", encoding="utf-8")
    metric_keys = [k for k in report["per_seed"][0]["test"] if k != "n"]
    rows = [[e["seed"]] + [e[s][k] for s in ("train", "test") for k in metric_keys] + [e["test"]["n"]]
            for e in report["per_seed"]]
    _write_csv(outdir / "per_seed_metrics.csv",
               ["seed"] + [f"{s}_{k}" for s in ("train", "test") for k in metric_keys] + ["n_test"], rows)
    if "cv_tables" in report:
        table = [dict(row, point=f"{t['seed']}:{row['point']}") for t in report["cv_tables"] for row in t["table"]]
        write_cv_table(table, outdir / "cv_table.csv")
    if "importances" in report:
        write_importances_csv(report["importances"]["mean"], outdir / "importances.csv", band_axis)
    h = report["hist2d"]
    edges = h["edges"]
    _write_csv(outdir / "hist2d.csv", ["true_left", "true_right", "pred_left", "pred_right", "count"],
               [(float(edges[i]), float(edges[i + 1]), float(edges[j]), float(edges[j + 1]), h["counts"][i][j])
                for i in range(len(edges) - 1) for j in range(len(edges) - 1)])
