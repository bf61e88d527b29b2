"""Command-line interface.

Option values are resolved as: command-line flag, then the ``--config`` JSON
file (keys are the long option names with dashes or underscores), then the
built-in default. Exit status is 0 on success, 1 for user or data errors and
2 for internal errors.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .base import FitError, HyperparameterError
from .dataset import (DataError, SynthConfig, assemble_features, generate_synthetic, load_csv,
                      target_histogram, write_csv, write_histogram_csv)
from .evaluation import (ExperimentConfig, ExperimentError, GridSpec, grid_search, importance_spectrum_export,
                         r_squared, rmse, run_experiment, write_cv_table, write_importances_csv, write_report,
                         write_spectrum_csv)
from .models import (DEFAULT_GRIDS, REGISTRY, ModelFileError, canonical_kind, dumps, has_importances, load_model,
                     save_model)
from .preprocess import MODES, PreprocessError, PreprocessorState

log = logging.getLogger("soilspec")

REFERENCE_TRAIN, REFERENCE_TOTAL = 641, 1332


class UsageError(ValueError):
    pass


USER_ERRORS = (UsageError, DataError, HyperparameterError, PreprocessError, ModelFileError, ExperimentError,
               FitError, OSError, ValueError)


def _model_defaults_epilog():
    lines = ["model hyperparameter defaults (override with --param KEY=VALUE):"]
    for kind, cls in REGISTRY.items():
        items = "; ".join(f"{k}={p.default!r}" for k, p in cls.PARAMS.items()) or "(none)"
        lines.append(f"  {kind:9s} {items}")
    return "\n".join(lines)


class _Builder:
    """Registers options with ``default=None`` so config-file values can slot in between."""

    def __init__(self, parser, defaults):
        self.parser = parser
        self.defaults = defaults

    def add(self, *flags, default=None, help="", **kw):
        action = self.parser.add_argument(*flags, default=None, help=f"{help} (default: {default})", **kw)
        self.defaults[action.dest] = default
        return action


def build_parser():
    parser = argparse.ArgumentParser(prog="soilspec", description="Soil-moisture regression from VNIR + LWIR data.",
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, help):
        p = sub.add_parser(name, help=help, description=help, epilog=_model_defaults_epilog(),
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        p.set_defaults(_defaults={})
        b = _Builder(p, p.get_default("_defaults"))
        b.add("--config", help="JSON file with option values")
        b.add("-o", "--output", help="output directory", default=".")
        b.add("-v", "--verbose", action="store_true", help="log progress", default=False)
        return p, b

    _, b = command("train", "Run the seeded train/test experiment and write models and reports.")
    b.add("-i", "--input", help="dataset CSV")
    b.add("--model", help=f"model kind {sorted(REGISTRY)}", default="et")
    b.add("--preprocess", choices=MODES, help="preprocessing step", default="none")
    b.add("--param", action="append", metavar="KEY=VALUE", help="hyperparameter override, repeatable", default=[])
    b.add("--grid", help="JSON grid file; runs 10-fold grid search on each training subset", default=None)
    b.add("--seeds", type=int, help="number of seeds", default=7)
    b.add("--seed", type=int, help="first seed; seeds are seed, seed+1, ...", default=0)
    b.add("--train-count", type=int, help="training subset size (None = 641/1332 of the data)", default=None)
    b.add("--fixed-split", action="store_true", help="reuse one split for all seeds", default=False)
    b.add("--split-seed", type=int, help="seed of the fixed split", default=0)
    b.add("--fit-on-all", action="store_true", help="fit preprocessing on train+test", default=False)
    b.add("--n-components", type=int, help="PCA components", default=20)
    b.add("--folds", type=int, help="cross-validation folds", default=10)
    b.add("--hist-bins", type=int, help="bins of the 2-d prediction histogram", default=20)
    b.add("--jobs", type=int, help="parallel worker processes", default=1)

    _, b = command("grid-search", "10-fold cross-validated grid search on a training file.")
    b.add("-i", "--input", help="training CSV")
    b.add("--model", help=f"model kind {sorted(REGISTRY)}", default="et")
    b.add("--preprocess", choices=MODES, help="preprocessing step", default="none")
    b.add("--param", action="append", metavar="KEY=VALUE", help="fixed hyperparameter, repeatable", default=[])
    b.add("--grid", help="JSON grid file (None = built-in grid of the model)", default=None)
    b.add("--folds", type=int, help="cross-validation folds", default=10)
    b.add("--seed", type=int, help="fold-shuffle seed", default=0)
    b.add("--n-components", type=int, help="PCA components", default=20)
    b.add("--jobs", type=int, help="parallel worker processes", default=1)

    _, b = command("importance", "Export feature importances and spectrum plot data of an ensemble.")
    b.add("--model-file", help="fitted ensemble model JSON")
    b.add("-i", "--input", help="dataset CSV for the mean/std spectrum")

    _, b = command("synth", "Write a synthetic dataset CSV.")
    b.add("--n", type=int, help="number of samples", default=1332)
    b.add("--seed", type=int, help="generator seed", default=0)
    b.add("--noise", type=float, help="scale of all noise terms", default=1.0)
    b.add("--moisture-min", type=float, help="lowest soil moisture in percent", default=8.0)
    b.add("--moisture-max", type=float, help="highest soil moisture in percent", default=28.0)
    b.add("--target-noise", type=float, help="target noise sd in percentage points", default=1.5)
    b.add("--hist-bins", type=int, help="bins of the target histogram", default=20)

    _, b = command("evaluate", "Score a saved model on a CSV file.")
    b.add("--model-file", help="fitted model JSON")
    b.add("--preprocessor", help="preprocessor state JSON (None = no preprocessing)", default=None)
    b.add("-i", "--input", help="test CSV")
    return parser


def resolve_options(parser, argv):
    args = parser.parse_args(argv)
    values = dict(args._defaults)
    if args.config:
        try:
            cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config file {args.config}: {exc}") from exc
        for key, value in cfg.items():
            dest = key.replace("-", "_")
            if dest not in values:
                raise UsageError(f"unknown config key {key!r} for command {args.command!r}")
            values[dest] = value
    for key, value in vars(args).items():
        if key in values and value is not None:
            values[key] = value
    values["command"] = args.command
    return argparse.Namespace(**values)


def _require(opts, *names):
    for name in names:
        if getattr(opts, name) in (None, ""):
            raise UsageError(f"--{name.replace('_', '-')} is required")


def parse_params(items):
    """``KEY=VALUE`` strings -> dict; values parsed as JSON when possible."""
    if isinstance(items, dict):
        return dict(items)
    out = {}
    for item in items or []:
        if "=" not in item:
            raise UsageError(f"--param expects KEY=VALUE, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            out[key.strip()] = json.loads(raw)
        except json.JSONDecodeError:
            out[key.strip()] = raw
    return out


def load_grid(path, kind):
    if path is None:
        return dict(DEFAULT_GRIDS[kind])
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read grid file {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise UsageError("grid file must hold a JSON object")
    if "grid" in data:
        if "model" in data and canonical_kind(data["model"]) != kind:
            raise UsageError(f"grid file is for model {data['model']!r}, not {kind!r}")
        data = data["grid"]
    return data


def _write_json(path, obj):
    Path(path).write_text(dumps(obj) + "\n", encoding="utf-8")


def cmd_train(opts):
    _require(opts, "input")
    kind = canonical_kind(opts.model)
    dataset = load_csv(opts.input)
    n = len(dataset)
    train_count = opts.train_count if opts.train_count is not None else round(n * REFERENCE_TRAIN / REFERENCE_TOTAL)
    if opts.seeds < 1:
        raise UsageError("--seeds must be >= 1")
    config = ExperimentConfig(
        model=kind, mode=opts.preprocess, params=parse_params(opts.param),
        grid=load_grid(opts.grid, kind) if opts.grid else None,
        train_count=train_count, test_count=n - train_count,
        seeds=tuple(range(opts.seed, opts.seed + opts.seeds)), resplit_per_seed=not opts.fixed_split,
        split_seed=opts.split_seed, cv_folds=opts.folds, n_components=opts.n_components,
        fit_on_all=opts.fit_on_all, hist_bins=opts.hist_bins, jobs=opts.jobs)
    log.info("training %s (%s) on %d samples, seeds %s", kind, opts.preprocess, n, list(config.seeds))
    report, runs = run_experiment(config, dataset)

    out = Path(opts.output)
    write_report(report, out, dataset.band_axis)
    models = out / "models"
    models.mkdir(exist_ok=True)
    for run in runs:
        save_model(run.model, models / f"model_seed{run.seed}.json")
        _write_json(models / f"preprocessor_seed{run.seed}.json", run.preprocessor.to_dict())
    agg = report["aggregate"]["test"]
    print(f"{kind} [{opts.preprocess}] test R2 {agg['r_squared']['mean']:.4f} +- {agg['r_squared']['std']:.4f}, "
          f"RMSE {agg['rmse_pct']['mean']:.4f} over {len(runs)} seeds")
    return 0


def cmd_grid_search(opts):
    _require(opts, "input")
    kind = canonical_kind(opts.model)
    grid = load_grid(opts.grid, kind)
    base = parse_params(opts.param)
    dataset = load_csv(opts.input)
    X, y = assemble_features(dataset)
    best, table = grid_search(X, y, GridSpec(kind, grid), opts.folds, opts.seed, opts.preprocess,
                              opts.n_components, opts.jobs, base_params=base)
    out = Path(opts.output)
    out.mkdir(parents=True, exist_ok=True)
    write_cv_table(table, out / "cv_table.csv")
    _write_json(out / "best_params.json", {"model": kind, "preprocess": opts.preprocess, "params": best,
                                           "folds": opts.folds, "fold_sizes": table[0]["fold_sizes"]})
    print(f"best {kind} hyperparameters: {json.dumps(best, sort_keys=True)}")
    return 0


def cmd_importance(opts):
    _require(opts, "model_file", "input")
    model = load_model(opts.model_file)
    if not has_importances(model):
        raise UsageError(f"model kind {model.kind!r} has no importances")
    dataset = load_csv(opts.input)
    X, _ = assemble_features(dataset)
    imp = model.feature_importances()
    if imp.size != X.shape[1]:
        raise UsageError(f"model has {imp.size} input features; spectrum export needs the {X.shape[1]} raw features")
    rows = importance_spectrum_export(imp, dataset.band_axis, X.mean(axis=0), X.std(axis=0, ddof=1))
    out = Path(opts.output)
    out.mkdir(parents=True, exist_ok=True)
    write_importances_csv(imp, out / "importances.csv", dataset.band_axis)
    write_spectrum_csv(rows, out / "spectrum.csv")
    label, *_ = rows[int(np.argmax(imp))]
    print(f"most important feature: {label}")
    return 0


def cmd_synth(opts):
    cfg = SynthConfig(n_samples=opts.n, moisture_min=opts.moisture_min, moisture_max=opts.moisture_max,
                      noise=opts.noise, target_noise_sd=opts.target_noise)
    dataset = generate_synthetic(cfg, opts.seed)
    out = Path(opts.output)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(dataset, out / "synthetic.csv")
    edges, counts = target_histogram(dataset, opts.hist_bins)
    write_histogram_csv(edges, counts, out / "target_histogram.csv")
    print(f"wrote {len(dataset)} samples to {out / 'synthetic.csv'}")
    return 0


def cmd_evaluate(opts):
    _require(opts, "model_file", "input")
    model = load_model(opts.model_file)
    state = PreprocessorState()
    if opts.preprocessor:
        try:
            state = PreprocessorState.from_dict(json.loads(Path(opts.preprocessor).read_text(encoding="utf-8")))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise UsageError(f"cannot parse preprocessor file {opts.preprocessor}: {exc}") from exc
    X, y = assemble_features(load_csv(opts.input))
    Xt, yt = state.transform(X, y)
    if Xt.shape[1] != model.n_features_:
        raise UsageError(f"model expects {model.n_features_} features but the data provide {Xt.shape[1]}")
    pred_s = model.predict(Xt)
    pred = state.inverse_target(pred_s)
    metrics = {"model": model.kind, "preprocess": state.mode, "n": int(y.size),
               "r_squared": r_squared(y, pred), "rmse_pct": rmse(y, pred)}
    if state.mode == "scaling":
        metrics["rmse_scaled"] = rmse(yt, pred_s)
        metrics["target_range"] = state.scaler.target_range
    out = Path(opts.output)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "metrics.json", metrics)
    print(f"R2 {metrics['r_squared']:.4f}, RMSE {metrics['rmse_pct']:.4f}")
    return 0


COMMANDS = {"train": cmd_train, "grid-search": cmd_grid_search, "importance": cmd_importance,
            "synth": cmd_synth, "evaluate": cmd_evaluate}


def main(argv=None):
    parser = build_parser()
    try:
        opts = resolve_options(parser, argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    logging.basicConfig(level=logging.INFO if opts.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[opts.command](opts)
    except USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
